"""Exception hierarchy shared by every subpackage.

The CLI maps these onto process exit codes, so library code raises the most
specific class rather than a bare ``ValueError``.
"""


class SteinError(Exception):
    exit_code = 1


class ConfigError(SteinError, ValueError):
    """Invalid hyperparameters, inconsistent channel/group arithmetic, bad shapes for a config."""

    exit_code = 2


class DimensionError(ConfigError):
    """Operands whose shapes do not agree."""


class UsageError(SteinError, RuntimeError):
    """An API called in a state it does not support (e.g. backward on a non-scalar)."""

    exit_code = 2


class DataError(SteinError, ValueError):
    """Malformed input data: non-binary labels, orphaned dataset files, size mismatches."""

    exit_code = 3


class IngestionError(DataError):
    pass


class NumericError(SteinError, ArithmeticError):
    """Non-finite values where finite ones are required."""

    exit_code = 4


class TrainingError(SteinError, RuntimeError):
    exit_code = 4
