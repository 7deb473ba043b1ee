"""Change detection with spatial-temporal interaction and DCT token mixing, on a numpy autodiff engine."""

__version__ = "0.1.0"
