"""Strict JSON run configuration: sections ``model``, ``loss``, ``synth`` and ``run``."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from ..errors import ConfigError
from ..model import LossConfig, ModelConfig
from .data import SynthSpec
from .train import RunConfig

SECTIONS = {"model": ModelConfig, "loss": LossConfig, "synth": SynthSpec, "run": RunConfig}


@dataclass
class Config:
    model: ModelConfig
    loss: LossConfig
    synth: SynthSpec
    run: RunConfig


def _build(section: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)} (allowed: {', '.join(sorted(known))})")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"section {section!r}: {e}") from e


def config_from_dict(raw: dict) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)} (allowed: {', '.join(SECTIONS)})")
    return Config(**{name: _build(name, cls, raw.get(name, {})) for name, cls in SECTIONS.items()})


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict] = None) -> Config:
    """Reads ``path`` (or defaults when None) and applies ``{section: {key: value}}`` overrides."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    for section, vals in (overrides or {}).items():
        raw.setdefault(section, {})
        if not isinstance(raw[section], dict):
            raise ConfigError(f"section {section!r} must be an object")
        raw[section].update(vals)
    return config_from_dict(raw)
