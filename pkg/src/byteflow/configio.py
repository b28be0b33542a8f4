"""Flat key-value config files: UTF-8 ``key = value`` lines, # comments.

Every ModelConfig and TrainConfig field is nameable; command-line flags
override file values.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .strategies import strategy_from_str
from .trainer import TrainConfig

_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def parse_file(path: str | Path) -> dict[str, str]:
    raw: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def _coerce(key: str, value: str):
    if key == "chunker":
        return strategy_from_str(value)
    if key == "betas":
        parts = [p for p in value.replace("(", "").replace(")", "").split(",") if p.strip()]
        if len(parts) != 2:
            raise ConfigError(f"betas needs two values, got {value!r}")
        return (float(parts[0]), float(parts[1]))
    field = _MODEL_FIELDS.get(key) or _TRAIN_FIELDS.get(key)
    if field is None:
        raise ConfigError(f"unknown config key {key!r}")
    if field.type == "int":
        return int(value)
    if field.type == "float":
        return float(value)
    if field.type == "str":
        return value
    raise ConfigError(f"cannot parse value for {key!r}")


def build_configs(
    file_values: dict[str, str] | None = None,
    overrides: dict[str, object] | None = None,
) -> tuple[ModelConfig, TrainConfig]:
    """Merge file values and typed overrides into the two config objects."""
    model_kwargs: dict[str, object] = {}
    train_kwargs: dict[str, object] = {}
    for key, text in (file_values or {}).items():
        value = _coerce(key, text)
        if key in _MODEL_FIELDS:
            model_kwargs[key] = value
        else:
            train_kwargs[key] = value
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _MODEL_FIELDS:
            model_kwargs[key] = value
        elif key in _TRAIN_FIELDS:
            train_kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
