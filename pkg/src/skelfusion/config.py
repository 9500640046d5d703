"""Structured run configuration: one YAML/JSON file plus dotted-key overrides.

Layout::

    train:        # TrainConfig, with nested fusion / backbone / hands sections
      epochs: 30
      fusion: {mode: scaled_stack, scale_s: 4}
    experiment:
      max_lrs: [1e-3, 5e-4]
      repeats: 3
      modes: [body_only, scaled_stack]
      families: [windowed_attention]

Unknown keys are rejected and every value is checked against the field type.
"""

from __future__ import annotations

import dataclasses
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import yaml

from .core import ValidationError
from .encode import MODES
from .model import FAMILIES
from .train import DEFAULT_LR_GRID, TrainConfig


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


class ConfigError(ValidationError):
    pass


@dataclass(frozen=True)
class ExperimentSettings:
    max_lrs: tuple = DEFAULT_LR_GRID
    repeats: int = 3
    modes: tuple = ("body_only",)
    families: tuple = ("windowed_attention",)

    def __post_init__(self):
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ConfigError(f"experiment.modes must be a nonempty subset of {MODES}, got {list(self.modes)}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad or not self.families:
            raise ConfigError(f"experiment.families must be a nonempty subset of {FAMILIES}")
        if self.repeats < 1 or not self.max_lrs:
            raise ConfigError("experiment needs at least one learning rate and one repeat")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)

    def to_dict(self) -> dict:
        return {"train": self.train.to_dict(), "experiment": _plain(dataclasses.asdict(self.experiment))}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _type_name(hint) -> str:
    return getattr(hint, "__name__", str(hint))


def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    if origin is Union:
        args = typing.get_args(hint)
        if value is None and type(None) in args:
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _coerce(value, inner, path)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(hint, value, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, str):
            # YAML 1.1 reads "1e-3" as a string
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if hint is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        out = []
        for i, v in enumerate(value):
            if isinstance(v, (dict, list)):
                raise ConfigError(f"{path}[{i}]: nested structures are not allowed")
            if isinstance(v, str) and _NUMBER.match(v):
                v = float(v)
            out.append(v)
        return tuple(out)
    raise ConfigError(f"{path}: unsupported field type {_type_name(hint)}")


def _build(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ValidationError as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


def parse_override(text: str) -> tuple[list[str], Any]:
    """``"train.fusion.mode=scaled_stack"`` -> ``(["train", "fusion", "mode"], "scaled_stack")``."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    parts = key.strip().split(".")
    if any(not p for p in parts):
        raise ConfigError(f"bad key path in override {text!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value in override {text!r}: {e}") from None
    return parts, value


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    out = _plain(data)
    for text in overrides:
        parts, value = parse_override(text)
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {text!r}: {p!r} is not a section")
            node = nxt
        node[parts[-1]] = value
    return out


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_run_config(path=None, overrides: Sequence[str] = (), base: Optional[dict] = None) -> RunConfig:
    """Defaults, then ``base``, then the file at ``path``, then ``overrides``."""
    data = _plain(base or {})
    if path is not None:
        data = _merge(data, read_config_file(path))
    data = apply_overrides(data, overrides)
    return _build(RunConfig, data)


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def dump_run_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
