"""Flat key=value run configuration with dotted sections.

Three sections map onto the dataclasses: ``synth.*`` (generator spec),
``train.*`` (optimization), ``loss.*`` (objective weights). Files hold one
``section.key=value`` pair per line; ``#`` starts a comment. Unknown keys
are rejected by name. Values are coerced by the type of the dataclass
default; ``train.traits`` accepts a comma-separated index list.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .data import SyntheticSpec
from .losses import LossWeights
from .training import TrainConfig


class ConfigError(ValueError):
    """Unknown key, malformed line, or unparseable value."""


@dataclass
class RunConfig:
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    def apply_seed(self, seed: int) -> None:
        self.synth.seed = seed
        self.train.seed = seed


def _parse_value(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {target_type.__name__}, got {raw!r}") from None
    return raw


def _field_map(cls) -> dict:
    return {f.name: f for f in fields(cls)}


_SYNTH_FIELDS = _field_map(SyntheticSpec)
_TRAIN_FIELDS = {name: f for name, f in _field_map(TrainConfig).items()
                 if name not in ("weights",)}
_LOSS_FIELDS = _field_map(LossWeights)


def known_keys() -> list:
    keys = [f"synth.{k}" for k in _SYNTH_FIELDS]
    keys += [f"train.{k}" for k in _TRAIN_FIELDS]
    keys += [f"loss.{k}" for k in _LOSS_FIELDS]
    return sorted(keys)


def _assign(cfg: RunConfig, key: str, raw_value: str) -> None:
    if "." not in key:
        raise ConfigError(f"key {key!r} has no section prefix (expected section.name)")
    section, name = key.split(".", 1)
    if section == "synth" and name in _SYNTH_FIELDS:
        target, fld = cfg.synth, _SYNTH_FIELDS[name]
    elif section == "train" and name in _TRAIN_FIELDS:
        target, fld = cfg.train, _TRAIN_FIELDS[name]
    elif section == "loss" and name in _LOSS_FIELDS:
        target, fld = cfg.train.weights, _LOSS_FIELDS[name]
    else:
        raise ConfigError(f"unknown config key {key!r}")
    if name == "traits":
        raw_value = raw_value.strip()
        value = tuple(int(x) for x in raw_value.split(",")) if raw_value else None
        setattr(target, name, value)
        return
    default = fld.default if fld.default is not dataclasses.MISSING else fld.default_factory()
    setattr(target, name, _parse_value(raw_value, type(default), key))


def parse_config_text(text: str, cfg: RunConfig = None) -> RunConfig:
    cfg = cfg if cfg is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        _assign(cfg, key.strip(), value)
    return cfg


def load_config(path: str = None, overrides=()) -> RunConfig:
    """Build a RunConfig from an optional file plus --set overrides."""
    cfg = RunConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            parse_config_text(f.read(), cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _assign(cfg, key.strip(), value)
    return cfg
