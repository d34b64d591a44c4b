"""Experiment configuration: one INI file, command-line flags override it.

Example::

    [experiment]
    dataset = data/
    variant = CaloriNet
    output = runs/calorinet
    seed = 7
    sample_stride = 30
    augment_enabled = true

    [scales]
    T = 1000
    N = 4

    [train]
    epochs = 1000
    learning_rate = 1e-4

    [augment]
    rotation_deg = 5
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from io import StringIO
from typing import Optional

from .augment import AugmentConfig
from .models import BranchHyper
from .nn.train import TrainConfig
from .silhouette import TemporalScaleConfig

SEED_ENV = "CALORINET_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: Optional[str] = None
    variant: str = "CaloriNet"
    output: str = "runs"
    seed: Optional[int] = None
    scales: TemporalScaleConfig = TemporalScaleConfig()
    accel_len: Optional[int] = None  # None: tie to the longest silhouette window
    sample_stride: int = 30
    val_fraction: float = 0.1
    exclude_warmup: bool = False
    augment_enabled: bool = True
    augment: AugmentConfig = AugmentConfig()
    train: TrainConfig = field(default_factory=TrainConfig)
    hyper: BranchHyper = BranchHyper()

    def resolved_seed(self) -> int:
        if self.seed is not None:
            return int(self.seed)
        env = os.environ.get(SEED_ENV)
        if env is None or not env.strip():
            raise ConfigError(f"no seed given: pass --seed, set it in the config, or export {SEED_ENV}")
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None

    def validate(self) -> "ExperimentConfig":
        try:
            self.scales.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.sample_stride < 1:
            raise ConfigError("sample_stride must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.accel_len is not None and self.accel_len < 1:
            raise ConfigError("accel_len must be >= 1")
        return self


_SECTIONS = {
    "experiment": None,
    "scales": "scales",
    "train": "train",
    "augment": "augment",
    "model": "hyper",
}


def _coerce(value: str, current, name, nullable=False):
    if nullable and value.strip().lower() in ("none", ""):
        return None
    try:
        if isinstance(current, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            return tuple(int(v) for v in value.split(","))
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r}") from None
    if value.strip().lower() in ("none", ""):
        return None
    return value.strip()


_EXPERIMENT_TYPES = {"seed": int, "accel_len": int, "sample_stride": int,
                     "val_fraction": float, "exclude_warmup": bool, "augment_enabled": bool}


def _apply(obj, key, raw, where):
    names = {f.name for f in dataclasses.fields(obj)}
    if key not in names:
        raise ConfigError(f"unknown option {where}.{key}")
    current = getattr(obj, key)
    nullable = current is None
    if current is None and where == "experiment" and key in _EXPERIMENT_TYPES:
        current = _EXPERIMENT_TYPES[key]()
    if key == "target_loss" and current is None:
        current = 0.0
    value = _coerce(raw, current, f"{where}.{key}", nullable)
    if dataclasses.is_dataclass(obj) and getattr(obj, "__dataclass_params__").frozen:
        return dataclasses.replace(obj, **{key: value})
    setattr(obj, key, value)
    return obj


def apply_overrides(cfg: ExperimentConfig, section: str, items: dict) -> ExperimentConfig:
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    attr = _SECTIONS[section]
    for key, raw in items.items():
        if attr is None:
            cfg = _apply(cfg, key, raw, section)
        else:
            setattr(cfg, attr, _apply(getattr(cfg, attr), key, raw, section))
    return cfg


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read an INI file (optional) then apply ``{section: {key: text}}`` overrides."""
    cfg = ExperimentConfig(train=TrainConfig())
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in parser.sections():
            cfg = apply_overrides(cfg, section, dict(parser.items(section)))
    for section, items in (overrides or {}).items():
        cfg = apply_overrides(cfg, section, items)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text capturing every setting (round-trips through load_config)."""
    parser = configparser.ConfigParser()
    parser.optionxform = str

    def put(section, obj, skip=()):
        parser[section] = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if f.name in skip or dataclasses.is_dataclass(v):
                continue
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            parser[section][f.name] = "none" if v is None else str(v)

    put("experiment", cfg)
    put("scales", cfg.scales)
    put("train", cfg.train, skip=("augment", "seed"))
    put("augment", cfg.augment)
    put("model", cfg.hyper)
    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()
