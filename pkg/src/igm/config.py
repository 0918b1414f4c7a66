"""Run configuration: a strict TOML-backed dataclass tree.

Unknown keys are rejected, referenced input files must exist at load
time, and relative paths resolve against the run's output directory so
a run directory is self-contained.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .adapter import AdapterConfig
from .data import AugmentationSpec
from .diffusion import ScheduleConfig
from .errors import ConfigError
from .losses import LossWeights
from .network import NetConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    steps: int = 2000
    batch_size: int = 32
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999

    def validate(self) -> None:
        if self.lr <= 0 or self.steps < 1 or self.batch_size < 2:
            raise ConfigError("need lr > 0, steps >= 1, batch_size >= 2")


@dataclass(frozen=True)
class RunConfig:
    train_data: str = "train.igmd"
    val_data: str | None = None
    seed: int = 0
    checkpoint_every: int = 500
    net: NetConfig = field(default_factory=NetConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    aug: AugmentationSpec = field(default_factory=AugmentationSpec)

    def validate(self) -> None:
        self.net.validate()
        self.adapter.validate()
        self.weights.validate()
        self.optim.validate()
        self.aug.validate()
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    def resolve_train_data(self, out_dir: str | Path) -> Path:
        return _resolve(self.train_data, out_dir)

    def resolve_val_data(self, out_dir: str | Path) -> Path | None:
        return _resolve(self.val_data, out_dir) if self.val_data else None


def _resolve(path_str: str, out_dir: str | Path) -> Path:
    path = Path(path_str)
    return path if path.is_absolute() else Path(out_dir) / path


_TUPLE_FIELDS = {"crop_ratio_range"}


def _build_dataclass(cls, table: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key {path}.{unknown[0]!r}")
    kwargs = {}
    for name, value in table.items():
        spec = fields[name]
        nested = spec.default_factory if spec.default_factory is not dataclasses.MISSING else None
        if isinstance(value, dict):
            if nested is None:
                raise ConfigError(f"config key {path}.{name} does not take a table")
            kwargs[name] = _build_dataclass(nested, value, f"{path}.{name}")
        elif name in _TUPLE_FIELDS:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    config = _build_dataclass(RunConfig, raw, "config")
    config.validate()
    return config


def run_config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def run_config_from_dict(raw: dict) -> RunConfig:
    return _build_dataclass(RunConfig, raw, "config")
