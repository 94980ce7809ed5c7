"""Declarative run configuration.

One YAML tree mirrors every module's config dataclass; unknown keys are
rejected with their full path so a typo can never silently fall back to a
default.  The resolved config is echoed into every output artifact.
"""

from __future__ import annotations

import os
import typing
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .encoding import EncodingConfig
from .lif import NetworkConfig
from .sift import SiftConfig
from .training import TrainConfig


class ConfigError(Exception):
    """Bad configuration file or invalid parameter combination."""


@dataclass(frozen=True)
class DatasetConfig:
    n_ok: int = 450
    n_out: int = 150
    base_out: int = 12
    width: int = 128
    height: int = 128
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class BenchConfig:
    warmup: int = 20
    reps: int = 1
    frames: int = 60


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = DatasetConfig()
    sift: SiftConfig = SiftConfig()
    encoding: EncodingConfig = EncodingConfig()
    network: NetworkConfig = NetworkConfig()
    training: TrainConfig = TrainConfig()
    bench: BenchConfig = BenchConfig()


_SECTIONS = {
    "dataset": DatasetConfig,
    "sift": SiftConfig,
    "encoding": EncodingConfig,
    "network": NetworkConfig,
    "training": TrainConfig,
    "bench": BenchConfig,
}


def _coerce(value, target_type, path: str):
    origin = typing.get_origin(target_type)
    if origin is typing.Union:  # Optional[...] fields
        args = [a for a in typing.get_args(target_type) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        args = typing.get_args(target_type)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries")
        return tuple(
            _coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args))
        )
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported config value type")


def _build_section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {path}.{key}")
        kwargs[key] = _coerce(value, known[key], f"{path}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from err


def load_config(path: str | os.PathLike | None = None, seed: int | None = None) -> RunConfig:
    """Load a YAML config (or defaults) and resolve the master seed.

    The top-level seed cascades into training unless the file pins one
    explicitly; a `seed` argument (CLI flag) overrides the file.
    """
    data: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a mapping")
        data = loaded

    sections = {}
    training_has_seed = False
    for key, value in data.items():
        if key == "seed":
            sections["seed"] = _coerce(value, int, "seed")
        elif key in _SECTIONS:
            if key == "training" and isinstance(value, dict):
                training_has_seed = "seed" in value
            sections[key] = _build_section(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"unknown config key: {key}")

    cfg = RunConfig(**sections)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
        training_has_seed = False
    if not training_has_seed:
        cfg = replace(cfg, training=replace(cfg.training, seed=cfg.seed))

    if cfg.encoding.n_steps != cfg.network.n_steps:
        raise ConfigError(
            f"encoding.n_steps ({cfg.encoding.n_steps}) must equal "
            f"network.n_steps ({cfg.network.n_steps})"
        )
    return cfg


def config_echo(cfg: RunConfig) -> dict:
    """Plain-dict rendering for embedding into output artifacts."""
    return asdict(cfg)
