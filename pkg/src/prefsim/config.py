"""Experiment configuration: strict schema, presets, YAML/JSON loading, hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import List

import yaml

from .baselines import ADTSchedule, BTConfig
from .encoder import EncoderConfig
from .envs import env_names
from .experiments import METHODS, DataConfig, parse_variant
from .reward import RewardConfig
from .rl import DDPGConfig, IQLConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    window: int = 8

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class FilterConfig:
    n_clean: int = 54
    inject_fraction: float = 0.1
    keep_quantile: float = 0.9


@dataclass
class ShapingConfig:
    weights: List[float] = field(default_factory=lambda: [0.0, 1.0])
    n_preference_trajectories: int = 40
    ddpg: DDPGConfig = field(default_factory=DDPGConfig)


# IQL evaluation in the desk preset: 16 events of 10 episodes over 4000 steps.
DESK_IQL = dict(steps=4000, eval_every=250, eval_episodes=10)
DESK_ENCODER = dict(epochs=300)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    env: str = "LineHopper"
    variant: str = "script"
    method: str = "sara"
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3])
    root_seed: int = 0
    outdir: str = "runs/experiment"
    preset: str = "desk"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(**DESK_ENCODER))
    reward: RewardConfig = field(default_factory=RewardConfig)
    bt: BTConfig = field(default_factory=BTConfig)
    adt: ADTSchedule = field(default_factory=ADTSchedule)
    iql: IQLConfig = field(default_factory=lambda: IQLConfig(**DESK_IQL))
    eval: EvalConfig = field(default_factory=EvalConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    shaping: ShapingConfig = field(default_factory=ShapingConfig)

    def __post_init__(self):
        if self.env not in env_names():
            raise ConfigError(f"unknown env {self.env!r}; have {env_names()}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        try:
            parse_variant(self.variant)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.preset not in ("desk", "paper"):
            raise ConfigError("preset must be 'desk' or 'paper'")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be >= 0")


def _build(cls, data, path="config", base=None):
    """Build dataclass ``cls`` from a mapping on top of ``base`` (default
    instance when omitted), recursing into nested sections; unknown keys fail."""
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    base = base if base is not None else cls()
    unknown = sorted(set(data) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        current = getattr(base, name)
        if is_dataclass(current) and not isinstance(value, type(current)):
            value = _build(type(current), value, f"{path}.{name}", current)
        kwargs[name] = value
    try:
        return replace(base, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def preset_overrides(preset: str) -> dict:
    if preset == "desk":
        return {}
    if preset == "paper":
        return {"encoder": asdict(EncoderConfig.paper()),
                "iql": {"steps": 1_000_000, "eval_every": 5000, "hidden": [256, 256]},
                "bt": {"d_model": 256, "ff_dim": 256, "steps": 10_000, "batch_size": 64}}
    raise ConfigError(f"unknown preset {preset!r}")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def config_from_dict(data: dict, preset: str = None) -> ExperimentConfig:
    """Preset values are applied first; explicit keys in ``data`` win."""
    data = dict(data or {})
    preset = preset or data.get("preset", "desk")
    data["preset"] = preset
    return _build(ExperimentConfig, _merge(preset_overrides(preset), data))


def load_config(path, preset: str = None, **overrides) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    data = _merge(data or {}, {k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data, preset)


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(config: ExperimentConfig) -> dict:
    return _plain(config)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 over the canonical JSON of everything except the output path and
    the seed list, so seed subsets of one experiment share a hash."""
    d = config_to_dict(config)
    d.pop("outdir")
    d.pop("seeds")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def dump_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")
    return path
