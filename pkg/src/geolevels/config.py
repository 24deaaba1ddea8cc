"""Run configuration: YAML/JSON files mapped onto the stage dataclasses with strict key checks."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .encfeat import EncoderConfig
from .forest import ForestConfig
from .hyperlocal import OrdinalConfig
from .scaling import PipelineConfig
from .synthworld import INDICATORS, WorldSpec, WorldSpecError


class ConfigError(ValueError):
    pass


@dataclass
class HarnessConfig:
    repetitions: int = 100
    train_fraction: float = 0.8
    share_stages: bool = True
    train_fractions: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    robustness_repetitions: int = 10
    zipf_quantile: float = 0.75
    factor_mode: str = "district"
    transfer_worlds: tuple[dict, ...] = ()  # world-spec overrides, each with an optional "seed"
    inequality_worlds: tuple[dict, ...] = ()


@dataclass
class RunConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    dataset: str | None = None  # world file written by ``gen``; replaces ``world``
    checkpoint: str | None = None
    indicator: str = "power"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _strict(cls, d, where: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _pipeline(d) -> PipelineConfig:
    d = dict(d or {})
    subs = {"ordinal": OrdinalConfig, "encoder": EncoderConfig, "forest": ForestConfig}
    for key, cls in subs.items():
        sub = d.get(key)
        if key == "ordinal" and isinstance(sub, dict) and "hidden" in sub:
            sub = {**sub, "hidden": tuple(sub["hidden"])}
        d[key] = _strict(cls, sub, f"pipeline.{key}")
    if "members" in d:
        d["members"] = tuple(tuple(m) for m in d["members"])
    return _strict(PipelineConfig, d, "pipeline")


def world_spec(d, where: str = "world") -> WorldSpec:
    try:
        spec = WorldSpec.from_dict(d or {})
        spec.validate()
        return spec
    except (WorldSpecError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from None


def from_dict(d: dict, base_dir: str | os.PathLike = ".") -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    h = dict(d.get("harness") or {})
    for key in ("train_fractions", "transfer_worlds", "inequality_worlds"):
        if key in h:
            h[key] = tuple(h[key])
    harness = _strict(HarnessConfig, h, "harness")
    if harness.factor_mode not in ("district", "tile"):
        raise ConfigError(f"harness.factor_mode must be district or tile, got {harness.factor_mode!r}")
    for k, w in enumerate(harness.transfer_worlds + harness.inequality_worlds):
        world_spec({x: v for x, v in w.items() if x != "seed"}, f"harness world {k}")
    indicator = d.get("indicator", "power")
    if indicator not in INDICATORS:
        raise ConfigError(f"unknown indicator {indicator!r}; known: {INDICATORS}")
    paths = {}
    for key in ("dataset", "checkpoint"):
        p = d.get(key)
        if p is not None:
            p = Path(base_dir) / p
            if not p.is_file():
                raise FileNotFoundError(f"{key} {str(p)!r} does not exist")
            paths[key] = str(p)
    return RunConfig(world_spec(d.get("world")), paths.get("dataset"), paths.get("checkpoint"), indicator,
                     _pipeline(d.get("pipeline")), harness)


def load(path) -> RunConfig:
    """Parse a YAML or JSON config; relative file references resolve against its directory."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: {e}") from None
    return from_dict(doc or {}, path.parent)
