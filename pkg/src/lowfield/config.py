"""Declarative experiment configuration: one YAML file per experiment.

Command-line flags override file values; the resolved merge is archived
in the output directory so every run can be replayed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import yaml

from .degrade import SimulationParams
from .nets import DAEConfig, DiscriminatorConfig, GeneratorConfig
from .train import TrainConfig
from .volume import PhantomSpec

__all__ = ["ExperimentConfig", "load_config", "save_config", "resolve_output_dir"]

OUTPUT_ROOT_ENV = "LOWFIELD_OUTPUT_ROOT"


@dataclass(frozen=True)
class DataConfig:
    low_dir: str | None = None
    high_dir: str | None = None
    reference_dir: str | None = None
    phantom_count: int = 20
    phantom: PhantomSpec = field(default_factory=PhantomSpec)


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: str = "runs/experiment"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    simulation: SimulationParams = field(default_factory=SimulationParams)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    dae: DAEConfig = field(default_factory=DAEConfig)
    training: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.output_dir:
            raise ValueError("output_dir must be nonempty")


_SECTIONS = {
    "data": DataConfig,
    "simulation": SimulationParams,
    "generator": GeneratorConfig,
    "discriminator": DiscriminatorConfig,
    "dae": DAEConfig,
    "training": TrainConfig,
}

# fields that YAML parses as lists but the dataclasses want as tuples
_TUPLE_FIELDS = {
    "grid_size",
    "intensity_range",
    "spacing",
    "target_spacing",
    "patch_size",
    "betas",
}


def _tuplify(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if k in _TUPLE_FIELDS and isinstance(v, list):
            v = tuple(v)
        elif isinstance(v, dict):
            v = _tuplify(v)
        out[k] = v
    return out


def _build_section(cls, raw: dict):
    raw = _tuplify(dict(raw))
    if cls is DataConfig and isinstance(raw.get("phantom"), dict):
        raw["phantom"] = PhantomSpec(**raw["phantom"])
    return cls(**raw)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Load an experiment config from YAML, with flag overrides winning over file values.

    `overrides` maps dotted keys (e.g. "training.epochs", "seed") to values.
    """
    raw: dict = {}
    if path is not None:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a mapping, got {type(raw).__name__}")

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        target = raw
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value

    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(cls, raw.pop(name))
    for name in ("output_dir", "seed"):
        if name in raw:
            kwargs[name] = raw.pop(name)
    if raw:
        raise ValueError(f"unknown config keys: {sorted(raw)}")
    return ExperimentConfig(**kwargs)


def save_config(cfg: ExperimentConfig, path) -> None:
    """Archive the fully resolved config as YAML."""
    with open(path, "w") as f:
        yaml.safe_dump(asdict(cfg), f, sort_keys=False)


def resolve_output_dir(cfg_or_path) -> str:
    """Apply the output-root env override to relative output paths."""
    path = cfg_or_path.output_dir if isinstance(cfg_or_path, ExperimentConfig) else str(cfg_or_path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path
