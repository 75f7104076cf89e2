"""Run configuration: a strict dataclass tree loadable from JSON.

Precedence is command-line flags > config file > dataclass defaults. Unknown
keys anywhere in the tree are a hard error, so typos cannot silently fall
back to defaults. Every CLI command writes the fully resolved tree into its
output directory before doing any work; re-running from that file reproduces
the run bit for bit in single-threaded mode.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import AugmentPolicy, SplitSpec
from .errors import ConfigError
from .model import BackboneConfig
from .pqc import PqcConfig
from .train import OptimConfig


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    pqc: PqcConfig = field(default_factory=PqcConfig)


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    root: str | None = None
    n_per_class: int = 500
    patch_size: int = 64
    channels: int = 1
    expand_positives: int = 0  # offline augmented copies per positive on synth export
    split: SplitSpec = field(default_factory=SplitSpec)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "directory"):
            raise ConfigError(f"data.source must be synthetic or directory, got {self.source!r}")
        if self.source == "directory" and not self.root:
            raise ConfigError("data.root is required when data.source is 'directory'")
        if self.n_per_class < 1:
            raise ConfigError("data.n_per_class must be >= 1")
        if self.expand_positives < 0:
            raise ConfigError("data.expand_positives must be >= 0")


@dataclass(frozen=True)
class RunSection:
    epochs: int = 14
    batch_size: int = 16
    seed: int = 7
    threads: int = 1
    threshold: float = 0.5
    output_dir: str = ""  # empty -> the CLI fills in runs/<command>

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.threads < 1:
            raise ConfigError("run.epochs must be >= 0, batch_size and threads >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("run.threshold must be in (0,1)")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSection = field(default_factory=RunSection)


_TUPLE_FIELDS = {"stage_widths", "blocks_per_stage", "scale_range"}


def _build(cls, payload, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(payload).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {unknown}; "
                          f"valid keys are {sorted(known)}")
    kwargs = {}
    for name, value in payload.items():
        target = _DATACLASS_FIELDS.get((cls, name))
        if target is not None:
            kwargs[name] = _build(target, value, f"{path}.{name}" if path else name)
        elif name in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}")


_DATACLASS_FIELDS = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "optim"): OptimConfig,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "run"): RunSection,
    (ModelConfig, "backbone"): BackboneConfig,
    (ModelConfig, "pqc"): PqcConfig,
    (DataConfig, "split"): SplitSpec,
    (DataConfig, "augment"): AugmentPolicy,
}


def from_dict(payload: dict) -> RunConfig:
    return _build(RunConfig, payload, "")


def to_dict(cfg: RunConfig) -> dict:
    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    return convert(cfg)


def load_file(path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    return from_dict(payload)


def save_file(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")


def apply_overrides(cfg: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Overrides as dotted paths, e.g. {"run.epochs": 3, "optim.lr_backbone": 1e-4}."""
    payload = to_dict(cfg)
    for dotted, value in overrides.items():
        node = payload
        *parents, leaf = dotted.split(".")
        for key in parents:
            if key not in node:
                raise ConfigError(f"unknown config override path {dotted!r}")
            node = node[key]
        if leaf not in node:
            raise ConfigError(f"unknown config override path {dotted!r}")
        node[leaf] = value
    return from_dict(payload)
