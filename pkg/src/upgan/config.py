"""Experiment configuration: one declarative YAML file, schema-validated with
unknown keys rejected so hyperparameter typos fail loudly instead of training
the wrong model.

Sections: ``task``/``seed`` at top level, then ``data``, ``train``, ``eval``,
``sweep``, ``output``. Every section has complete defaults; a minimal config
is just ``task: procedural``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .trainer import TrainConfig

CONFIG_SCHEMA_VERSION = 1

TASKS = ("procedural", "undersample", "motion", "paired-dirs")


class ConfigError(ValueError):
    """Raised for malformed experiment configs."""


@dataclass
class DataConfig:
    dir: str | None = None            # source slices for non-procedural tasks
    manifest: str | None = None       # existing manifest dir (skips generation)
    num_subjects: int = 10
    slices_per_subject: int = 10
    image_size: int = 64
    split_ratios: tuple = (0.6, 0.2, 0.2)
    split_counts: tuple | None = None
    keep_fraction: float = 0.08
    mask_mode: str = "square"
    motion_segments: int = 4
    motion_max_rotation_deg: float = 5.0
    motion_max_translation_px: float = 3.0

    def __post_init__(self):
        if self.mask_mode not in ("square", "lines"):
            raise ConfigError(f"data.mask_mode must be 'square' or 'lines', got {self.mask_mode!r}")
        if not (0 < self.keep_fraction <= 1):
            raise ConfigError(f"data.keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if isinstance(self.split_ratios, list):
            self.split_ratios = tuple(self.split_ratios)
        if isinstance(self.split_counts, list):
            self.split_counts = tuple(self.split_counts)


@dataclass
class EvalConfig:
    split: str = "test"
    figures: int = 4

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"eval.split must be train/val/test, got {self.split!r}")
        if self.figures < 0:
            raise ConfigError("eval.figures must be nonnegative")


@dataclass
class SweepConfig:
    levels: tuple = (3, 6, 10)

    def __post_init__(self):
        if isinstance(self.levels, list):
            self.levels = tuple(self.levels)
        if not self.levels or any(not isinstance(v, int) or v < 1 for v in self.levels):
            raise ConfigError("sweep.levels must be a non-empty list of positive integers")


@dataclass
class OutputConfig:
    dir: str = "runs/experiment"


@dataclass
class ExperimentConfig:
    task: str = "procedural"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task != "procedural" and self.data.dir is None and self.data.manifest is None:
            raise ConfigError(f"task {self.task!r} needs data.dir or data.manifest")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def out_path(self) -> Path:
        return Path(self.output.dir)


def _build_section(cls, payload, section: str):
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {section!r}: {sorted(unknown)}; allowed: {sorted(allowed)}"
        )
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(payload: dict) -> ExperimentConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a mapping")
    payload = dict(payload)
    version = payload.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version {version!r} unsupported (expected {CONFIG_SCHEMA_VERSION})"
        )

    known = {"task", "seed", "data", "train", "eval", "sweep", "output"}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}; allowed: {sorted(known)}")

    train_payload = payload.get("train") or {}
    if not isinstance(train_payload, dict):
        raise ConfigError("section 'train' must be a mapping")
    train_payload = dict(train_payload)
    train_payload.setdefault("seed", payload.get("seed", 0))

    return ExperimentConfig(
        task=payload.get("task", "procedural"),
        seed=int(payload.get("seed", 0)),
        data=_build_section(DataConfig, payload.get("data"), "data"),
        train=_build_section(TrainConfig, train_payload, "train"),
        eval=_build_section(EvalConfig, payload.get("eval"), "eval"),
        sweep=_build_section(SweepConfig, payload.get("sweep"), "sweep"),
        output=_build_section(OutputConfig, payload.get("output"), "output"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from exc
    if payload is None:
        payload = {}
    return config_from_dict(payload)
