"""Declarative experiment configuration (JSON serialisable)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..exceptions import ConfigurationError
from ..pruning import PruningPlan


@dataclass
class ArchitectureConfig:
    depth: int = 18
    width_scale: float = 0.25
    input_size: int = 224
    in_channels: int = 1
    num_classes: int = 2

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.input_size, self.input_size)


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer kind must be sgd or adam, got {self.kind!r}")
        if self.lr < 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")


@dataclass
class ScheduleConfig:
    decay_factor: float = 0.1
    step_every: int = 30


def _build(cls, value):
    if isinstance(value, cls):
        return value
    if value is None:
        return cls()
    if not isinstance(value, dict):
        raise ConfigurationError(f"{cls.__name__} must be a JSON object, got {type(value).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(value) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**value)


@dataclass
class ExperimentConfig:
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    epochs: int = 40
    batch_size: int = 32
    augment_padding: int = 16
    dataset: str = "data"
    k: int = 10
    stratified: bool = True
    repeats: int = 10
    seed: int = 0
    fold_seed: int | None = None
    pruning: PruningPlan = field(default_factory=PruningPlan)
    init_weights: str | None = None
    output_dir: str = "results"

    def __post_init__(self):
        self.architecture = _build(ArchitectureConfig, self.architecture)
        self.optimizer = _build(OptimizerConfig, self.optimizer)
        self.schedule = _build(ScheduleConfig, self.schedule)
        self.pruning = _build(PruningPlan, self.pruning)
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {self.repeats}")
        if self.k < 2:
            raise ConfigurationError(f"k must be >= 2, got {self.k}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.schedule.decay_factor < 1 or self.schedule.step_every < 1:
            raise ConfigurationError("schedule needs decay_factor in (0, 1) and step_every >= 1")

    # seeds -------------------------------------------------------------
    def repeat_seed(self, repeat: int) -> int:
        return self.seed + repeat

    def fold_plan_seed(self) -> int:
        if self.fold_seed is not None:
            return self.fold_seed
        return int(np.random.SeedSequence([self.seed, 0xF01D]).generate_state(1)[0])

    # serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["betas"] = list(d["optimizer"]["betas"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def estimator_params(self, random_state: int, pruning: str | None = None) -> dict:
        """Keyword arguments for :class:`ResNetClassifier`."""
        arch, opt, plan = self.architecture, self.optimizer, self.pruning
        return {
            "depth": arch.depth,
            "width_scale": arch.width_scale,
            "num_classes": arch.num_classes,
            "input_size": arch.input_size,
            "optimizer": opt.kind,
            "lr": opt.lr,
            "momentum": opt.momentum,
            "weight_decay": opt.weight_decay,
            "betas": tuple(opt.betas),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_decay": self.schedule.decay_factor,
            "lr_step": self.schedule.step_every,
            "padding": self.augment_padding,
            "pruning": plan.method if pruning is None else pruning,
            "prune_rates": tuple(plan.round_rates()),
            "fine_tune_epochs": plan.fine_tune_epochs,
            "fine_tune_lr_scale": plan.fine_tune_lr_scale,
            "asfp_target_rate": plan.target_rate,
            "asfp_exponent": plan.schedule_exponent,
            "norm_p": plan.p,
            "init_checkpoint": self.init_weights,
            "random_state": random_state,
        }
