"""SGD and Adam update rules plus the step-decay learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..exceptions import ConfigurationError, UsageError
from .tensor import Tensor


@dataclass
class OptimState:
    """Hyperparameters and per-parameter moment buffers of one optimizer.

    ``moments`` maps the parameter index to its buffers: ``{"momentum": v}``
    for SGD, ``{"m": m, "v": v}`` for Adam.
    """

    kind: str
    lr: float
    momentum: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    moments: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")


class Optimizer:
    """Applies :func:`optimizer_step` to a fixed list of parameters."""

    def __init__(self, params: Iterable[Tensor], state: OptimState):
        self.params = list(params)
        self.state = state

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        optimizer_step(self.params, self.state)

    def reset_moments(self, index: int, rows) -> None:
        """Clear the moment buffers of ``rows`` along axis 0 of parameter ``index``."""
        for buf in self.state.moments.get(index, {}).values():
            buf[rows] = 0


def SGD(params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> Optimizer:
    return Optimizer(params, OptimState("sgd", lr=lr, momentum=momentum, weight_decay=weight_decay))


def Adam(params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> Optimizer:
    return Optimizer(params, OptimState("adam", lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay))


def optimizer_step(params: Sequence[Tensor], state: OptimState) -> None:
    """Update ``params`` in place from their ``.grad`` buffers.

    SGD: ``v = mu*v + (g + wd*w); w -= lr*v``. Adam uses bias-corrected first
    and second moments with L2 weight decay folded into the gradient.
    """
    for i, p in enumerate(params):
        if p.grad is None:
            name = p.name or f"#{i}"
            raise UsageError(f"parameter {name} has no gradient; call backward() first")
    state.step_count += 1
    t = state.step_count
    for i, p in enumerate(params):
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        bufs = state.moments.setdefault(i, {})
        if state.kind == "sgd":
            if state.momentum:
                v = bufs.get("momentum")
                if v is None:
                    v = bufs["momentum"] = g.astype(p.dtype, copy=True)
                else:
                    v *= state.momentum
                    v += g
                g = v
            p.data -= (state.lr * g).astype(p.dtype, copy=False)
        else:
            b1, b2 = state.betas
            m = bufs.setdefault("m", np.zeros_like(p.data))
            v = bufs.setdefault("v", np.zeros_like(p.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            step_size = state.lr / (1 - b1**t)
            denom = np.sqrt(v / (1 - b2**t)) + state.eps
            p.data -= (step_size * m / denom).astype(p.dtype, copy=False)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    decay_factor: float = 0.1
    step_every: int = 30

    def __post_init__(self):
        if self.base_lr < 0:
            raise ConfigurationError(f"base_lr must be >= 0, got {self.base_lr}")
        if not 0 < self.decay_factor < 1:
            raise ConfigurationError(f"decay_factor must be in (0, 1), got {self.decay_factor}")
        if self.step_every < 1:
            raise ConfigurationError(f"step_every must be >= 1, got {self.step_every}")

    def lr_at(self, epoch: int) -> float:
        return lr_at(self, epoch)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Step decay: ``base_lr * decay_factor ** floor(epoch / step_every)``."""
    if epoch < 0:
        raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
    return schedule.base_lr * schedule.decay_factor ** math.floor(epoch / schedule.step_every)
