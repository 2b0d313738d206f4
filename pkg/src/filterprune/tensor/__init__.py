"""Minimal tensor core: reverse-mode autodiff, CNN ops, optimizers."""
from .ops import (
    activation_pool,
    add,
    batchnorm2d,
    conv2d,
    cross_entropy,
    global_avg_pool,
    linear,
    maxpool2x2,
    relu,
    softmax,
)
from .optim import SGD, Adam, LrSchedule, OptimState, Optimizer, lr_at, optimizer_step
from .tensor import Tensor, is_grad_enabled, no_grad

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "conv2d",
    "linear",
    "batchnorm2d",
    "relu",
    "maxpool2x2",
    "global_avg_pool",
    "activation_pool",
    "add",
    "cross_entropy",
    "softmax",
    "OptimState",
    "Optimizer",
    "SGD",
    "Adam",
    "LrSchedule",
    "lr_at",
    "optimizer_step",
]
