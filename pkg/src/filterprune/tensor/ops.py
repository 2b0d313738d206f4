"""Differentiable operations needed by residual CNN classifiers.

Every op takes :class:`Tensor` operands, computes its output with numpy in
the operands' dtype, and registers a backward closure through
:func:`make_result`.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import ConfigurationError, DimensionError, InputError
from .tensor import Tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise
def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; used for residual joins (equal shapes) and scalars."""
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        factor = b

        def backward_scalar(g):
            return (g * factor,)

        return make_result(a.data * factor, (a,), backward_scalar)

    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(out, (a, b), backward)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def backward(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.size

    def backward(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)

    return make_result(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc

    def backward(g):
        return (g.reshape(a.shape),)

    return make_result(out, (a,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------- convolution
def conv_output_size(extent: int, kernel: int, stride: int, pad: int) -> int:
    """Output extent of a strided convolution window (floor division)."""
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ConfigurationError(f"pad must be >= 0, got {pad}")
    span = extent + 2 * pad - kernel
    if span < 0:
        raise ConfigurationError(
            f"kernel {kernel} does not fit input extent {extent} with pad {pad}"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Channel-major patch matrix of shape (C*k*k, N*Ho*Wo).

    Rows are ordered (c, i, j) to match ``weight.reshape(F, C*k*k)``; filling
    one kernel offset at a time keeps the inner copies contiguous along W.
    """
    n, c, h, w = x.shape
    xt = x.transpose(1, 0, 2, 3)
    if pad:
        xp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = xt
    else:
        xp = xt
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + hs:stride, j:j + ws:stride]
    return cols.reshape(c * k * k, n * ho * wo)


def _col2im(dcols: np.ndarray, shape, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = shape
    dcols = dcols.reshape(c, k, k, n, ho, wo)
    dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + hs:stride, j:j + ws:stride] += dcols[:, i, j]
    if pad:
        dxp = dxp[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(dxp.transpose(1, 0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Bias-free 2-D cross-correlation, NCHW input and FCkk weight.

    im2col followed by one matrix product; the backward pass scatters the
    patch gradient back with one strided add per kernel offset.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, wc, kh, kw = weight.shape
    if wc != c:
        raise DimensionError(f"conv2d channel mismatch: input has {c}, weight expects {wc}")
    if kh != kw:
        raise DimensionError(f"only square kernels are supported, got {kh}x{kw}")
    k = kh
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(w, k, stride, pad)

    cols = _im2col(x.data, k, stride, pad, ho, wo)
    wmat = weight.data.reshape(f, c * k * k)
    out = (wmat @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, n * ho * wo)
        gw = (gf @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = _col2im(wmat.T @ gf, x.shape, k, stride, pad, ho, wo)
        return gx, gw

    return make_result(out, (x, weight), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError(
            f"linear expects [N,D], [K,D], [K]; got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[1] or weight.shape[0] != bias.shape[0]:
        raise DimensionError(
            f"linear dimension mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return make_result(out, (x, weight, bias), backward)


# -------------------------------------------------------------- normalization
def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place with an exponential moving average (unbiased
    variance). In eval mode the running buffers are used directly.
    """
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm2d: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]

    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu[None, :, None, None]
        var = (xc * xc).mean(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
        xc = x.data - mu[None, :, None, None]

    invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * invstd[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                s1 = dxhat.sum(axis=axes)
                s2 = (dxhat * xhat).sum(axis=axes)
                gx = (dxhat - (s1 / m)[None, :, None, None] - xhat * (s2 / m)[None, :, None, None])
                gx *= invstd[None, :, None, None]
            else:
                gx = dxhat * invstd[None, :, None, None]
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward)


# --------------------------------------------------------------------- pooling
def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling; an odd trailing row/column is dropped."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2x2 expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise DimensionError(f"maxpool2x2 needs spatial extent >= 2, got {h}x{w}")
    xr = x.data[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
    blocks = xr.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((n, c, ho, wo, 4), dtype=x.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        if (2 * ho, 2 * wo) == (h, w):
            return (gb,)
        gx = np.zeros(x.shape, dtype=x.dtype)
        gx[:, :, : 2 * ho, : 2 * wo] = gb
        return (gx,)

    return make_result(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(x.dtype),)

    return make_result(out, (x,), backward)


def activation_pool(x: Tensor, kind: str) -> Tensor:
    """Dispatch for the parameter-free layers: ``relu``, ``maxpool2x2``, ``global_avg_pool``."""
    if kind == "relu":
        return relu(x)
    if kind == "maxpool2x2":
        return maxpool2x2(x)
    if kind == "global_avg_pool":
        return global_avg_pool(x)
    raise ConfigurationError(f"unknown activation/pool kind {kind!r}")


# ------------------------------------------------------------------------ loss
def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [N, M] logits, got {logits.shape}")
    n, m = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.mod(labels, 1) == 0):
            raise InputError("labels must be integers")
        labels = labels.astype(np.int64)
    if n and (labels.min() < 0 or labels.max() >= m):
        raise InputError(f"labels must lie in [0, {m}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1
        return (grad * (g / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
