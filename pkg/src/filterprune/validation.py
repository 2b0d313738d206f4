"""Input checks shared by the estimators and the harness."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError, InputError


def check_images(X, n_channels: int | None = None) -> np.ndarray:
    """Return images as [N, C, H, W] without changing dtype.

    Accepts [N, H, W] (single channel) or [N, C, H, W]; uint8 or float.
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise DimensionError(f"expected images shaped [N, H, W] or [N, C, H, W], got {X.shape}")
    if X.shape[0] == 0:
        raise InputError("empty image set")
    if n_channels is not None and X.shape[1] != n_channels:
        raise DimensionError(f"expected {n_channels} channel(s), got {X.shape[1]}")
    if not (X.dtype == np.uint8 or np.issubdtype(X.dtype, np.floating)):
        raise InputError(f"images must be uint8 or floating point, got {X.dtype}")
    if np.issubdtype(X.dtype, np.floating) and not np.all(np.isfinite(X)):
        raise InputError("images contain NaN or Inf")
    return X


def check_labels(y, n: int, n_classes: int = 2) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise InputError("labels must be integers")
        y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= n_classes:
        raise InputError(f"labels must lie in [0, {n_classes})")
    return y.astype(np.int64)


def to_unit_float(X: np.ndarray) -> np.ndarray:
    """uint8 -> float32 in [0, 1]; float input is passed through as float32."""
    if X.dtype == np.uint8:
        return X.astype(np.float32) / np.float32(255.0)
    return X.astype(np.float32, copy=False)
