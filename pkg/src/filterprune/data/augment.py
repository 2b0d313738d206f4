"""Label-preserving image augmentations: pad-and-crop and horizontal flip."""
from __future__ import annotations

import numpy as np

from ..exceptions import ConfigurationError


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1]


def pad_crop(image: np.ndarray, crop_size: int, padding: int, offset: tuple[int, int]) -> np.ndarray:
    """Zero-pad by ``padding`` on every side, then cut a ``crop_size`` square at ``offset``."""
    h, w = image.shape[-2:]
    if crop_size > h + 2 * padding or crop_size > w + 2 * padding:
        raise ConfigurationError(f"crop size {crop_size} exceeds padded image {h + 2 * padding}x{w + 2 * padding}")
    if padding:
        widths = [(0, 0)] * (image.ndim - 2) + [(padding, padding), (padding, padding)]
        image = np.pad(image, widths)
    oy, ox = offset
    return image[..., oy:oy + crop_size, ox:ox + crop_size]


def center_crop(image: np.ndarray, crop_size: int) -> np.ndarray:
    h, w = image.shape[-2:]
    if crop_size > min(h, w):
        raise ConfigurationError(f"crop size {crop_size} exceeds image {h}x{w}")
    oy, ox = (h - crop_size) // 2, (w - crop_size) // 2
    return image[..., oy:oy + crop_size, ox:ox + crop_size]


def augment(image: np.ndarray, rng: np.random.Generator, crop_size: int | None = None, padding: int = 16,
            flip: bool | None = None, offset: tuple[int, int] | None = None) -> np.ndarray:
    """Random pad-and-crop followed by a horizontal flip with probability 0.5.

    ``flip`` and ``offset`` force the random decisions (used by tests). The
    random draws happen in a fixed order so a seeded ``rng`` gives a
    reproducible stream.
    """
    h, w = image.shape[-2:]
    crop_size = min(h, w) if crop_size is None else crop_size
    max_y = h + 2 * padding - crop_size
    max_x = w + 2 * padding - crop_size
    if max_y < 0 or max_x < 0:
        raise ConfigurationError(f"crop size {crop_size} exceeds padded image")
    draw_offset = (int(rng.integers(0, max_y + 1)), int(rng.integers(0, max_x + 1)))
    draw_flip = bool(rng.random() < 0.5)
    out = pad_crop(image, crop_size, padding, offset if offset is not None else draw_offset)
    if flip if flip is not None else draw_flip:
        out = hflip(out)
    return np.ascontiguousarray(out)
