"""Synthetic X-ray-like wool images with optional defect inclusions.

Images are attenuation maps in [0, 1] (brighter = denser) quantised to 8-bit
grayscale PNG. The background combines low-frequency layer bands, large smooth
density fluctuations, oriented fibre streaks and sensor noise. Clean images
therefore already contain window-scale intensity excursions, which is what
keeps a plain intensity threshold from separating the classes.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from ..exceptions import ConfigurationError
from .manifest import DEFECTIVE, NON_DEFECTIVE, DatasetManifest, DefectKind, ManifestRecord

VISIBLE_KINDS = tuple(k.value for k in DefectKind.xray_visible())


@dataclass
class GeneratorConfig:
    n_defective: int = 242
    n_clean: int = 236
    image_size: int = 224
    kinds: list[str] = field(default_factory=lambda: list(VISIBLE_KINDS))
    defects_per_image: tuple[int, int] = (1, 3)
    # background
    base_level: tuple[float, float] = (0.40, 0.55)
    band_count: tuple[int, int] = (2, 5)
    band_amplitude: tuple[float, float] = (0.02, 0.06)
    band_cycles: tuple[float, float] = (0.8, 3.5)
    blob_count: tuple[int, int] = (2, 6)
    blob_sigma: tuple[float, float] = (12.0, 30.0)
    blob_amplitude: tuple[float, float] = (0.10, 0.30)
    fiber_sigma: tuple[float, float] = (0.7, 7.0)
    fiber_amplitude: float = 0.05
    sensor_noise: float = 0.015
    # defects (contrast is an additive attenuation change)
    d1_radius: tuple[float, float] = (4.0, 8.0)
    d1_contrast: tuple[float, float] = (0.30, 0.50)
    d2_radius: tuple[float, float] = (8.0, 16.0)
    d2_edge: tuple[float, float] = (1.5, 3.0)
    d2_contrast: tuple[float, float] = (0.22, 0.35)
    d3_count: tuple[int, int] = (5, 20)
    d3_radius: tuple[float, float] = (1.5, 2.8)
    d3_spread: tuple[float, float] = (6.0, 16.0)
    d3_contrast: tuple[float, float] = (0.30, 0.50)
    d6_radius: tuple[float, float] = (4.0, 8.0)
    d6_vertices: tuple[int, int] = (5, 9)
    d6_contrast: tuple[float, float] = (0.30, 0.50)
    # label-soundness check: a defect must lift at least this many pixels above noise_sigmas * sensor_noise
    min_visible_pixels: int = 6
    noise_sigmas: float = 3.0

    def __post_init__(self):
        if self.n_defective < 0 or self.n_clean < 0:
            raise ConfigurationError("image counts must be >= 0")
        if self.image_size < 64:
            raise ConfigurationError(f"image_size must be >= 64, got {self.image_size}")
        bad = [k for k in self.kinds if k not in VISIBLE_KINDS]
        if bad:
            raise ConfigurationError(f"defect kinds {bad} cannot be rendered; choose from {VISIBLE_KINDS}")
        if not self.kinds and self.n_defective:
            raise ConfigurationError("defective images requested but no defect kinds enabled")
        lo, hi = self.defects_per_image
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"defects_per_image must satisfy 1 <= lo <= hi, got {self.defects_per_image}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown generator config keys: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) and k != "kinds" else v for k, v in d.items()}
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        return cls.from_dict(json.loads(text))


def _u(rng: np.random.Generator, bounds) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def _grid(size: int):
    yy, xx = np.mgrid[0:size, 0:size]
    return yy.astype(np.float64), xx.astype(np.float64)


def render_background(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    s = cfg.image_size
    yy, xx = _grid(s)
    img = np.full((s, s), _u(rng, cfg.base_level))

    tilt = rng.uniform(-0.35, 0.35)
    axis = (yy * np.cos(tilt) + xx * np.sin(tilt)) / s
    for _ in range(int(rng.integers(cfg.band_count[0], cfg.band_count[1] + 1))):
        img += _u(rng, cfg.band_amplitude) * np.sin(2 * np.pi * _u(rng, cfg.band_cycles) * axis + rng.uniform(0, 2 * np.pi))

    for _ in range(int(rng.integers(cfg.blob_count[0], cfg.blob_count[1] + 1))):
        cy, cx = rng.uniform(0, s, 2)
        sig = _u(rng, cfg.blob_sigma)
        amp = _u(rng, cfg.blob_amplitude) * rng.choice([-1.0, 1.0])
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig**2))

    pad = s // 4
    noise = rng.standard_normal((s + 2 * pad, s + 2 * pad))
    fibers = ndimage.gaussian_filter(noise, sigma=cfg.fiber_sigma)
    fibers = ndimage.rotate(fibers, np.degrees(tilt) + rng.uniform(-20, 20), reshape=False, order=1, mode="reflect")
    fibers = fibers[pad:pad + s, pad:pad + s]
    fibers /= fibers.std() + 1e-12
    img += cfg.fiber_amplitude * fibers
    return img


def _ellipse(cfg, rng, yy, xx, cy, cx):
    a, b = _u(rng, cfg.d1_radius), _u(rng, cfg.d1_radius)
    t = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(t) + dy * np.sin(t)) / a
    v = (-dx * np.sin(t) + dy * np.cos(t)) / b
    inside = np.clip(1.5 * (1.0 - np.sqrt(u * u + v * v)) * max(a, b), 0, 1)
    return _u(rng, cfg.d1_contrast) * inside


def _binder_bulk(cfg, rng, yy, xx, cy, cx):
    r0 = _u(rng, cfg.d2_radius)
    theta = np.arctan2(yy - cy, xx - cx)
    dist = np.hypot(yy - cy, xx - cx)
    wobble = sum(rng.uniform(-0.15, 0.15) * np.cos(k * theta + rng.uniform(0, 2 * np.pi)) for k in (2, 3, 5))
    radius = r0 * (1 + wobble)
    edge = _u(rng, cfg.d2_edge)
    return _u(rng, cfg.d2_contrast) / (1 + np.exp((dist - radius) / edge))


def _shot_cluster(cfg, rng, yy, xx, cy, cx):
    out = np.zeros_like(yy)
    spread = _u(rng, cfg.d3_spread)
    contrast = _u(rng, cfg.d3_contrast)
    for _ in range(int(rng.integers(cfg.d3_count[0], cfg.d3_count[1] + 1))):
        py, px = rng.normal(cy, spread / 2), rng.normal(cx, spread / 2)
        r = _u(rng, cfg.d3_radius)
        disc = np.clip(r + 0.5 - np.hypot(yy - py, xx - px), 0, 1)
        out = np.maximum(out, contrast * rng.uniform(0.7, 1.0) * disc)
    return out


def _dirt(cfg, rng, yy, xx, cy, cx):
    n = int(rng.integers(cfg.d6_vertices[0], cfg.d6_vertices[1] + 1))
    r0 = _u(rng, cfg.d6_radius)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = r0 * rng.uniform(0.45, 1.25, n)
    theta = np.mod(np.arctan2(yy - cy, xx - cx), 2 * np.pi)
    dist = np.hypot(yy - cy, xx - cx)
    # piecewise-linear star-shaped outline through the random vertices
    boundary = np.interp(theta, np.concatenate([angles - 2 * np.pi, angles, angles + 2 * np.pi]), np.tile(radii, 3))
    inside = np.clip(boundary + 0.5 - dist, 0, 1)
    return _u(rng, cfg.d6_contrast) * inside


_RENDERERS = {"D1": _ellipse, "D2": _binder_bulk, "D3": _shot_cluster, "D6": _dirt}


def render_defects(cfg: GeneratorConfig, rng: np.random.Generator) -> tuple[np.ndarray, list[str]]:
    s = cfg.image_size
    yy, xx = _grid(s)
    n = int(rng.integers(cfg.defects_per_image[0], cfg.defects_per_image[1] + 1))
    layer = np.zeros((s, s))
    kinds = []
    margin = max(12, s // 10)
    for _ in range(n):
        kind = str(rng.choice(cfg.kinds))
        cy, cx = rng.uniform(margin, s - margin, 2)
        layer = np.maximum(layer, _RENDERERS[kind](cfg, rng, yy, xx, cy, cx))
        kinds.append(kind)
    return layer, sorted(set(kinds))


def defect_is_visible(cfg: GeneratorConfig, layer: np.ndarray) -> bool:
    return int((layer > cfg.noise_sigmas * cfg.sensor_noise).sum()) >= cfg.min_visible_pixels


def _quantise(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def render_image(cfg: GeneratorConfig, seed_words, defective: bool) -> tuple[np.ndarray, list[str]]:
    """Render one uint8 image from its derived seed; returns (image, defect kinds)."""
    rng = np.random.default_rng(np.random.SeedSequence(list(seed_words)))
    img = render_background(cfg, rng)
    kinds: list[str] = []
    if defective:
        for _ in range(100):
            layer, kinds = render_defects(cfg, rng)
            if defect_is_visible(cfg, layer):
                break
        else:
            raise ConfigurationError("defect contrast ranges never exceed the noise floor")
        img = img + layer
    img = img + cfg.sensor_noise * rng.standard_normal(img.shape)
    return _quantise(img), kinds


def generate_dataset(config: GeneratorConfig, out_dir, seed: int = 0) -> DatasetManifest:
    """Write PNG images, ``manifest.jsonl`` and ``generator_config.json`` into ``out_dir``.

    Image ``i`` depends only on ``(seed, i)``, so output is reproducible and
    independent of generation order.
    """
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out_dir}: {exc}") from exc

    total = config.n_defective + config.n_clean
    labels = np.array([DEFECTIVE] * config.n_defective + [NON_DEFECTIVE] * config.n_clean)
    labels = labels[np.random.default_rng(np.random.SeedSequence([seed, 2**31 - 1])).permutation(total)]
    records = []
    for i, label in enumerate(labels):
        seed_words = [int(seed), i]
        img, kinds = render_image(config, seed_words, bool(label == DEFECTIVE))
        rel = f"images/img_{i:04d}.png"
        Image.fromarray(img, mode="L").save(out_dir / rel)
        records.append(ManifestRecord(path=rel, label=int(label), defect_kinds=kinds, seed=seed_words))
    manifest = DatasetManifest(records, out_dir)
    manifest.write(out_dir / "manifest.jsonl")
    (out_dir / "generator_config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2), encoding="utf-8")
    return manifest
