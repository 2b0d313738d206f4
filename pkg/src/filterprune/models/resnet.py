"""ResNet-18/34/50/101/152 as explicit layer graphs.

Stem: 7x7 stride-2 conv, BN, ReLU, 2x2 max pool. Four stages of basic
(18, 34) or bottleneck (50, 101, 152) blocks; stage entry blocks that change
resolution or width use a 1x1 projection conv + BN on the skip path.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import ConfigurationError
from .graph import INPUT, GraphBuilder, ModelGraph

STAGE_BLOCKS = {
    18: (2, 2, 2, 2),
    34: (3, 4, 6, 3),
    50: (3, 4, 6, 3),
    101: (3, 4, 23, 3),
    152: (3, 8, 36, 3),
}
BASE_WIDTHS = (64, 128, 256, 512)
BOTTLENECK_EXPANSION = 4


def block_type(depth: int) -> str:
    return "basic" if depth in (18, 34) else "bottleneck"


def scaled_width(width: int, width_scale: float) -> int:
    return max(1, int(round(width * width_scale)))


def build_resnet(
    depth: int,
    width_scale: float = 1.0,
    input_shape=(1, 224, 224),
    num_classes: int = 2,
    seed: int = 0,
    dtype=np.float32,
) -> ModelGraph:
    """Construct a randomly initialised ResNet classifier graph.

    Parameters
    ----------
    depth : one of 18, 34, 50, 101, 152
    width_scale : multiplier in (0, 1] applied to every stage width
    input_shape : (channels, height, width) of one image
    num_classes : size of the linear head
    seed : seed of the initialisation RNG
    """
    if depth not in STAGE_BLOCKS:
        raise ConfigurationError(f"unsupported ResNet depth {depth}; choose from {sorted(STAGE_BLOCKS)}")
    if not 0 < width_scale <= 1:
        raise ConfigurationError(f"width_scale must be in (0, 1], got {width_scale}")
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise ConfigurationError(f"input_shape must be (C, H, W) with positive extents, got {input_shape}")
    if num_classes < 1:
        raise ConfigurationError(f"num_classes must be >= 1, got {num_classes}")

    g = GraphBuilder(np.random.default_rng(seed), dtype=dtype)
    widths = [scaled_width(w, width_scale) for w in BASE_WIDTHS]
    stem_width = widths[0]
    in_channels = input_shape[0]

    x = g.conv("stem.conv", INPUT, in_channels, stem_width, 7, stride=2, pad=3)
    x = g.bn("stem.bn", x, stem_width)
    x = g.simple("stem.relu", "relu", x)
    x = g.simple("stem.pool", "maxpool", x)
    channels = stem_width

    kind = block_type(depth)
    for stage, (n_blocks, planes) in enumerate(zip(STAGE_BLOCKS[depth], widths), start=1):
        for b in range(n_blocks):
            stride = 2 if (b == 0 and stage > 1) else 1
            prefix = f"layer{stage}.{b}"
            if kind == "basic":
                x, channels = _basic_block(g, prefix, x, channels, planes, stride)
            else:
                x, channels = _bottleneck_block(g, prefix, x, channels, planes, stride)

    x = g.simple("gap", "gap", x)
    g.linear("fc", x, channels, num_classes)
    meta = {
        "name": f"resnet{depth}",
        "depth": depth,
        "width_scale": float(width_scale),
        "num_classes": int(num_classes),
        "input_shape": list(input_shape),
    }
    return g.build(meta)


def _skip(g: GraphBuilder, prefix: str, x: str, channels: int, out_channels: int, stride: int) -> str:
    if stride == 1 and channels == out_channels:
        return x
    s = g.conv(f"{prefix}.downsample.conv", x, channels, out_channels, 1, stride=stride, pad=0)
    return g.bn(f"{prefix}.downsample.bn", s, out_channels)


def _basic_block(g: GraphBuilder, prefix: str, x: str, channels: int, planes: int, stride: int):
    h = g.conv(f"{prefix}.conv1", x, channels, planes, 3, stride=stride)
    h = g.bn(f"{prefix}.bn1", h, planes)
    h = g.simple(f"{prefix}.relu1", "relu", h)
    h = g.conv(f"{prefix}.conv2", h, planes, planes, 3)
    h = g.bn(f"{prefix}.bn2", h, planes)
    skip = _skip(g, prefix, x, channels, planes, stride)
    out = g.add(f"{prefix}.add", h, skip)
    return g.simple(f"{prefix}.relu2", "relu", out), planes


def _bottleneck_block(g: GraphBuilder, prefix: str, x: str, channels: int, planes: int, stride: int):
    out_channels = planes * BOTTLENECK_EXPANSION
    h = g.conv(f"{prefix}.conv1", x, channels, planes, 1, pad=0)
    h = g.bn(f"{prefix}.bn1", h, planes)
    h = g.simple(f"{prefix}.relu1", "relu", h)
    h = g.conv(f"{prefix}.conv2", h, planes, planes, 3, stride=stride)
    h = g.bn(f"{prefix}.bn2", h, planes)
    h = g.simple(f"{prefix}.relu2", "relu", h)
    h = g.conv(f"{prefix}.conv3", h, planes, out_channels, 1, pad=0)
    h = g.bn(f"{prefix}.bn3", h, out_channels)
    skip = _skip(g, prefix, x, channels, out_channels, stride)
    out = g.add(f"{prefix}.add", h, skip)
    return g.simple(f"{prefix}.relu3", "relu", out), out_channels


def stage_block_counts(model: ModelGraph) -> tuple[int, ...]:
    """Count residual blocks per stage by inspecting the graph's add layers."""
    counts = {}
    for spec in model.layers_of_kind("add"):
        stage = spec.id.split(".")[0]
        counts[stage] = counts.get(stage, 0) + 1
    return tuple(counts[f"layer{i}"] for i in range(1, 5) if f"layer{i}" in counts)
