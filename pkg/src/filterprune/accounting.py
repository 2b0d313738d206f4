"""Parameter and FLOP accounting for :class:`ModelGraph`.

FLOPs are counted as multiply-accumulates (one MAC = one FLOP) for conv and
linear layers only, per single image. This is the convention under which a
ResNet-18 on 3x224x224 input costs ~1.8e9.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .exceptions import ConfigurationError, DimensionError
from .models.graph import INPUT, ModelGraph
from .tensor.ops import conv_output_size


@dataclass
class LayerCost:
    id: str
    kind: str
    params: int
    flops: int


@dataclass
class CostReport:
    rows: list[LayerCost]
    total_params: int
    total_flops: int
    name: str = ""
    baseline_params: int | None = None
    baseline_flops: int | None = None
    params_ratio: float | None = None
    flops_ratio: float | None = None
    deltas: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CostReport":
        d = dict(d)
        d["rows"] = [LayerCost(**r) for r in d["rows"]]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self, per_layer: bool = False) -> str:
        lines = []
        if per_layer:
            width = max([len(r.id) for r in self.rows] + [5])
            lines.append(f"{'layer':<{width}}  {'kind':<6}  {'params':>12}  {'FLOPs':>14}")
            for r in self.rows:
                lines.append(f"{r.id:<{width}}  {r.kind:<6}  {r.params:>12d}  {r.flops:>14d}")
            lines.append("")
        head = f"{'model':<16}  {'Parameters':>10}  {'FLOPs':>9}"
        row = f"{self.name or '-':<16}  {self.total_params:>10.1e}  {self.total_flops:>9.1e}"
        if self.params_ratio is not None:
            head += f"  {'base params':>11}  {'base FLOPs':>10}  {'params %':>8}  {'FLOPs %':>8}"
            row += (
                f"  {self.baseline_params:>11.1e}  {self.baseline_flops:>10.1e}"
                f"  {100 * self.params_ratio:>8.1f}  {100 * self.flops_ratio:>8.1f}"
            )
        lines += [head, row]
        return "\n".join(lines) + "\n"


def infer_shapes(model: ModelGraph, input_shape=None) -> dict[str, tuple[int, ...]]:
    """Per-layer output shape for one image (no batch axis)."""
    shape = tuple(int(v) for v in (input_shape or model.input_shape))
    shapes: dict[str, tuple[int, ...]] = {INPUT: shape}
    for spec in model.layers:
        src = shapes[spec.inputs[0]]
        p = spec.params
        if spec.kind == "conv":
            if len(src) != 3 or src[0] != p["channels"]:
                raise DimensionError(f"{spec.id}: expects {p['channels']} input channels, got shape {src}")
            h = conv_output_size(src[1], p["kernel"], p.get("stride", 1), p.get("pad", 0))
            w = conv_output_size(src[2], p["kernel"], p.get("stride", 1), p.get("pad", 0))
            out = (p["filters"], h, w)
        elif spec.kind == "bn":
            if src[0] != p["channels"]:
                raise DimensionError(f"{spec.id}: expects {p['channels']} channels, got shape {src}")
            out = src
        elif spec.kind == "relu":
            out = src
        elif spec.kind == "maxpool":
            out = (src[0], src[1] // 2, src[2] // 2)
        elif spec.kind == "gap":
            out = (src[0],)
        elif spec.kind == "linear":
            if src != (p["in_features"],):
                raise DimensionError(f"{spec.id}: expects {p['in_features']} features, got shape {src}")
            out = (p["out_features"],)
        elif spec.kind == "add":
            other = shapes[spec.inputs[1]]
            if other != src:
                raise DimensionError(f"{spec.id}: operand shapes {src} and {other} differ")
            out = src
        else:
            raise ConfigurationError(f"unknown layer kind {spec.kind!r}")
        shapes[spec.id] = out
    return shapes


def _layer_params(spec) -> int:
    p = spec.params
    if spec.kind == "conv":
        return p["filters"] * p["channels"] * p["kernel"] ** 2
    if spec.kind == "bn":
        return 2 * p["channels"]
    if spec.kind == "linear":
        return p["out_features"] * p["in_features"] + p["out_features"]
    return 0


def count_params(model: ModelGraph) -> int:
    """Learnable parameter count from layer specs (BN running stats excluded)."""
    return sum(_layer_params(spec) for spec in model.layers)


def count_flops(model: ModelGraph, input_shape=None) -> int:
    """Multiply-accumulate count of one inference pass on a single image."""
    return cost_report(model, input_shape).total_flops


def cost_report(model: ModelGraph, input_shape=None, name: str | None = None) -> CostReport:
    shapes = infer_shapes(model, input_shape)
    rows = []
    for spec in model.layers:
        params = _layer_params(spec)
        flops = 0
        if spec.kind == "conv":
            _, h, w = shapes[spec.id]
            flops = params * h * w
        elif spec.kind == "linear":
            flops = spec.params["out_features"] * spec.params["in_features"]
        if params or flops:
            rows.append(LayerCost(spec.id, spec.kind, params, flops))
    return CostReport(
        rows=rows,
        total_params=sum(r.params for r in rows),
        total_flops=sum(r.flops for r in rows),
        name=name or model.meta.get("name", ""),
    )


def report_compression(baseline: CostReport, pruned: CostReport) -> CostReport:
    """Attach pruned/baseline ratios and per-layer deltas to ``pruned``."""
    base_rows = {r.id: r for r in baseline.rows}
    deltas = []
    for r in pruned.rows:
        b = base_rows.get(r.id)
        if b is None:
            continue
        deltas.append({"id": r.id, "params_delta": r.params - b.params, "flops_delta": r.flops - b.flops})
    return CostReport(
        rows=list(pruned.rows),
        total_params=pruned.total_params,
        total_flops=pruned.total_flops,
        name=pruned.name,
        baseline_params=baseline.total_params,
        baseline_flops=baseline.total_flops,
        params_ratio=pruned.total_params / baseline.total_params,
        flops_ratio=pruned.total_flops / baseline.total_flops,
        deltas=deltas,
    )
