"""Explicit layer graph for CNN classifiers.

Skip connections are ordinary ``add`` layers with two producers, so topology
questions (which convs feed which additions) can be answered by walking
``LayerSpec.inputs`` instead of inspecting Python control flow.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from ..exceptions import ConfigurationError, DimensionError, InvariantViolation
from ..tensor import ops
from ..tensor.tensor import Tensor

INPUT = "input"
LAYER_KINDS = ("conv", "bn", "relu", "maxpool", "gap", "linear", "add")


@dataclass
class LayerSpec:
    id: str
    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "params": dict(self.params), "inputs": list(self.inputs)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["id"], d["kind"], dict(d.get("params", {})), list(d.get("inputs", [])))


class ModelGraph:
    """Topologically ordered layers, named parameters and BN buffers.

    Parameter names follow ``<layer id>.<slot>``: ``weight`` for conv and
    linear, ``bias`` for linear, ``gamma``/``beta`` for BN. BN running
    statistics live in :attr:`buffers` as ``<id>.running_mean`` and
    ``<id>.running_var``.
    """

    def __init__(self, layers: list[LayerSpec], params: dict[str, Tensor], buffers: dict[str, np.ndarray], meta: dict):
        self.layers = list(layers)
        self.params = dict(params)
        self.buffers = dict(buffers)
        self.meta = dict(meta)
        self.training = True
        self._index = {spec.id: spec for spec in self.layers}
        self.validate()

    # ---------------------------------------------------------------- access
    def layer(self, layer_id: str) -> LayerSpec:
        return self._index[layer_id]

    def __contains__(self, layer_id: str) -> bool:
        return layer_id in self._index

    def layers_of_kind(self, kind: str) -> list[LayerSpec]:
        return [spec for spec in self.layers if spec.kind == kind]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def consumers(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {INPUT: []}
        for spec in self.layers:
            out.setdefault(spec.id, [])
            for src in spec.inputs:
                out.setdefault(src, []).append(spec.id)
        return out

    @property
    def output_id(self) -> str:
        return self.layers[-1].id

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.meta["input_shape"])

    @property
    def num_classes(self) -> int:
        return int(self.meta["num_classes"])

    def train(self, mode: bool = True) -> "ModelGraph":
        self.training = mode
        return self

    def eval(self) -> "ModelGraph":
        return self.train(False)

    def copy(self) -> "ModelGraph":
        params = {name: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=name) for name, t in self.params.items()}
        buffers = {name: b.copy() for name, b in self.buffers.items()}
        clone = ModelGraph(copy.deepcopy(self.layers), params, buffers, copy.deepcopy(self.meta))
        clone.training = self.training
        return clone

    # ------------------------------------------------------------ validation
    def validate(self) -> None:
        seen = {INPUT}
        for spec in self.layers:
            if spec.kind not in LAYER_KINDS:
                raise ConfigurationError(f"layer {spec.id!r}: unknown kind {spec.kind!r}")
            if spec.id in seen:
                raise InvariantViolation(f"duplicate or reserved layer id {spec.id!r}")
            for src in spec.inputs:
                if src not in seen:
                    raise InvariantViolation(f"layer {spec.id!r} consumes {src!r}, which is not defined before it")
            expected_inputs = 2 if spec.kind == "add" else 1
            if len(spec.inputs) != expected_inputs:
                raise InvariantViolation(
                    f"layer {spec.id!r} ({spec.kind}) needs {expected_inputs} inputs, has {len(spec.inputs)}"
                )
            seen.add(spec.id)
            if spec.kind == "conv":
                p = spec.params
                want = (p["filters"], p["channels"], p["kernel"], p["kernel"])
                got = self.params[f"{spec.id}.weight"].shape
                if got != want:
                    raise InvariantViolation(f"{spec.id}.weight has shape {got}, spec says {want}")
            elif spec.kind == "bn":
                c = spec.params["channels"]
                for slot in ("gamma", "beta"):
                    if self.params[f"{spec.id}.{slot}"].shape != (c,):
                        raise InvariantViolation(f"{spec.id}.{slot} does not have {c} entries")
            elif spec.kind == "linear":
                p = spec.params
                if self.params[f"{spec.id}.weight"].shape != (p["out_features"], p["in_features"]):
                    raise InvariantViolation(f"{spec.id}.weight does not match its spec")

    def __repr__(self) -> str:
        return f"ModelGraph({self.meta.get('name', 'custom')}, layers={len(self.layers)}, params={len(self.params)})"


def forward(model: ModelGraph, batch, *, return_all: bool = False):
    """Run ``batch`` ([N, *input_shape]) through the graph and return logits."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if tuple(x.shape[1:]) != model.input_shape:
        raise DimensionError(f"batch shape {x.shape} does not match model input {model.input_shape}")
    values: dict[str, Tensor] = {INPUT: x}
    remaining = _use_counts(model)
    for spec in model.layers:
        args = [values[src] for src in spec.inputs]
        values[spec.id] = _apply(model, spec, args)
        if not return_all:
            for src in spec.inputs:
                remaining[src] -= 1
                if remaining[src] == 0:
                    del values[src]
    if return_all:
        return values
    return values[model.output_id]


def _use_counts(model: ModelGraph) -> dict[str, int]:
    counts: dict[str, int] = {}
    for spec in model.layers:
        for src in spec.inputs:
            counts[src] = counts.get(src, 0) + 1
    return counts


def _apply(model: ModelGraph, spec: LayerSpec, args: list[Tensor]) -> Tensor:
    kind = spec.kind
    p = spec.params
    if kind == "conv":
        return ops.conv2d(args[0], model.params[f"{spec.id}.weight"], stride=p.get("stride", 1), pad=p.get("pad", 0))
    if kind == "bn":
        return ops.batchnorm2d(
            args[0],
            model.params[f"{spec.id}.gamma"],
            model.params[f"{spec.id}.beta"],
            model.buffers[f"{spec.id}.running_mean"],
            model.buffers[f"{spec.id}.running_var"],
            training=model.training,
        )
    if kind == "relu":
        return ops.relu(args[0])
    if kind == "maxpool":
        return ops.maxpool2x2(args[0])
    if kind == "gap":
        return ops.global_avg_pool(args[0])
    if kind == "linear":
        return ops.linear(args[0], model.params[f"{spec.id}.weight"], model.params[f"{spec.id}.bias"])
    if kind == "add":
        a, b = args
        if a.shape != b.shape:
            raise DimensionError(f"add layer {spec.id!r}: operand shapes {a.shape} and {b.shape} differ")
        return ops.add(a, b)
    raise ConfigurationError(f"unknown layer kind {kind!r}")


class GraphBuilder:
    """Appends layers and allocates their parameters with He fan-in init."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = dtype
        self.layers: list[LayerSpec] = []
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def _param(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data.astype(self.dtype), requires_grad=True, name=name)

    def conv(self, layer_id: str, src: str, channels: int, filters: int, kernel: int, stride: int = 1, pad: int | None = None) -> str:
        if pad is None:
            pad = kernel // 2
        fan_in = channels * kernel * kernel
        w = self.rng.standard_normal((filters, channels, kernel, kernel)) * np.sqrt(2.0 / fan_in)
        self._param(f"{layer_id}.weight", w)
        self.layers.append(
            LayerSpec(layer_id, "conv", {"filters": filters, "channels": channels, "kernel": kernel, "stride": stride, "pad": pad}, [src])
        )
        return layer_id

    def bn(self, layer_id: str, src: str, channels: int) -> str:
        self._param(f"{layer_id}.gamma", np.ones(channels))
        self._param(f"{layer_id}.beta", np.zeros(channels))
        self.buffers[f"{layer_id}.running_mean"] = np.zeros(channels, dtype=self.dtype)
        self.buffers[f"{layer_id}.running_var"] = np.ones(channels, dtype=self.dtype)
        self.layers.append(LayerSpec(layer_id, "bn", {"channels": channels}, [src]))
        return layer_id

    def simple(self, layer_id: str, kind: str, src: str) -> str:
        self.layers.append(LayerSpec(layer_id, kind, {}, [src]))
        return layer_id

    def add(self, layer_id: str, a: str, b: str) -> str:
        self.layers.append(LayerSpec(layer_id, "add", {}, [a, b]))
        return layer_id

    def linear(self, layer_id: str, src: str, in_features: int, out_features: int) -> str:
        bound = 1.0 / np.sqrt(in_features)
        self._param(f"{layer_id}.weight", self.rng.uniform(-bound, bound, (out_features, in_features)))
        self._param(f"{layer_id}.bias", np.zeros(out_features))
        self.layers.append(LayerSpec(layer_id, "linear", {"in_features": in_features, "out_features": out_features}, [src]))
        return layer_id

    def build(self, meta: dict) -> ModelGraph:
        return ModelGraph(self.layers, self.params, self.buffers, meta)
