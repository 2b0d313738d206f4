"""Structured filter pruning: hard rounds with frozen masks and asymptotic soft pruning.

Convs whose outputs meet at residual ``add`` layers must drop the same output
channels, otherwise the addition would mix unrelated channels after
compaction. :func:`compute_alignment_groups` partitions the convs into such
groups; every selection and mask in this module works per group, using the
sum of member filter norms as the group score.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DimensionError, InvariantViolation
from .models.graph import INPUT, LayerSpec, ModelGraph
from .tensor.tensor import Tensor, no_grad

_FLOOR_SLACK = 1e-9


@dataclass
class PruneMask:
    """Per-conv boolean vectors over output filters (True = pruned)."""

    masks: dict[str, np.ndarray]
    freeze: bool = True

    @classmethod
    def empty(cls, model: ModelGraph, freeze: bool = True) -> "PruneMask":
        return cls({s.id: np.zeros(s.params["filters"], dtype=bool) for s in model.layers_of_kind("conv")}, freeze)

    def copy(self) -> "PruneMask":
        return PruneMask({k: v.copy() for k, v in self.masks.items()}, self.freeze)

    def pruned_count(self, layer_id: str) -> int:
        return int(self.masks[layer_id].sum())

    def active_count(self, layer_id: str) -> int:
        return int((~self.masks[layer_id]).sum())

    def fraction(self, layer_id: str) -> float:
        m = self.masks[layer_id]
        return float(m.mean()) if m.size else 0.0

    @property
    def is_empty(self) -> bool:
        return not any(m.any() for m in self.masks.values())

    def to_dict(self) -> dict:
        return {"freeze": self.freeze, "masks": {k: np.flatnonzero(v).tolist() for k, v in self.masks.items()},
                "sizes": {k: int(v.size) for k, v in self.masks.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "PruneMask":
        masks = {}
        for k, size in d["sizes"].items():
            m = np.zeros(size, dtype=bool)
            m[d["masks"][k]] = True
            masks[k] = m
        return cls(masks, d["freeze"])


@dataclass
class AlignmentGroup:
    id: str
    members: list[str]
    filters: int
    prunable: bool = True


@dataclass
class AsfpSchedule:
    target_rate: float
    total_epochs: int
    exponent: float = 3.0

    def __post_init__(self):
        if not 0 <= self.target_rate < 1:
            raise ConfigurationError(f"ASFP target rate must be in [0, 1), got {self.target_rate}")
        if self.total_epochs < 1:
            raise ConfigurationError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.exponent <= 0:
            raise ConfigurationError(f"schedule exponent must be > 0, got {self.exponent}")


# ------------------------------------------------------------------ criteria
def filter_norm(weight, p: float = 2.0) -> np.ndarray:
    """l_p norm of every output filter: ``(sum |w|^p)^(1/p)`` over C*k*k entries."""
    if p <= 0:
        raise ConfigurationError(f"p must be > 0, got {p}")
    w = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
    flat = np.abs(w.reshape(w.shape[0], -1).astype(np.float64))
    if p == 2:
        return np.sqrt(np.einsum("ij,ij->i", flat, flat))
    if p == 1:
        return flat.sum(axis=1)
    return (flat**p).sum(axis=1) ** (1.0 / p)


def n_to_prune(rate: float, n: int) -> int:
    return int(math.floor(rate * n + _FLOOR_SLACK))


def select_filters(norms, rate: float, already_pruned=None) -> np.ndarray:
    """Indices of the ``floor(rate * n_active)`` lowest-norm active filters.

    Ties go to the lower index. Returned indices are sorted ascending.
    """
    if not 0 <= rate < 1:
        raise ConfigurationError(f"pruning rate must be in [0, 1), got {rate}")
    norms = np.asarray(norms, dtype=np.float64)
    active = np.ones(norms.size, dtype=bool) if already_pruned is None else ~np.asarray(already_pruned, dtype=bool)
    candidates = np.flatnonzero(active)
    k = n_to_prune(rate, candidates.size)
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(norms[candidates], kind="stable")
    return np.sort(candidates[order[:k]])


# ---------------------------------------------------------------- topology
class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, a: str) -> str:
        self.parent.setdefault(a, a)
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the lexicographically smaller root so results do not depend on call order
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def channel_sources(model: ModelGraph) -> tuple[dict[str, str], _UnionFind]:
    """Map every layer to the conv (or ``input``) that defines its channel axis."""
    uf = _UnionFind()
    uf.find(INPUT)
    source: dict[str, str] = {INPUT: INPUT}
    for spec in model.layers:
        if spec.kind == "conv":
            uf.find(spec.id)
            source[spec.id] = spec.id
        elif spec.kind == "add":
            a, b = (source[s] for s in spec.inputs)
            uf.union(a, b)
            source[spec.id] = a
        elif spec.kind == "linear":
            source[spec.id] = spec.id
        else:
            source[spec.id] = source[spec.inputs[0]]
    return source, uf


def compute_alignment_groups(model: ModelGraph) -> list[AlignmentGroup]:
    """Partition convs into groups tied by residual additions.

    A group that contains the stem conv (a conv reading the raw input) or
    whose channels are added to the raw input is marked non-prunable.
    """
    source, uf = channel_sources(model)
    convs = model.layers_of_kind("conv")
    if not convs:
        return []
    buckets: dict[str, list[LayerSpec]] = {}
    for spec in convs:
        buckets.setdefault(uf.find(spec.id), []).append(spec)
    input_root = uf.find(INPUT)
    groups = []
    for root, members in buckets.items():
        filters = {m.params["filters"] for m in members}
        if len(filters) != 1:
            raise InvariantViolation(f"alignment group {root!r} mixes filter counts {sorted(filters)}")
        has_stem = any(source[m.inputs[0]] == INPUT for m in members)
        groups.append(
            AlignmentGroup(
                id=members[0].id,
                members=[m.id for m in members],
                filters=filters.pop(),
                prunable=not has_stem and root != input_root,
            )
        )
    order = {s.id: i for i, s in enumerate(model.layers)}
    groups.sort(key=lambda g: order[g.members[0]])
    return groups


def bn_after(model: ModelGraph) -> dict[str, str]:
    """conv id -> id of the BN layer that directly consumes it."""
    out = {}
    for spec in model.layers_of_kind("bn"):
        src = spec.inputs[0]
        if src in model and model.layer(src).kind == "conv":
            out[src] = spec.id
    return out


def group_norms(model: ModelGraph, group: AlignmentGroup, p: float = 2.0) -> np.ndarray:
    total = np.zeros(group.filters, dtype=np.float64)
    for member in group.members:
        total += filter_norm(model.params[f"{member}.weight"], p)
    return total


def _check_mask(model: ModelGraph, mask: PruneMask) -> None:
    for spec in model.layers_of_kind("conv"):
        m = mask.masks.get(spec.id)
        if m is None:
            raise DimensionError(f"mask has no entry for conv {spec.id!r}")
        if m.shape != (spec.params["filters"],):
            raise DimensionError(f"mask for {spec.id!r} has length {m.size}, layer has {spec.params['filters']} filters")


# ----------------------------------------------------------- mask application
def enforce_mask(model: ModelGraph, mask: PruneMask) -> None:
    """Zero masked filters and the matching BN entries in place.

    Frozen (hard) masks clear BN gamma, beta and both running statistics.
    Soft masks clear beta and the running mean but keep gamma, so gradient
    can still reach the zeroed conv filter through the batch normalisation
    and the filter may regrow.
    """
    _check_mask(model, mask)
    bns = bn_after(model)
    with no_grad():
        for conv_id, m in mask.masks.items():
            if not m.any():
                continue
            model.params[f"{conv_id}.weight"].data[m] = 0
            bn = bns.get(conv_id)
            if bn is None:
                continue
            model.params[f"{bn}.beta"].data[m] = 0
            model.buffers[f"{bn}.running_mean"][m] = 0
            if mask.freeze:
                model.params[f"{bn}.gamma"].data[m] = 0
                model.buffers[f"{bn}.running_var"][m] = 0


def mask_gradients(model: ModelGraph, mask: PruneMask) -> None:
    """Zero the gradients of frozen filters so no optimizer rule can move them."""
    if not mask.freeze:
        return
    bns = bn_after(model)
    for conv_id, m in mask.masks.items():
        if not m.any():
            continue
        names = [f"{conv_id}.weight"]
        if conv_id in bns:
            names += [f"{bns[conv_id]}.gamma", f"{bns[conv_id]}.beta"]
        for name in names:
            g = model.params[name].grad
            if g is not None:
                g[m] = 0


def mask_rows(model: ModelGraph, mask: PruneMask) -> dict[str, np.ndarray]:
    """Parameter name -> boolean rows touched by ``mask`` (for optimizer resets)."""
    bns = bn_after(model)
    rows = {}
    for conv_id, m in mask.masks.items():
        if not m.any():
            continue
        rows[f"{conv_id}.weight"] = m
        if conv_id in bns:
            rows[f"{bns[conv_id]}.gamma"] = m
            rows[f"{bns[conv_id]}.beta"] = m
    return rows


# ------------------------------------------------------------- hard pruning
def hard_prune_round(model: ModelGraph, mask: PruneMask | None, rate: float, p: float = 2.0,
                     groups: list[AlignmentGroup] | None = None) -> PruneMask:
    """One round of norm-based filter pruning with frozen masks.

    Each prunable group loses ``floor(rate * active)`` of its still-active
    filters; previously pruned filters stay pruned.
    """
    if not 0 <= rate < 1:
        raise ConfigurationError(f"pruning rate must be in [0, 1), got {rate}")
    new = PruneMask.empty(model, freeze=True) if mask is None else mask.copy()
    new.freeze = True
    _check_mask(model, new)
    for group in groups or compute_alignment_groups(model):
        if not group.prunable:
            continue
        already = new.masks[group.members[0]]
        chosen = select_filters(group_norms(model, group, p), rate, already)
        if chosen.size == 0:
            continue
        combined = already.copy()
        combined[chosen] = True
        for member in group.members:
            new.masks[member] = combined.copy()
    if rate > 0:
        enforce_mask(model, new)
    return new


# ------------------------------------------------------------- soft pruning
def asfp_rate(schedule: AsfpSchedule, epoch: int) -> float:
    """Pruning rate after ``epoch``: ``P * (1 - (1 - (epoch+1)/E) ** exponent)``."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ConfigurationError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    remaining = 1.0 - (epoch + 1) / schedule.total_epochs
    return schedule.target_rate * (1.0 - remaining**schedule.exponent)


def asfp_epoch_end(model: ModelGraph, schedule: AsfpSchedule, epoch: int, p: float = 2.0,
                   groups: list[AlignmentGroup] | None = None) -> PruneMask:
    """Re-select and zero the lowest-norm filters of every prunable group.

    Selection starts from scratch each epoch, so filters zeroed earlier can
    escape if training has regrown them.
    """
    rate = asfp_rate(schedule, epoch)
    mask = PruneMask.empty(model, freeze=False)
    for group in groups or compute_alignment_groups(model):
        if not group.prunable:
            continue
        chosen = select_filters(group_norms(model, group, p), rate)
        for member in group.members:
            mask.masks[member][chosen] = True
    if not mask.is_empty:
        enforce_mask(model, mask)
    return mask


# --------------------------------------------------------------- compaction
def compact(model: ModelGraph, mask: PruneMask) -> ModelGraph:
    """Physically drop pruned filters and the downstream channels they feed.

    The result computes the same eval-mode function as ``model`` with the
    mask enforced. Raises :class:`InvariantViolation` if members of an
    alignment group disagree or a group tied to the raw input is masked.
    Stem groups are never selected by the pruning rounds but can still be
    compacted if a caller masks them explicitly.
    """
    _check_mask(model, mask)
    groups = compute_alignment_groups(model)
    source, uf = channel_sources(model)
    input_root = uf.find(INPUT)
    keep_by_root: dict[str, np.ndarray] = {}
    for group in groups:
        ref = mask.masks[group.members[0]]
        for member in group.members[1:]:
            if not np.array_equal(mask.masks[member], ref):
                raise InvariantViolation(f"mask of {member!r} differs from {group.members[0]!r} in the same alignment group")
        if ref.any() and uf.find(group.members[0]) == input_root:
            raise InvariantViolation(f"group {group.id!r} is added to the raw input and cannot lose filters")
        keep_by_root[uf.find(group.members[0])] = ~ref

    def keep_for(layer_id: str):
        root = uf.find(source[layer_id])
        return keep_by_root.get(root)

    clone = model.copy()
    layers = []
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    for spec in clone.layers:
        spec = LayerSpec(spec.id, spec.kind, dict(spec.params), list(spec.inputs))
        if spec.kind == "conv":
            w = clone.params[f"{spec.id}.weight"].data
            out_keep = keep_for(spec.id)
            in_keep = keep_for(spec.inputs[0])
            if out_keep is not None:
                w = w[out_keep]
            if in_keep is not None:
                w = w[:, in_keep]
            spec.params["filters"], spec.params["channels"] = w.shape[0], w.shape[1]
            params[f"{spec.id}.weight"] = Tensor(np.ascontiguousarray(w), requires_grad=True, name=f"{spec.id}.weight", dtype=w.dtype)
        elif spec.kind == "bn":
            keep = keep_for(spec.inputs[0])
            sel = slice(None) if keep is None else keep
            for slot in ("gamma", "beta"):
                name = f"{spec.id}.{slot}"
                params[name] = Tensor(clone.params[name].data[sel].copy(), requires_grad=True, name=name)
            for slot in ("running_mean", "running_var"):
                name = f"{spec.id}.{slot}"
                buffers[name] = clone.buffers[name][sel].copy()
            spec.params["channels"] = params[f"{spec.id}.gamma"].shape[0]
        elif spec.kind == "linear":
            w = clone.params[f"{spec.id}.weight"].data
            keep = keep_for(spec.inputs[0])
            if keep is not None:
                w = w[:, keep]
            spec.params["in_features"] = w.shape[1]
            params[f"{spec.id}.weight"] = Tensor(np.ascontiguousarray(w), requires_grad=True, name=f"{spec.id}.weight", dtype=w.dtype)
            params[f"{spec.id}.bias"] = Tensor(clone.params[f"{spec.id}.bias"].data.copy(), requires_grad=True, name=f"{spec.id}.bias")
        layers.append(spec)
    meta = dict(clone.meta)
    meta["compacted"] = True
    out = ModelGraph(layers, params, buffers, meta)
    out.training = model.training
    return out


def active_filter_counts(mask: PruneMask, groups: list[AlignmentGroup]) -> dict[str, int]:
    return {g.id: mask.active_count(g.members[0]) for g in groups}


@dataclass
class PruningPlan:
    """Declarative pruning configuration carried inside an experiment config."""

    method: str = "none"
    rounds: int = 3
    rate: float = 0.3
    fine_tune_epochs: int = 15
    fine_tune_lr_scale: float = 0.1
    target_rate: float = 0.3
    schedule_exponent: float = 3.0
    p: float = 2.0
    rates: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in ("none", "hard", "asfp"):
            raise ConfigurationError(f"pruning method must be none, hard or asfp, got {self.method!r}")
        for r in [self.rate, self.target_rate, *self.rates]:
            if not 0 <= r < 1:
                raise ConfigurationError(f"pruning rates must be in [0, 1), got {r}")
        if self.rounds < 0 or self.fine_tune_epochs < 0:
            raise ConfigurationError("rounds and fine_tune_epochs must be >= 0")
        if self.p <= 0:
            raise ConfigurationError(f"p must be > 0, got {self.p}")

    def round_rates(self) -> list[float]:
        """Per-round rates; ``rates`` overrides the uniform ``rate`` when given."""
        return list(self.rates) if self.rates else [self.rate] * self.rounds
