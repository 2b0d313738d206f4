"""Metrics reports and their JSON / table renderings."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..accounting import CostReport
from ..exceptions import ConfigurationError, FormatError


@dataclass
class AccuracySummary:
    """Accuracies of one row (baseline, a hard round, or an ASFP run).

    ``fold_accuracies[r][f]`` is repeat ``r``, fold ``f``. ``mean``/``std``
    are taken over the repeat axis of the fold-averaged accuracies;
    ``fold_std`` is the fold-axis std averaged over repeats.
    """

    name: str
    fold_accuracies: list[list[float]]
    repeat_means: list[float]
    mean: float
    std: float
    fold_std: float
    drop: float | None = None
    rate: float | None = None
    cost: CostReport | None = None

    @classmethod
    def from_matrix(cls, name: str, acc, baseline_mean: float | None = None, rate=None, cost=None):
        a = np.asarray(acc, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise ConfigurationError(f"accuracy matrix must be [repeats, folds], got shape {a.shape}")
        repeat_means = a.mean(axis=1)
        mean = float(repeat_means.mean())
        return cls(
            name=name,
            fold_accuracies=a.tolist(),
            repeat_means=repeat_means.tolist(),
            mean=mean,
            std=float(repeat_means.std()),
            fold_std=float(a.std(axis=1).mean()),
            drop=None if baseline_mean is None else mean - baseline_mean,
            rate=rate,
            cost=cost,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "fold_accuracies": self.fold_accuracies,
            "repeat_means": self.repeat_means,
            "mean": self.mean,
            "std": self.std,
            "fold_std": self.fold_std,
            "drop": self.drop,
            "rate": self.rate,
            "cost": None if self.cost is None else self.cost.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracySummary":
        d = dict(d)
        d["cost"] = None if d.get("cost") is None else CostReport.from_dict(d["cost"])
        return cls(**d)


@dataclass
class MetricsReport:
    model: str
    depth: int
    optimizer: str
    method: str
    k: int
    repeats: int
    baseline: AccuracySummary
    pruned: list[AccuracySummary] = field(default_factory=list)
    baseline_cost: CostReport | None = None
    extras: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "depth": self.depth,
            "optimizer": self.optimizer,
            "method": self.method,
            "k": self.k,
            "repeats": self.repeats,
            "baseline": self.baseline.to_dict(),
            "pruned": [p.to_dict() for p in self.pruned],
            "baseline_cost": None if self.baseline_cost is None else self.baseline_cost.to_dict(),
            "extras": self.extras,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        try:
            d = dict(d)
            d["baseline"] = AccuracySummary.from_dict(d["baseline"])
            d["pruned"] = [AccuracySummary.from_dict(p) for p in d.get("pruned", [])]
            if d.get("baseline_cost") is not None:
                d["baseline_cost"] = CostReport.from_dict(d["baseline_cost"])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed metrics report: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"metrics report is not valid JSON: {exc}") from exc


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:.2f}"


def _signed(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:+.2f}"


def render_table(reports: list[MetricsReport]) -> str:
    """One row per report: model, optimizer, baseline mean +/- std, then one
    accuracy / drop / parameter column group per pruned row (Round 1/2/3 or
    the ASFP rate)."""
    if not reports:
        return "(no reports)\n"
    n_pruned = max(len(r.pruned) for r in reports)
    header = ["Model", "Optimizer", "Pruning", "Folds", "Repeats", "Mean acc (%)", "Std (%)", "Fold std (%)", "Params"]
    for i in range(n_pruned):
        names = {r.pruned[i].name for r in reports if len(r.pruned) > i}
        label = names.pop() if len(names) == 1 else f"Pruned {i + 1}"
        header += [f"{label} acc (%)", f"{label} drop", f"{label} params"]
    rows = []
    for r in reports:
        row = [
            r.model, r.optimizer, r.method, str(r.k), str(r.repeats),
            _pct(r.baseline.mean), _pct(r.baseline.std), _pct(r.baseline.fold_std),
            "-" if r.baseline_cost is None else f"{r.baseline_cost.total_params:.2e}",
        ]
        for i in range(n_pruned):
            if i < len(r.pruned):
                p = r.pruned[i]
                row += [_pct(p.mean), _signed(p.drop), "-" if p.cost is None else f"{p.cost.total_params:.2e}"]
            else:
                row += ["-", "-", "-"]
        rows.append(row)
    widths = [max(len(h), *(len(row[j]) for row in rows)) for j, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(cells, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(row) for row in rows]
    return "\n".join(lines) + "\n"


def emit_report(report, fmt: str = "json") -> bytes:
    """Serialise one report (or a list of reports) deterministically."""
    reports = report if isinstance(report, list) else [report]
    if fmt == "json":
        payload = reports[0].to_dict() if not isinstance(report, list) else [r.to_dict() for r in reports]
        return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")
    if fmt == "table":
        return render_table(reports).encode("utf-8")
    raise ConfigurationError(f"report format must be json or table, got {fmt!r}")
