"""Repeats x folds orchestration and aggregation into a :class:`MetricsReport`."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..accounting import CostReport, cost_report, report_compression
from ..data.folds import kfold_split
from ..exceptions import DivergenceError, FilterPruneError
from ..models import save_checkpoint
from .config import ExperimentConfig
from .report import AccuracySummary, MetricsReport
from .training import load_dataset, train

logger = logging.getLogger(__name__)


def run_job(config: ExperimentConfig, plan, repeat: int, fold: int, data, checkpoint_dir=None) -> dict:
    """One (repeat, fold) job; returns a JSON-serialisable record.

    With ``checkpoint_dir`` the final model (compacted when pruned) is saved
    as ``r{repeat}_f{fold}.ckpt``.
    """
    seed = config.repeat_seed(repeat)
    method = config.pruning.method
    job = {"repeat": repeat, "fold": fold, "seed": seed, "method": method}
    if method == "asfp":
        # unpruned reference with the same seed, then the soft-pruned run
        base_est, base = train(config, plan, fold, seed, data, pruning="none")
        est, res = train(config, plan, fold, seed, data)
        cost = report_compression(base_est.baseline_cost_, cost_report(est.compacted_model(), name="ASFP"))
        job["baseline"] = {"accuracy": base.val_accuracy, "last_accuracy": base.last_val_accuracy}
        # the final-epoch mask is the one at the target rate, so the last epoch is the pruned accuracy
        job["pruned"] = [{
            "name": f"ASFP {config.pruning.target_rate:g}",
            "rate": config.pruning.target_rate,
            "accuracy": res.last_val_accuracy,
            "best_accuracy": res.val_accuracy,
            "cost": cost.to_dict(),
            "mask_fraction": {g.id: est.mask_.fraction(g.members[0]) for g in est.groups_ if g.prunable},
        }]
        job["baseline_cost"] = base_est.baseline_cost_.to_dict()
        job["history"] = base.history + res.history
        job["n_trained"] = len(res.trained_ids | base.trained_ids)
    else:
        est, res = train(config, plan, fold, seed, data)
        job["baseline"] = {"accuracy": res.val_accuracy, "last_accuracy": res.last_val_accuracy}
        job["pruned"] = [{
            "name": f"Round {r['round']}",
            "rate": r["rate"],
            "accuracy": r["val_accuracy"],
            "last_accuracy": r["last_val_accuracy"],
            "cost": r["cost"].to_dict(),
        } for r in res.rounds]
        job["baseline_cost"] = est.baseline_cost_.to_dict()
        job["history"] = res.history
        job["n_trained"] = len(res.trained_ids)
    job["n_validation"] = len(res.val_ids)
    if checkpoint_dir is not None:
        model = est.model_ if method == "none" else est.compacted_model()
        (Path(checkpoint_dir) / f"r{repeat}_f{fold}.ckpt").write_bytes(save_checkpoint(model))
    return job


def aggregate(config: ExperimentConfig, jobs: list[dict]) -> MetricsReport:
    """Order-independent reduction of job records into a report."""
    grid = {(j["repeat"], j["fold"]): j for j in jobs}
    r_n, k = config.repeats, config.k
    ordered = [[grid[(r, f)] for f in range(k)] for r in range(r_n)]
    baseline = AccuracySummary.from_matrix(
        "Baseline", [[j["baseline"]["accuracy"] for j in row] for row in ordered])
    baseline.cost = CostReport.from_dict(ordered[0][0]["baseline_cost"])
    pruned = []
    for i, first in enumerate(ordered[0][0]["pruned"]):
        acc = [[j["pruned"][i]["accuracy"] for j in row] for row in ordered]
        pruned.append(AccuracySummary.from_matrix(
            first["name"], acc, baseline_mean=baseline.mean, rate=first["rate"],
            cost=CostReport.from_dict(first["cost"])))
    extras = {
        "baseline_last_epoch_mean": AccuracySummary.from_matrix(
            "last", [[j["baseline"]["last_accuracy"] for j in row] for row in ordered]).mean,
    }
    if config.pruning.method == "asfp":
        extras["mask_fraction"] = ordered[0][0]["pruned"][0]["mask_fraction"]
        extras["asfp_best_epoch_mean"] = AccuracySummary.from_matrix(
            "best", [[j["pruned"][0]["best_accuracy"] for j in row] for row in ordered]).mean
    arch = config.architecture
    return MetricsReport(
        model=f"ResNet-{arch.depth} (width {arch.width_scale:g})",
        depth=arch.depth,
        optimizer={"sgd": "SGD", "adam": "Adam"}[config.optimizer.kind],
        method=config.pruning.method,
        k=k,
        repeats=r_n,
        baseline=baseline,
        pruned=pruned,
        baseline_cost=baseline.cost,
        extras=extras,
        config=config.to_dict(),
    )


def _dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def fingerprint(config: ExperimentConfig, images, labels) -> str:
    """Digest of everything a job's outcome depends on: config and data."""
    h = hashlib.sha256(config.to_json().encode())
    for arr in (images, labels):
        arr = np.ascontiguousarray(arr)
        h.update(f"{arr.dtype.str}{arr.shape}".encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def _load_finished(path: Path, digest: str) -> dict | None:
    try:
        job = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    return job if isinstance(job, dict) and job.get("fingerprint") == digest else None


def run_experiment(config: ExperimentConfig, data=None, results_dir=None, n_jobs: int = 1,
                   save_checkpoints: bool = False, resume: bool = False) -> MetricsReport:
    """Run every (repeat, fold) job of ``config`` and aggregate.

    Fold boundaries come from one seed shared by all repeats; each repeat
    seeds initialisation, shuffling and augmentation. When ``results_dir`` is
    given, each finished job is written to ``jobs/r{repeat}_f{fold}.json`` so a
    failed run leaves its partial results behind, plus ``error.json``;
    ``save_checkpoints`` also writes each job's model under ``checkpoints/``.
    With ``resume`` a job file whose fingerprint matches the current config
    and data is reused instead of retrained.
    """
    images, labels = data if data is not None else load_dataset(config.dataset)
    plan = kfold_split(labels, config.k, seed=config.fold_plan_seed(), stratified=config.stratified)
    job_dir = ckpt_dir = None
    if results_dir is not None:
        job_dir = Path(results_dir) / "jobs"
        job_dir.mkdir(parents=True, exist_ok=True)
        if save_checkpoints:
            ckpt_dir = Path(results_dir) / "checkpoints"
            ckpt_dir.mkdir(exist_ok=True)

    digest = fingerprint(config, images, labels)
    keys = [(r, f) for r in range(config.repeats) for f in range(config.k)]
    jobs: list[dict] = []
    if resume and job_dir is not None and not save_checkpoints:
        for r, f in list(keys):
            job = _load_finished(job_dir / f"r{r}_f{f}.json", digest)
            if job is not None:
                jobs.append(job)
                keys.remove((r, f))
        if jobs:
            logger.info("resuming: %d of %d jobs already finished", len(jobs), len(jobs) + len(keys))

    def record(job):
        job["fingerprint"] = digest
        jobs.append(job)
        logger.info("repeat %d fold %d: baseline %.4f", job["repeat"], job["fold"], job["baseline"]["accuracy"])
        if job_dir is not None:
            _dump(job_dir / f"r{job['repeat']}_f{job['fold']}.json", job)

    try:
        if n_jobs > 1:
            with ProcessPoolExecutor(n_jobs) as pool:
                futures = [pool.submit(run_job, config, plan, r, f, (images, labels), ckpt_dir) for r, f in keys]
                for fut in futures:
                    record(fut.result())
        else:
            for r, f in keys:
                record(run_job(config, plan, r, f, (images, labels), ckpt_dir))
    except FilterPruneError as exc:
        if results_dir is not None:
            error = {"error": type(exc).__name__, "message": str(exc), "completed_jobs": len(jobs)}
            if isinstance(exc, DivergenceError):
                error["diagnostics"] = exc.diagnostics
            _dump(Path(results_dir) / "error.json", error)
        raise
    return aggregate(config, jobs)
