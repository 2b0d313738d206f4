"""Seeded k-fold assignment, optionally stratified by label."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError


@dataclass
class FoldPlan:
    k: int
    assignment: np.ndarray
    stratified: bool = True

    def validation_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def training_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def to_dict(self) -> dict:
        return {"k": self.k, "assignment": self.assignment.tolist(), "stratified": self.stratified}


def kfold_split(manifest_or_labels, k: int, seed: int = 0, stratified: bool = True) -> FoldPlan:
    """Assign every record to one of ``k`` folds.

    Records are shuffled (within each class when stratified), laid end to end
    class after class and dealt round-robin, so fold sizes differ by at most
    one and each fold's per-class counts differ by at most one.
    """
    labels = getattr(manifest_or_labels, "labels", manifest_or_labels)
    labels = np.asarray(labels)
    n = labels.size
    if not 2 <= k <= n:
        raise ConfigurationError(f"k must satisfy 2 <= k <= {n}, got {k}")
    rng = np.random.default_rng(seed)
    if stratified:
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    else:
        order = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % k
    return FoldPlan(k, assignment, stratified)
