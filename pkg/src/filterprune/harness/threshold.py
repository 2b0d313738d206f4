"""Window-mean intensity thresholding, the non-learned reference classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ConfigurationError, InputError


def window_deviation_scores(images: np.ndarray, window: int) -> np.ndarray:
    """Largest |window mean - image mean| per image, over all fully-inside windows.

    ``images`` is [N, H, W] in any numeric dtype; uint8 is rescaled to [0, 1].
    """
    images = np.asarray(images)
    if images.ndim != 3:
        raise InputError(f"expected [N, H, W] images, got shape {images.shape}")
    n, h, w = images.shape
    if window < 1 or window > min(h, w):
        raise ConfigurationError(f"window {window} must lie in [1, {min(h, w)}]")
    x = images.astype(np.float64)
    if images.dtype == np.uint8:
        x /= 255.0
    integral = np.zeros((n, h + 1, w + 1))
    integral[:, 1:, 1:] = x.cumsum(axis=1).cumsum(axis=2)
    sums = (
        integral[:, window:, window:]
        - integral[:, :-window, window:]
        - integral[:, window:, :-window]
        + integral[:, :-window, :-window]
    )
    means = sums / (window * window)
    global_mean = x.mean(axis=(1, 2))
    return np.abs(means - global_mean[:, None, None]).max(axis=(1, 2))


@dataclass
class ThresholdResult:
    window: int
    thresholds: list[float]
    accuracies: list[float]
    best_threshold: float
    best_accuracy: float

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "thresholds": [float(t) for t in self.thresholds],
            "accuracies": [float(a) for a in self.accuracies],
            "best_threshold": float(self.best_threshold),
            "best_accuracy": float(self.best_accuracy),
        }


def candidate_thresholds(scores) -> list[float]:
    """Every distinct decision rule: a cut below all scores plus each observed score.

    With ``score > t`` as the rule, these cuts realise every possible
    partition, so sweeping them finds the exact best threshold.
    """
    distinct = np.unique(np.asarray(scores, dtype=np.float64))
    return [float(distinct[0]) - 1.0] + distinct.tolist()


def threshold_baseline(images: np.ndarray, labels, window: int, thresholds=None) -> ThresholdResult:
    """Sweep ``thresholds``; an image is defective when its window score exceeds t.

    ``thresholds=None`` sweeps every distinct cut (exhaustive search). Ties
    in accuracy are resolved toward the first threshold in the list.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InputError("empty image set")
    scores = window_deviation_scores(images, window)
    thresholds = candidate_thresholds(scores) if thresholds is None else [float(t) for t in thresholds]
    if not thresholds:
        raise ConfigurationError("at least one threshold is required")
    accs = [float(((scores > t).astype(int) == labels).mean()) for t in thresholds]
    best = int(np.argmax(accs))
    return ThresholdResult(window, thresholds, accs, thresholds[best], accs[best])


class ThresholdClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` picks the best (window, threshold) pair on the training set."""

    def __init__(self, windows=(16,), thresholds=None):
        self.windows = windows
        self.thresholds = thresholds

    def fit(self, X, y):
        X = np.asarray(X)
        if X.ndim == 4:
            X = X[:, 0]
        y = np.asarray(y)
        best = None
        for window in self.windows:
            res = threshold_baseline(X, y, window, self.thresholds)
            if best is None or res.best_accuracy > best.best_accuracy:
                best = res
        self.window_ = best.window
        self.threshold_ = best.best_threshold
        self.train_accuracy_ = best.best_accuracy
        self.classes_ = np.array([0, 1])
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        X = np.asarray(X)
        if X.ndim == 4:
            X = X[:, 0]
        return (window_deviation_scores(X, self.window_) > self.threshold_).astype(int)
