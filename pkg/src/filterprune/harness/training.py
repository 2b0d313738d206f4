"""Single-fold training and model evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data.augment import center_crop
from ..data.folds import FoldPlan
from ..data.manifest import DatasetManifest
from ..estimator import ResNetClassifier
from ..exceptions import ConfigurationError, InputError, InvariantViolation
from ..models.graph import ModelGraph, forward
from ..tensor import no_grad
from ..validation import check_images, check_labels, to_unit_float
from .config import ExperimentConfig


@dataclass
class EvalResult:
    accuracy: float
    confusion: list[list[int]]  # confusion[true][predicted]
    recall: list[float | None]
    n: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion, "recall": self.recall, "n": self.n}


def evaluate_logits(logits, labels, num_classes: int | None = None) -> EvalResult:
    """Argmax classification metrics from raw logits [N, C]."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise InputError(f"expected non-empty [N, C] logits, got shape {logits.shape}")
    c = num_classes or logits.shape[1]
    labels = check_labels(labels, logits.shape[0], c)
    pred = logits.argmax(axis=1)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    support = confusion.sum(axis=1)
    recall = [float(confusion[i, i] / support[i]) if support[i] else None for i in range(c)]
    return EvalResult(float((pred == labels).mean()), confusion.tolist(), recall, int(labels.size))


def predict_logits(model: ModelGraph, images, batch_size: int = 64) -> np.ndarray:
    """Eval-mode logits, using the normalisation stored in the model's metadata."""
    X = check_images(images, model.input_shape[0])
    size = model.input_shape[-1]
    mean, std = model.meta.get("normalization", (0.0, 1.0))
    model.eval()
    out = []
    with no_grad():
        for start in range(0, X.shape[0], batch_size):
            xb = X[start:start + batch_size]
            if xb.shape[-1] != size or xb.shape[-2] != size:
                xb = center_crop(xb, size)
            xb = (to_unit_float(xb) - np.float32(mean)) / np.float32(std)
            out.append(forward(model, xb).data)
    return np.concatenate(out)


def evaluate(model, images, labels=None, batch_size: int = 64) -> EvalResult:
    """Accuracy, confusion counts and per-class recall of ``model``.

    ``model`` is a :class:`ModelGraph` or fitted :class:`ResNetClassifier`;
    ``images`` may be a :class:`DatasetManifest`, whose labels are then used.
    """
    if isinstance(images, DatasetManifest):
        if len(images) == 0:
            raise InputError("empty evaluation subset")
        labels = images.labels if labels is None else labels
        images = images.load_images()
    if labels is None:
        raise InputError("labels are required for evaluation")
    if isinstance(model, ResNetClassifier):
        return evaluate_logits(model.decision_function(images), labels, model.num_classes)
    return evaluate_logits(predict_logits(model, images, batch_size), labels, model.num_classes)


@dataclass
class FoldResult:
    fold: int
    seed: int
    val_accuracy: float
    last_val_accuracy: float
    rounds: list[dict] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    trained_ids: set = field(default_factory=set)
    val_ids: set = field(default_factory=set)


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    manifest = DatasetManifest.read(path)
    if len(manifest) == 0:
        raise InputError(f"dataset {path} is empty")
    return manifest.load_images(), manifest.labels


def job_seed(seed: int, fold_index: int) -> int:
    """Estimator seed for one (repeat seed, fold) job."""
    return int(np.random.SeedSequence([int(seed), int(fold_index)]).generate_state(1)[0])


def train(config: ExperimentConfig, fold_plan: FoldPlan, fold_index: int, seed: int,
          data=None, pruning: str | None = None) -> tuple[ResNetClassifier, FoldResult]:
    """Train on every fold except ``fold_index`` and validate on it.

    ``data=(images, labels)`` skips reloading ``config.dataset``. ``pruning``
    overrides the plan's method (used for the unpruned ASFP reference run).
    Returns the fitted estimator (its ``model_`` is the trained graph) and the
    fold result; best-epoch accuracy is the headline number.
    """
    images, labels = data if data is not None else load_dataset(config.dataset)
    if fold_plan.assignment.shape[0] != len(labels):
        raise ConfigurationError(f"fold plan covers {fold_plan.assignment.shape[0]} records, dataset has {len(labels)}")
    if not 0 <= fold_index < fold_plan.k:
        raise ConfigurationError(f"fold_index {fold_index} outside [0, {fold_plan.k})")
    tr, va = fold_plan.training_indices(fold_index), fold_plan.validation_indices(fold_index)
    rs = job_seed(seed, fold_index)
    est = ResNetClassifier(**config.estimator_params(rs, pruning))
    est.fit(images[tr], labels[tr], eval_set=(images[va], labels[va]), sample_ids=tr)

    val_ids = set(va.tolist())
    leaked = est.trained_ids_ & val_ids
    if leaked:
        raise InvariantViolation(f"fold {fold_index}: {len(leaked)} validation images reached the optimizer")
    result = FoldResult(
        fold=fold_index,
        seed=rs,
        val_accuracy=est.val_accuracy_,
        last_val_accuracy=est.last_val_accuracy_,
        rounds=list(est.rounds_),
        history=list(est.history_),
        trained_ids=set(est.trained_ids_),
        val_ids=val_ids,
    )
    return est, result
