"""scikit-learn compatible ResNet classifier with built-in filter pruning.

``ResNetClassifier`` owns the training loop. With ``pruning="hard"`` it
trains, then runs the configured number of prune + fine-tune rounds with
frozen masks; with ``pruning="asfp"`` it prunes softly at the end of every
training epoch with the asymptotic rate schedule.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .accounting import cost_report, count_flops, count_params, report_compression
from .data.augment import augment as augment_image
from .data.augment import center_crop
from .exceptions import ConfigurationError, DivergenceError
from .models import build_resnet, forward, load_checkpoint
from .pruning import (
    AsfpSchedule,
    PruneMask,
    asfp_epoch_end,
    compact,
    compute_alignment_groups,
    enforce_mask,
    hard_prune_round,
    mask_gradients,
)
from .tensor import LrSchedule, OptimState, Optimizer, cross_entropy, no_grad, softmax
from .validation import check_images, check_labels, to_unit_float

logger = logging.getLogger(__name__)


class ResNetClassifier(ClassifierMixin, BaseEstimator):
    """ResNet image classifier trained with SGD or Adam on in-memory arrays.

    Parameters
    ----------
    depth, width_scale : architecture (see :func:`build_resnet`)
    optimizer : "sgd" or "adam"
    lr, lr_decay, lr_step : step-decay schedule, ``lr * lr_decay ** (epoch // lr_step)``
    epochs, batch_size : training length
    augment, padding : random pad-and-crop + horizontal flip on training batches
    pruning : "none", "hard" or "asfp"
    prune_rates : per-round rates for hard pruning
    fine_tune_epochs, fine_tune_lr_scale : fine-tuning after each hard round
    asfp_target_rate, asfp_exponent : soft pruning schedule
    norm_p : exponent of the filter-norm criterion
    init_checkpoint : optional path to a checkpoint to start from
    random_state : seed for initialisation, shuffling and augmentation
    """

    def __init__(
        self,
        depth=18,
        width_scale=0.25,
        num_classes=2,
        input_size=None,
        optimizer="sgd",
        lr=0.01,
        momentum=0.9,
        weight_decay=5e-4,
        betas=(0.9, 0.999),
        epochs=40,
        batch_size=32,
        lr_decay=0.1,
        lr_step=30,
        augment=True,
        padding=16,
        pruning="none",
        prune_rates=(0.3, 0.3, 0.3),
        fine_tune_epochs=15,
        fine_tune_lr_scale=0.1,
        asfp_target_rate=0.3,
        asfp_exponent=3.0,
        norm_p=2.0,
        init_checkpoint=None,
        eval_batch_size=64,
        random_state=0,
        verbose=0,
    ):
        self.depth = depth
        self.width_scale = width_scale
        self.num_classes = num_classes
        self.input_size = input_size
        self.optimizer = optimizer
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.betas = betas
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_decay = lr_decay
        self.lr_step = lr_step
        self.augment = augment
        self.padding = padding
        self.pruning = pruning
        self.prune_rates = prune_rates
        self.fine_tune_epochs = fine_tune_epochs
        self.fine_tune_lr_scale = fine_tune_lr_scale
        self.asfp_target_rate = asfp_target_rate
        self.asfp_exponent = asfp_exponent
        self.norm_p = norm_p
        self.init_checkpoint = init_checkpoint
        self.eval_batch_size = eval_batch_size
        self.random_state = random_state
        self.verbose = verbose

    # ------------------------------------------------------------ plumbing
    def _validate_params(self):
        if self.pruning not in ("none", "hard", "asfp"):
            raise ConfigurationError(f"pruning must be 'none', 'hard' or 'asfp', got {self.pruning!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        for r in self.prune_rates:
            if not 0 <= r < 1:
                raise ConfigurationError(f"pruning rates must be in [0, 1), got {r}")
        if not 0 <= self.asfp_target_rate < 1:
            raise ConfigurationError(f"asfp_target_rate must be in [0, 1), got {self.asfp_target_rate}")

    def _make_optimizer(self, model, lr: float) -> Optimizer:
        state = OptimState(
            self.optimizer,
            lr=lr,
            momentum=self.momentum if self.optimizer == "sgd" else 0.0,
            betas=tuple(self.betas),
            weight_decay=self.weight_decay,
        )
        return Optimizer(model.parameters(), state)

    def _initial_model(self, input_shape):
        if self.init_checkpoint is not None:
            payload = Path(self.init_checkpoint).read_bytes()
            expected = {"depth": self.depth, "width_scale": self.width_scale,
                        "num_classes": self.num_classes, "input_shape": list(input_shape)}
            return load_checkpoint(payload, expected_meta=expected)
        return build_resnet(self.depth, self.width_scale, input_shape, self.num_classes, seed=self.random_state)

    def _batch(self, X: np.ndarray, train: bool) -> np.ndarray:
        size = self.input_size_
        if train and self.augment:
            out = np.stack([augment_image(img, self._aug_rng, crop_size=size, padding=self.padding) for img in X])
        elif X.shape[-1] != size or X.shape[-2] != size:
            out = center_crop(X, size)
        else:
            out = X
        x = to_unit_float(out)
        return (x - np.float32(self.norm_mean_)) / np.float32(self.norm_std_)

    # --------------------------------------------------------------- fit
    def fit(self, X, y, eval_set=None, sample_ids=None):
        """Train on ``X`` [N, (C,) H, W] with labels ``y``.

        ``eval_set=(X_val, y_val)`` enables per-epoch validation accuracy
        (best and last are recorded). ``sample_ids`` tags rows so
        :attr:`trained_ids_` lists exactly what the optimizer consumed.
        """
        self._validate_params()
        X = check_images(X)
        y = check_labels(y, X.shape[0], self.num_classes)
        if eval_set is not None:
            Xv = check_images(eval_set[0], X.shape[1])
            yv = check_labels(eval_set[1], Xv.shape[0], self.num_classes)
            eval_set = (Xv, yv)
        self.input_size_ = int(self.input_size or X.shape[-1])
        input_shape = (X.shape[1], self.input_size_, self.input_size_)
        self.sample_ids_ = np.arange(X.shape[0]) if sample_ids is None else np.asarray(sample_ids)
        self.trained_ids_ = set()

        unit = to_unit_float(X)
        self.norm_mean_ = float(unit.mean(dtype=np.float64))
        self.norm_std_ = float(unit.std(dtype=np.float64)) or 1.0
        del unit

        seeds = np.random.SeedSequence(self.random_state).spawn(2)
        self._shuffle_rng = np.random.default_rng(seeds[0])
        self._aug_rng = np.random.default_rng(seeds[1])

        model = self._initial_model(input_shape)
        model.meta["normalization"] = [self.norm_mean_, self.norm_std_]
        self.classes_ = np.arange(self.num_classes)
        self.history_ = []
        self.mask_ = PruneMask.empty(model, freeze=self.pruning != "asfp")
        self.groups_ = compute_alignment_groups(model)

        schedule = LrSchedule(self.lr, self.lr_decay, self.lr_step)
        asfp = AsfpSchedule(self.asfp_target_rate, max(self.epochs, 1), self.asfp_exponent) if self.pruning == "asfp" else None
        opt = self._make_optimizer(model, self.lr)
        best, last = self._run(model, X, y, opt, self.epochs, schedule.lr_at, "train", eval_set, asfp=asfp)
        self.val_accuracy_, self.last_val_accuracy_ = best, last
        self.baseline_params_ = count_params(model)
        self.baseline_flops_ = count_flops(model)
        self.baseline_cost_ = cost_report(model, name="Baseline")

        self.rounds_ = []
        if self.pruning == "hard":
            self.baseline_model_ = model.copy()
            for r, rate in enumerate(self.prune_rates, start=1):
                self.mask_ = hard_prune_round(model, self.mask_, rate, self.norm_p, self.groups_)
                ft_lr = self.lr * self.fine_tune_lr_scale
                opt = self._make_optimizer(model, ft_lr)
                phase = f"round{r}"
                if self.fine_tune_epochs:
                    rb, rl = self._run(model, X, y, opt, self.fine_tune_epochs, lambda e, lr=ft_lr: lr, phase, eval_set, mask=self.mask_)
                else:
                    rb = rl = self._accuracy(model, eval_set) if eval_set is not None else None
                compacted = compact(model, self.mask_)
                cost = report_compression(self.baseline_cost_, cost_report(compacted, name=f"Round {r}"))
                self.rounds_.append({
                    "round": r,
                    "rate": float(rate),
                    "val_accuracy": rb,
                    "last_val_accuracy": rl,
                    "params": cost.total_params,
                    "flops": cost.total_flops,
                    "cost": cost,
                    "active_filters": {g.id: self.mask_.active_count(g.members[0]) for g in self.groups_ if g.prunable},
                })
        self.model_ = model
        return self

    def _run(self, model, X, y, opt, epochs, lr_fn, phase, eval_set, mask=None, asfp=None):
        n = X.shape[0]
        best = last = None
        for epoch in range(epochs):
            lr = lr_fn(epoch)
            opt.state.lr = lr
            model.train()
            order = self._shuffle_rng.permutation(n)
            losses, correct = [], 0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                xb = self._batch(X[idx], train=True)
                logits = forward(model, xb)
                loss = cross_entropy(logits, y[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(
                        f"non-finite loss in {phase} epoch {epoch}",
                        {"phase": phase, "epoch": epoch, "step": start // self.batch_size, "lr": lr, "loss": value},
                    )
                opt.zero_grad()
                loss.backward()
                if mask is not None and mask.freeze:
                    mask_gradients(model, mask)
                opt.step()
                if mask is not None and mask.freeze:
                    enforce_mask(model, mask)
                self.trained_ids_.update(self.sample_ids_[idx].tolist())
                losses.append(value)
                correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
            if asfp is not None:
                self.mask_ = asfp_epoch_end(model, asfp, epoch, self.norm_p, self.groups_)
            entry = {"phase": phase, "epoch": epoch, "lr": lr, "loss": float(np.mean(losses)) if losses else None,
                     "train_accuracy": correct / n}
            if eval_set is not None:
                acc = self._accuracy(model, eval_set)
                entry["val_accuracy"] = acc
                last = acc
                best = acc if best is None else max(best, acc)
            self.history_.append(entry)
            if self.verbose:
                logger.info("%s", entry)
        if epochs == 0 and eval_set is not None:
            best = last = self._accuracy(model, eval_set)
        return best, last

    def _accuracy(self, model, eval_set) -> float:
        Xv, yv = eval_set
        return float((self._predict_logits(model, Xv).argmax(axis=1) == yv).mean())

    # ------------------------------------------------------------ predict
    def _predict_logits(self, model, X) -> np.ndarray:
        model.eval()
        out = []
        with no_grad():
            for start in range(0, X.shape[0], self.eval_batch_size):
                out.append(forward(model, self._batch(X[start:start + self.eval_batch_size], train=False)).data)
        return np.concatenate(out)

    def decision_function(self, X) -> np.ndarray:
        """Raw logits [N, num_classes]."""
        check_is_fitted(self, "model_")
        return self._predict_logits(self.model_, check_images(X, self.model_.input_shape[0]))

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def compacted_model(self):
        """The fitted model with pruned filters physically removed."""
        check_is_fitted(self, "model_")
        return compact(self.model_, self.mask_)
