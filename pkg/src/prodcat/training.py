"""SGDR training loop and evaluation metrics.

The learning rate follows cosine annealing with warm restarts: the first
cycle lasts one epoch and every cycle doubles the previous one, so restarts
fall at cumulative epochs 1, 3, 7, 15, ... Training is plain minibatch SGD
(momentum optional, default off) and the checkpoint with the lowest
validation loss is the one retained.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Parameter, Tensor, no_grad, softmax_cross_entropy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgdrSchedule:
    """Cosine-annealed learning rate with period-doubling warm restarts."""

    base_lr: float
    min_lr: float = 0.0
    steps_per_epoch: int = 1
    first_cycle_epochs: int = 1

    def __post_init__(self):
        if not self.base_lr > self.min_lr >= 0:
            raise ValueError(f"need base_lr > min_lr >= 0, got {self.base_lr}, {self.min_lr}")
        if self.steps_per_epoch < 1 or self.first_cycle_epochs < 1:
            raise ValueError("steps_per_epoch and first_cycle_epochs must be >= 1")

    def locate(self, global_step: float) -> tuple[int, float, int]:
        """(cycle index, offset within cycle in steps, cycle length in steps)."""
        if global_step < 0:
            raise ValueError(f"global_step must be >= 0, got {global_step}")
        remaining = float(global_step)
        cycle, cycle_epochs = 0, self.first_cycle_epochs
        while True:
            cycle_steps = cycle_epochs * self.steps_per_epoch
            if remaining < cycle_steps:
                return cycle, remaining, cycle_steps
            remaining -= cycle_steps
            cycle += 1
            cycle_epochs *= 2

    def lr_at(self, global_step: float) -> float:
        _, offset, cycle_steps = self.locate(global_step)
        span = self.base_lr - self.min_lr
        return self.min_lr + 0.5 * span * (1.0 + math.cos(math.pi * offset / cycle_steps))

    def cycle_boundaries_epochs(self, n: int) -> list[int]:
        """Cumulative epochs at which the first n restarts happen: 1, 3, 7, ..."""
        bounds, total, cycle_epochs = [], 0, self.first_cycle_epochs
        for _ in range(n):
            total += cycle_epochs
            bounds.append(total)
            cycle_epochs *= 2
        return bounds


def lr_at(schedule: SgdrSchedule, global_step: float) -> float:
    """Learning rate at a (possibly fractional) global step."""
    return schedule.lr_at(global_step)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "lr": self.lr,
        }


@dataclass
class TrainResult:
    arrays: dict[str, np.ndarray]
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None


def _snapshot(params: Mapping[str, Parameter]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def sgd_train(
    forward_fn: Callable[[Sequence], Tensor],
    params: Mapping[str, Parameter],
    X: Sequence,
    y: np.ndarray,
    X_val: Sequence,
    y_val: np.ndarray,
    schedule: SgdrSchedule,
    epochs: int,
    batch_size: int,
    seed: int = 0,
    momentum: float = 0.0,
) -> TrainResult:
    """Minibatch SGD on softmax cross-entropy, keeping the best-val snapshot.

    `forward_fn(batch_inputs)` must return the [B, C] logits tensor computed
    from `params`. Fully deterministic for a fixed seed on a single thread.
    """
    if len(X) == 0:
        raise ValueError("training split is empty")
    if epochs < 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0 and batch_size >= 1")
    y = np.asarray(y, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    rng = np.random.default_rng([seed, 0x5D])
    velocity = {name: np.zeros_like(p.data) for name, p in params.items()} if momentum else None
    result = TrainResult(arrays=_snapshot(params))
    best_val = math.inf
    global_step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(X))
        loss_sum, seen = 0.0, 0
        for start in range(0, len(X), batch_size):
            batch_idx = order[start : start + batch_size]
            batch = [X[i] for i in batch_idx]
            lr = schedule.lr_at(global_step)
            logits = forward_fn(batch)
            loss = softmax_cross_entropy(logits, y[batch_idx])
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                ids = [getattr(p, "id", "?") for p in batch[:8]]
                raise RuntimeError(
                    f"non-finite loss at step {global_step} (lr={lr:.6g}, batch ids {ids})"
                )
            for p in params.values():
                p.zero_grad()
            loss.backward()
            for name, p in params.items():
                if velocity is not None:
                    velocity[name] = momentum * velocity[name] + p.grad
                    p.data -= lr * velocity[name]
                else:
                    p.data -= lr * p.grad
            loss_sum += loss_value * len(batch)
            seen += len(batch)
            global_step += 1
        val_loss = evaluate_loss(forward_fn, X_val, y_val, batch_size) if len(X_val) else math.nan
        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / seen,
            val_loss=val_loss,
            lr=schedule.lr_at(global_step),
        )
        result.history.append(record)
        logger.info(
            "epoch %d: train_loss=%.4f val_loss=%.4f lr=%.5f",
            record.epoch, record.train_loss, record.val_loss, record.lr,
        )
        if not len(X_val) or val_loss < best_val:
            best_val = val_loss if len(X_val) else best_val
            result.arrays = _snapshot(params)
            result.best_epoch = epoch
    return result


def evaluate_loss(
    forward_fn: Callable[[Sequence], Tensor],
    X: Sequence,
    y: np.ndarray,
    batch_size: int,
) -> float:
    """Mean cross-entropy of a frozen model over a dataset."""
    if len(X) == 0:
        raise ValueError("evaluation set is empty")
    y = np.asarray(y, dtype=np.int64)
    total, seen = 0.0, 0
    with no_grad():
        for start in range(0, len(X), batch_size):
            batch = [X[i] for i in range(start, min(start + batch_size, len(X)))]
            loss = softmax_cross_entropy(forward_fn(batch), y[start : start + len(batch)])
            total += loss.item() * len(batch)
            seen += len(batch)
    return total / seen


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    """Top-k accuracy plus per-class precision/recall/f1 from top-1 counts."""

    topk_accuracy: dict[int, float]
    per_class: dict[str, ClassMetrics]

    def to_dict(self) -> dict:
        return {
            "topk_accuracy": {str(k): v for k, v in self.topk_accuracy.items()},
            "per_class": {
                label: {"precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
                for label, m in self.per_class.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        return cls(
            topk_accuracy={int(k): float(v) for k, v in doc["topk_accuracy"].items()},
            per_class={
                label: ClassMetrics(m["precision"], m["recall"], m["f1"], int(m["support"]))
                for label, m in doc["per_class"].items()
            },
        )


def evaluate(model, X: Sequence, y: Sequence[str], ks: Sequence[int] = (1, 2, 3)) -> MetricsReport:
    """Score a fitted classifier: top-k accuracy and per-class f1.

    `model` needs `predict_topk(X, k)` and `classes_`. The report covers
    every class the model knows, including classes absent from `X` (support
    0), so two models trained on the same data produce comparable reports.
    """
    if len(X) == 0:
        raise ValueError("evaluation needs at least one example")
    if len(X) != len(y):
        raise ValueError(f"X and y have inconsistent lengths: {len(X)} vs {len(y)}")
    ks = sorted(set(int(k) for k in ks))
    rankings = model.predict_topk(X, k=max(ks))
    hits = {k: 0 for k in ks}
    true_count: dict[str, int] = {label: 0 for label in model.classes_}
    pred_count: dict[str, int] = {label: 0 for label in model.classes_}
    correct_count: dict[str, int] = {label: 0 for label in model.classes_}
    for truth, ranked in zip(y, rankings):
        labels = [label for label, _ in ranked]
        for k in ks:
            if truth in labels[:k]:
                hits[k] += 1
        top1 = labels[0]
        true_count[truth] = true_count.get(truth, 0) + 1
        pred_count[top1] += 1
        if top1 == truth:
            correct_count[truth] += 1
    per_class = {}
    for label in model.classes_:
        tp = correct_count[label]
        support = true_count[label]
        precision = tp / pred_count[label] if pred_count[label] else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = ClassMetrics(precision, recall, f1, support)
    return MetricsReport(
        topk_accuracy={k: hits[k] / len(X) for k in ks},
        per_class=per_class,
    )


def f1_lift_report(
    report_a: MetricsReport, report_b: MetricsReport, min_support: int = 100
) -> list[tuple[str, float]]:
    """Per-class f1 gain of report_b over report_a, best first.

    Classes below `min_support` in the evaluation set are excluded. Both
    reports must come from the same label set and evaluation set.
    """
    labels_a, labels_b = set(report_a.per_class), set(report_b.per_class)
    if labels_a != labels_b:
        raise ValueError(
            f"reports cover different label sets ({len(labels_a)} vs {len(labels_b)} labels)"
        )
    rows = []
    for label in report_a.per_class:
        ma, mb = report_a.per_class[label], report_b.per_class[label]
        if ma.support != mb.support:
            raise ValueError(f"reports disagree on support for {label!r}; not the same evaluation set")
        if ma.support < min_support:
            continue
        rows.append((label, mb.f1 - ma.f1))
    rows.sort(key=lambda row: (-row[1], row[0]))
    return rows
