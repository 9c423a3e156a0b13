"""Combining collected checkpoints into a predictor: simple averaging of
member softmax outputs and a learned, bias-free weighted average, plus
member selection for the per-epoch collector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .collect import CheckpointRecord
from .errors import ConfigurationError, InputError, ShapeError
from .netcore import Batch, Metrics, ModelParams, evaluate, forward, softmax


@dataclass
class EnsembleSpec:
    """An ordered member list plus how to combine their outputs.

    In weighted mode ``weights`` has one entry per member, initialized
    uniform; the combiner that trains them is a single bias-free layer, so
    weights are unconstrained reals (negative entries are allowed and simply
    down-vote a member).
    """

    members: list[CheckpointRecord]
    mode: str = "simple"
    weights: np.ndarray | None = None
    combiner_lr: float = 0.01
    combiner_steps: int = 200

    def __post_init__(self):
        if not self.members:
            raise InputError("ensemble needs at least one member")
        if self.mode not in ("simple", "weighted"):
            raise ConfigurationError(f"mode must be 'simple' or 'weighted', got {self.mode!r}")
        if self.combiner_lr <= 0.0:
            raise ConfigurationError(f"combiner_lr must be positive, got {self.combiner_lr}")
        if self.combiner_steps < 0:
            raise ConfigurationError(
                f"combiner_steps must be >= 0, got {self.combiner_steps}"
            )
        t = len(self.members)
        if self.mode == "weighted":
            if self.weights is None:
                self.weights = np.full(t, 1.0 / t)
            else:
                self.weights = np.asarray(self.weights, dtype=np.float64)
                if self.weights.shape != (t,):
                    raise ShapeError(
                        f"need {t} weights for {t} members, got shape {self.weights.shape}"
                    )

    @property
    def size(self) -> int:
        return len(self.members)


def member_outputs(models: Sequence[ModelParams], inputs) -> np.ndarray:
    """Stacked member softmax outputs, shape (members, rows, classes)."""
    if not models:
        raise InputError("need at least one model")
    dims = models[0].layer_dims
    if any(m.layer_dims != dims for m in models):
        raise ShapeError("members have heterogeneous layer dims")
    return np.stack([forward(m, inputs) for m in models])


def simple_average(models: Sequence[ModelParams], inputs) -> np.ndarray:
    """Elementwise mean of member softmax outputs; rows still sum to 1."""
    return member_outputs(models, inputs).mean(axis=0)


def weighted_average(spec: EnsembleSpec, inputs) -> np.ndarray:
    """Per-row weighted sum of member softmax outputs.

    Scores, not probabilities: the weights are unconstrained, so rows need
    not sum to 1. Classification takes the argmax, which any positive
    rescaling of the weights leaves unchanged.
    """
    if spec.mode != "weighted":
        raise ConfigurationError("weighted_average requires a spec in weighted mode")
    if spec.weights.shape != (spec.size,):
        raise ShapeError(
            f"need {spec.size} weights for {spec.size} members, got shape {spec.weights.shape}"
        )
    outputs = member_outputs([r.params for r in spec.members], inputs)
    return np.tensordot(spec.weights, outputs, axes=1)


def train_combiner(spec: EnsembleSpec, val: Batch) -> np.ndarray:
    """Fit the member weights on a validation set the members never trained on.

    Full-batch gradient descent on the cross-entropy of softmax(weighted
    scores) against the validation labels; members stay frozen, their
    validation outputs are computed once. Keeps the best weights seen, so
    the result never scores worse than the uniform initialization.
    """
    if spec.mode != "weighted":
        raise ConfigurationError("train_combiner requires a spec in weighted mode")
    outputs = member_outputs([r.params for r in spec.members], val.inputs)
    labels = val.labels
    if labels.max() >= outputs.shape[2]:
        raise InputError(f"label {int(labels.max())} out of range")
    n = len(val)
    rows = np.arange(n)

    def val_loss(w):
        probs = softmax(np.tensordot(w, outputs, axes=1))
        return float(-np.mean(np.log(probs[rows, labels])))

    w = spec.weights.copy()
    best_w, best_loss = w.copy(), val_loss(w)
    for _ in range(spec.combiner_steps):
        probs = softmax(np.tensordot(w, outputs, axes=1))
        dscores = probs
        dscores[rows, labels] -= 1.0
        dscores /= n
        grad = np.tensordot(outputs, dscores, axes=([1, 2], [0, 1]))
        w = w - spec.combiner_lr * grad
        loss = val_loss(w)
        if loss < best_loss:
            best_loss, best_w = loss, w.copy()
    spec.weights = best_w
    return best_w


def select_top_k(records: Sequence[CheckpointRecord], k: int, split: Batch) -> list[CheckpointRecord]:
    """The k records with the highest accuracy on the split; ties go to the
    earlier collection step."""
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if k > len(records):
        raise InputError(f"k={k} exceeds the {len(records)} records available")
    scored = [(evaluate(r.params, split).accuracy, r) for r in records]
    scored.sort(key=lambda pair: (-pair[0], pair[1].collected_at_step))
    return [r for _, r in scored[:k]]


@dataclass(frozen=True)
class EnsembleReport:
    """Ensemble metrics next to its members' individual test accuracies."""

    mode: str
    size: int
    metrics: Metrics
    member_accuracies: tuple[float, ...]
    best_member_acc: float
    mean_member_acc: float
    improvement: float  # ensemble accuracy minus best member accuracy


def evaluate_ensemble(spec: EnsembleSpec, test: Batch) -> EnsembleReport:
    """Accuracy of the combined prediction plus per-member accuracies."""
    models = [r.params for r in spec.members]
    if spec.mode == "simple":
        scores = simple_average(models, test.inputs)
        probs = scores
    else:
        scores = weighted_average(spec, test.inputs)
        probs = softmax(scores)  # weighted scores are unnormalized
    labels = test.labels
    if labels.max() >= scores.shape[1]:
        raise InputError(f"label {int(labels.max())} out of range")
    preds = np.argmax(scores, axis=1)
    correct = int(np.count_nonzero(preds == labels))
    loss = float(-np.mean(np.log(probs[np.arange(len(test)), labels])))
    member_accs = tuple(evaluate(m, test).accuracy for m in models)
    best = max(member_accs)
    ensemble_acc = correct / len(test)
    return EnsembleReport(
        mode=spec.mode,
        size=spec.size,
        metrics=Metrics(mean_loss=loss, accuracy=ensemble_acc),
        member_accuracies=member_accs,
        best_member_acc=best,
        mean_member_acc=float(np.mean(member_accs)),
        improvement=ensemble_acc - best,
    )
