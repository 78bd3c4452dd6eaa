"""Fairness-violation and accuracy metrics, all by exact counting.

DEO is the absolute difference of group true-positive rates; the p% rule
is the min ratio of group positive-prediction rates; the subgroup risk
gap is the absolute difference of group mean losses (zero means the
predictor treats both groups' risk identically).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import Dataset
from .model import ModelParams, bce_batch, forward_batch


class MetricDomainError(ValueError):
    """A metric's preconditions on group composition are violated."""


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation bundle for one trained model on one test set."""

    f1_weighted_macro: float
    deo: float
    p_percent: float
    subgroup_risk_gap: float
    n_test: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def deo(pred_labels: np.ndarray, true_labels: np.ndarray, groups: np.ndarray) -> float:
    """|P(pred=+1 | A=1, Y=+1) - P(pred=+1 | A=0, Y=+1)| by exact counting."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    a = np.asarray(groups)
    tpr = []
    for g in (0, 1):
        mask = (a == g) & (true == 1)
        if not mask.any():
            raise MetricDomainError(f"group {g} has no positive-labeled rows; DEO undefined")
        tpr.append((pred[mask] == 1).sum() / mask.sum())
    return float(abs(tpr[1] - tpr[0]))


def p_percent(pred_labels: np.ndarray, groups: np.ndarray) -> float:
    """min of the two ratios of group positive-prediction rates.

    Both rates zero counts as perfectly equal treatment (1.0); exactly one
    zero rate is maximal disparity (0.0).
    """
    pred = np.asarray(pred_labels)
    a = np.asarray(groups)
    rates = []
    for g in (0, 1):
        mask = a == g
        if not mask.any():
            raise MetricDomainError(f"group {g} is empty; p% undefined")
        rates.append((pred[mask] == 1).sum() / mask.sum())
    r0, r1 = rates
    if r0 == 0.0 and r1 == 0.0:
        return 1.0
    if r0 == 0.0 or r1 == 0.0:
        return 0.0
    return float(min(r0 / r1, r1 / r0))


def weighted_macro_f1(pred_labels: np.ndarray, true_labels: np.ndarray) -> float:
    """Per-class F1 averaged with weights n_class / N over classes {-1,+1}."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.size == 0:
        raise MetricDomainError("empty prediction set")
    total = 0.0
    for c in (-1, 1):
        tp = int(((pred == c) & (true == c)).sum())
        fp = int(((pred == c) & (true != c)).sum())
        fn = int(((pred != c) & (true == c)).sum())
        denom = 2 * tp + fp + fn
        f1 = 2.0 * tp / denom if denom > 0 else 0.0
        total += (true == c).sum() / true.size * f1
    return float(total)


def subgroup_risk_gap(params: ModelParams, dataset: Dataset, loss_fn=None) -> float:
    """Absolute difference of the two groups' mean losses.

    loss_fn(probs, y) defaults to binary cross-entropy; a 0-1 loss works
    too since nothing here needs differentiability.
    """
    if loss_fn is None:
        loss_fn = bce_batch
    probs, _, _ = forward_batch(params, dataset.features)
    losses = np.asarray(loss_fn(probs, dataset.y), dtype=float)
    means = []
    for g in (0, 1):
        mask = dataset.a == g
        if not mask.any():
            raise MetricDomainError(f"group {g} is empty; risk gap undefined")
        means.append(losses[mask].mean())
    return float(abs(means[0] - means[1]))


def zero_one_batch(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    """0-1 loss of thresholded probabilities against labels in {-1,+1}."""
    pred = np.where(np.asarray(probs) >= 0.5, 1, -1)
    return (pred != np.asarray(y)).astype(float)


def evaluate(params: ModelParams, dataset: Dataset, seed: int = 0) -> MetricsReport:
    """All four metrics of one model on one dataset."""
    probs, _, _ = forward_batch(params, dataset.features)
    pred = np.where(probs >= 0.5, 1, -1)
    return MetricsReport(
        f1_weighted_macro=weighted_macro_f1(pred, dataset.y),
        deo=deo(pred, dataset.y, dataset.a),
        p_percent=p_percent(pred, dataset.a),
        subgroup_risk_gap=subgroup_risk_gap(params, dataset),
        n_test=dataset.n,
        seed=int(seed),
    )
