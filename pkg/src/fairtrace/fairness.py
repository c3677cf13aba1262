"""Group-fairness violation measures and their smooth surrogates.

Three criteria over a binary sensitive attribute are supported:

- ``dp``  demographic parity: gap in positive-prediction rate between groups.
- ``eop`` equal opportunity: the same gap restricted to truly positive samples.
- ``eo``  equalized odds: the average of the label-1 and label-0 gaps.

Each has a hard version (thresholded predictions, the quantity one reports)
and a surrogate version (gaps of mean logits, which is differentiable in the
model parameters and is what influence scores are computed against).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import augment, logits

METRICS = ("dp", "eop", "eo")


class UndefinedMetricError(ValueError):
    """A (group, label) cell needed by the requested metric is empty."""


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def _cell_mask(group: np.ndarray, y: np.ndarray, a: int, label) -> np.ndarray:
    mask = group == a
    if label is not None:
        mask = mask & (y == label)
    return mask


def _require_cell(mask: np.ndarray, a: int, label) -> None:
    if not mask.any():
        where = f"group={a}" if label is None else f"group={a} and label={label}"
        raise UndefinedMetricError(f"metric undefined: no samples with {where}")


def _gap(values: np.ndarray, group: np.ndarray, y: np.ndarray, label) -> float:
    """Signed difference of cell means: group 0 minus group 1."""
    means = []
    for a in (0, 1):
        mask = _cell_mask(group, y, a, label)
        _require_cell(mask, a, label)
        means.append(float(values[mask].mean()))
    return means[0] - means[1]


def hard_violation(metric: str, predictions: np.ndarray, y: np.ndarray,
                   group: np.ndarray) -> float:
    """Fairness violation of hard 0/1 predictions (the reported quantity)."""
    _check_metric(metric)
    predictions = np.asarray(predictions, dtype=np.float64)
    if metric == "dp":
        return abs(_gap(predictions, group, y, label=None))
    if metric == "eop":
        return abs(_gap(predictions, group, y, label=1))
    return 0.5 * (abs(_gap(predictions, group, y, label=1))
                  + abs(_gap(predictions, group, y, label=0)))


def surrogate_violation(metric: str, theta: np.ndarray, X: np.ndarray,
                        y: np.ndarray, group: np.ndarray) -> float:
    """Smooth violation: absolute gaps of per-cell mean logits."""
    _check_metric(metric)
    g = logits(theta, X)
    if metric == "dp":
        return abs(_gap(g, group, y, label=None))
    if metric == "eop":
        return abs(_gap(g, group, y, label=1))
    return 0.5 * (abs(_gap(g, group, y, label=1)) + abs(_gap(g, group, y, label=0)))


def _gap_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
              group: np.ndarray, label) -> np.ndarray:
    """Gradient of one absolute cell-mean gap with respect to theta.

    The logit is linear in theta with coefficient phi(x), so the gradient of
    |mean_0 - mean_1| is sign(gap) * (mean phi over cell 0 - mean phi over
    cell 1). At an exact tie the subgradient 0 is returned.
    """
    g = logits(theta, X)
    phi = augment(X)
    means = []
    for a in (0, 1):
        mask = _cell_mask(group, y, a, label)
        _require_cell(mask, a, label)
        means.append(phi[mask].mean(axis=0))
    gap = _gap(g, group, y, label)
    return float(np.sign(gap)) * (means[0] - means[1])


def grad_surrogate(metric: str, theta: np.ndarray, X: np.ndarray,
                   y: np.ndarray, group: np.ndarray) -> np.ndarray:
    """Gradient of the surrogate violation with respect to theta, shape (d+1,)."""
    _check_metric(metric)
    if metric == "dp":
        return _gap_grad(theta, X, y, group, label=None)
    if metric == "eop":
        return _gap_grad(theta, X, y, group, label=1)
    return 0.5 * (_gap_grad(theta, X, y, group, label=1)
                  + _gap_grad(theta, X, y, group, label=0))


@dataclass(frozen=True)
class FairnessValue:
    """Hard and surrogate violations with the per-cell averages behind them.

    The two numbers live on different scales (rates vs raw logits) and are
    never comparable to each other; both are reported.
    """

    metric: str
    hard: float
    surrogate: float
    group_terms: dict


def fairness_value(metric: str, theta: np.ndarray, X: np.ndarray,
                   y: np.ndarray, group: np.ndarray) -> FairnessValue:
    """Evaluate both violation flavors plus per-cell positive rates and
    mean logits, keyed like ``"a=0"`` or ``"a=1,y=0"``."""
    _check_metric(metric)
    g = logits(theta, X)
    preds = (g >= 0.0).astype(np.float64)
    labels = [None] if metric == "dp" else ([1] if metric == "eop" else [1, 0])
    terms = {}
    for label in labels:
        for a in (0, 1):
            mask = _cell_mask(group, y, a, label)
            _require_cell(mask, a, label)
            key = f"a={a}" if label is None else f"a={a},y={label}"
            terms[key] = {"positive_rate": float(preds[mask].mean()),
                          "mean_logit": float(g[mask].mean())}
    return FairnessValue(
        metric=metric,
        hard=hard_violation(metric, preds, y, group),
        surrogate=surrogate_violation(metric, theta, X, y, group),
        group_terms=terms,
    )
