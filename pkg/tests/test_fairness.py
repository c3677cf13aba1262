"""Hard and surrogate fairness violations and the surrogate gradient."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairtrace.fairness import (METRICS, UndefinedMetricError, FairnessValue,
                                fairness_value, grad_surrogate, hard_violation,
                                surrogate_violation)
from fairtrace.model import logits

from conftest import random_dataset, random_theta


def brute_force_hard(metric, predictions, y, group):
    """Violations recomputed literally from their definitions."""
    def rate(a, label=None):
        mask = group == a if label is None else (group == a) & (y == label)
        return predictions[mask].mean()

    if metric == "dp":
        return abs(rate(0) - rate(1))
    if metric == "eop":
        return abs(rate(0, 1) - rate(1, 1))
    return 0.5 * (abs(rate(0, 1) - rate(1, 1)) + abs(rate(0, 0) - rate(1, 0)))


def fd_grad_surrogate(metric, theta, X, y, group, h=1e-6):
    out = np.empty(theta.size)
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        out[j] = (surrogate_violation(metric, theta + e, X, y, group)
                  - surrogate_violation(metric, theta - e, X, y, group)) / (2 * h)
    return out


# -- anchors ------------------------------------------------------------------------


def test_dp_surrogate_anchor():
    # Group 0 logits {2, 4} (mean 3), group 1 logit {1}: gap |3 - 1| = 2.
    X = np.array([[2.0], [4.0], [1.0]])
    theta = np.array([1.0, 0.0])  # logit equals the single feature
    y = np.array([1, 0, 1])
    group = np.array([0, 0, 1])
    assert surrogate_violation("dp", theta, X, y, group) == 2.0


def test_hard_dp_anchor():
    preds = np.array([1, 1, 0, 0])
    y = np.array([1, 0, 1, 0])
    group = np.array([0, 0, 1, 1])
    assert hard_violation("dp", preds, y, group) == 1.0
    assert hard_violation("eop", preds, y, group) == 1.0
    assert hard_violation("eo", preds, y, group) == 1.0


def test_constant_predictions_have_zero_violation():
    y = np.array([0, 1, 0, 1])
    group = np.array([0, 0, 1, 1])
    for metric in METRICS:
        assert hard_violation(metric, np.ones(4), y, group) == 0.0
        assert hard_violation(metric, np.zeros(4), y, group) == 0.0


def test_unknown_metric_rejected():
    data = np.zeros(4), np.array([0, 1, 0, 1]), np.array([0, 0, 1, 1])
    with pytest.raises(ValueError, match="unknown metric"):
        hard_violation("dpp", *data)
    with pytest.raises(ValueError, match="unknown metric"):
        grad_surrogate("", np.zeros(2), np.zeros((4, 1)), data[1], data[2])


@pytest.mark.parametrize("metric, bad_groups, fragment", [
    ("dp", np.zeros(4, dtype=int), "group=1"),
    ("eop", np.array([0, 0, 1, 1]), "group=1 and label=1"),
    ("eo", np.array([1, 1, 0, 0]), "group=0 and label=1"),
])
def test_empty_cell_raises_undefined_metric(metric, bad_groups, fragment):
    # labels chosen so group 1 (resp. 0) has no positives
    y = np.array([1, 1, 0, 0]) if metric != "dp" else np.array([0, 1, 0, 1])
    with pytest.raises(UndefinedMetricError, match=fragment):
        hard_violation(metric, np.ones(4), y, bad_groups)


# -- brute-force and finite-difference oracles ----------------------------------------


@pytest.mark.parametrize("metric", METRICS)
@pytest.mark.parametrize("seed", range(5))
def test_hard_violation_matches_definition(metric, seed):
    rng = np.random.default_rng(seed)
    n = 40
    preds = rng.integers(0, 2, size=n).astype(np.float64)
    y = rng.integers(0, 2, size=n)
    group = rng.integers(0, 2, size=n)
    # ensure all four cells are populated
    y[:4] = [0, 0, 1, 1]
    group[:4] = [0, 1, 0, 1]
    assert hard_violation(metric, preds, y, group) == pytest.approx(
        brute_force_hard(metric, preds, y, group), abs=1e-15)


@pytest.mark.parametrize("metric", METRICS)
@pytest.mark.parametrize("seed", range(5))
def test_surrogate_is_hard_violation_of_logits_means(metric, seed):
    # The surrogate applies the same gap formula to raw logits; check against
    # an independent recomputation.
    ds = random_dataset(n=30, d=3, seed=seed)
    theta = random_theta(ds.d, seed=seed)
    g = logits(theta, ds.X)
    assert surrogate_violation(metric, theta, ds.X, ds.y, ds.group) == (
        pytest.approx(brute_force_hard(metric, g, ds.y, ds.group), abs=1e-15))


@pytest.mark.parametrize("metric", METRICS)
@pytest.mark.parametrize("seed", range(6))
def test_grad_surrogate_matches_finite_differences(metric, seed):
    ds = random_dataset(n=36, d=4, seed=seed + 17)
    theta = random_theta(ds.d, seed=seed)
    # FD through |.| is only valid away from the kink.
    gap = surrogate_violation(metric, theta, ds.X, ds.y, ds.group)
    assert gap > 1e-3, "fixture should stay clear of the tie point"
    np.testing.assert_allclose(
        grad_surrogate(metric, theta, ds.X, ds.y, ds.group),
        fd_grad_surrogate(metric, theta, ds.X, ds.y, ds.group),
        rtol=1e-6, atol=1e-8)


def test_grad_surrogate_zero_at_exact_tie():
    # Two cells engineered to share a mean logit while their mean features
    # differ, so only the tie convention can make the gradient vanish.
    X = np.array([[1.0, 5.0], [-1.0, 5.0], [0.0, 7.0]])
    theta = np.array([1.0, 0.0, 0.0])  # logits 1, -1, 0 -> means 0 and 0
    y = np.array([1, 1, 1])
    group = np.array([0, 0, 1])
    assert surrogate_violation("dp", theta, X, y, group) == 0.0
    np.testing.assert_array_equal(
        grad_surrogate("dp", theta, X, y, group), np.zeros(3))


# -- structural identities ------------------------------------------------------------


@pytest.mark.parametrize("seed", range(4))
def test_eo_averages_the_two_label_gaps(seed):
    ds = random_dataset(n=32, d=3, seed=seed + 3)
    theta = random_theta(ds.d, seed=seed)
    eo = surrogate_violation("eo", theta, ds.X, ds.y, ds.group)
    eop_pos = surrogate_violation("eop", theta, ds.X, ds.y, ds.group)
    eop_neg = surrogate_violation("eop", theta, ds.X, 1 - ds.y, ds.group)
    assert eo == pytest.approx(0.5 * (eop_pos + eop_neg), rel=1e-14)
    g_eo = grad_surrogate("eo", theta, ds.X, ds.y, ds.group)
    g_pos = grad_surrogate("eop", theta, ds.X, ds.y, ds.group)
    g_neg = grad_surrogate("eop", theta, ds.X, 1 - ds.y, ds.group)
    np.testing.assert_allclose(g_eo, 0.5 * (g_pos + g_neg), rtol=1e-14)


@pytest.mark.parametrize("metric", METRICS)
def test_violations_invariant_to_group_relabeling(metric):
    ds = random_dataset(n=30, d=3, seed=8)
    theta = random_theta(ds.d, seed=2)
    preds = np.random.default_rng(0).integers(0, 2, size=ds.n)
    assert hard_violation(metric, preds, ds.y, ds.group) == pytest.approx(
        hard_violation(metric, preds, ds.y, 1 - ds.group), abs=1e-15)
    assert surrogate_violation(metric, theta, ds.X, ds.y, ds.group) == (
        pytest.approx(
            surrogate_violation(metric, theta, ds.X, ds.y, 1 - ds.group),
            abs=1e-15))


def test_surrogate_scales_linearly_in_theta():
    ds = random_dataset(n=30, d=3, seed=4)
    theta = random_theta(ds.d, seed=1)
    one = surrogate_violation("dp", theta, ds.X, ds.y, ds.group)
    two = surrogate_violation("dp", 2.0 * theta, ds.X, ds.y, ds.group)
    assert two == pytest.approx(2.0 * one, rel=1e-12)
    # the gradient of |gap| only flips with the sign of the gap, not its size
    np.testing.assert_allclose(
        grad_surrogate("dp", theta, ds.X, ds.y, ds.group),
        grad_surrogate("dp", 2.0 * theta, ds.X, ds.y, ds.group), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_violations_nonnegative(seed):
    rng = np.random.default_rng(seed)
    n = 24
    y = rng.integers(0, 2, size=n)
    group = rng.integers(0, 2, size=n)
    y[:4] = [0, 0, 1, 1]
    group[:4] = [0, 1, 0, 1]
    preds = rng.integers(0, 2, size=n).astype(np.float64)
    X = rng.normal(size=(n, 3))
    theta = rng.normal(size=4)
    for metric in METRICS:
        assert hard_violation(metric, preds, y, group) >= 0.0
        assert surrogate_violation(metric, theta, X, y, group) >= 0.0


# -- combined report ------------------------------------------------------------------


def test_fairness_value_is_consistent_with_parts():
    ds = random_dataset(n=40, d=4, seed=6)
    theta = random_theta(ds.d, seed=3)
    for metric in METRICS:
        fv = fairness_value(metric, theta, ds.X, ds.y, ds.group)
        assert isinstance(fv, FairnessValue) and fv.metric == metric
        preds = (logits(theta, ds.X) >= 0).astype(float)
        assert fv.hard == hard_violation(metric, preds, ds.y, ds.group)
        assert fv.surrogate == surrogate_violation(metric, theta, ds.X, ds.y,
                                                   ds.group)
    dp = fairness_value("dp", theta, ds.X, ds.y, ds.group)
    assert set(dp.group_terms) == {"a=0", "a=1"}
    eo = fairness_value("eo", theta, ds.X, ds.y, ds.group)
    assert set(eo.group_terms) == {"a=0,y=0", "a=0,y=1", "a=1,y=0", "a=1,y=1"}
    cell = eo.group_terms["a=1,y=1"]
    mask = (ds.group == 1) & (ds.y == 1)
    assert cell["mean_logit"] == pytest.approx(
        logits(theta, ds.X)[mask].mean(), rel=1e-15)
    assert cell["positive_rate"] == pytest.approx(
        (logits(theta, ds.X)[mask] >= 0).mean(), abs=1e-15)
