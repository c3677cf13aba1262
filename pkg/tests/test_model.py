"""Logistic loss, derivatives, training loop, and the estimator wrapper."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from fairtrace.model import (LogisticModel, TrainConfig, TrainingDivergedError,
                             TrainingError, augment, grad, grad_samples,
                             hessian, hessian_trace, hvp, load_model, logits,
                             loss, sample_losses, save_model, sigmoid,
                             train_theta)
from fairtrace.synthetic import generate

from conftest import random_dataset, random_theta


def random_problem(n=30, d=4, seed=0, theta_scale=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, size=n).astype(np.float64)
    theta = random_theta(d, seed=seed + 1, scale=theta_scale)
    return X, y, theta


def fd_grad(theta, X, y, damping, h=1e-5):
    out = np.empty(theta.size)
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        out[j] = (loss(theta + e, X, y, damping)
                  - loss(theta - e, X, y, damping)) / (2 * h)
    return out


def fd_hessian(theta, X, y, damping, h=1e-5):
    out = np.empty((theta.size, theta.size))
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        out[:, j] = (grad(theta + e, X, y, damping)
                     - grad(theta - e, X, y, damping)) / (2 * h)
    return out


# -- analytic anchors ---------------------------------------------------------------


def test_loss_at_zero_logit_is_log_two():
    X = np.array([[0.0]])
    y = np.array([1.0])
    theta = np.zeros(2)
    assert loss(theta, X, y, 0.0) == pytest.approx(np.log(2.0), rel=1e-15)


def test_loss_extremes_are_stable():
    X = np.array([[1.0]])
    theta = np.array([20.0, 0.0])  # logit +20
    assert loss(theta, X, np.array([1.0]), 0.0) == pytest.approx(2.061e-9, rel=1e-3)
    assert loss(theta, X, np.array([0.0]), 0.0) == pytest.approx(20.0, rel=1e-9)
    theta = np.array([-20.0, 0.0])  # logit -20
    assert loss(theta, X, np.array([1.0]), 0.0) == pytest.approx(20.0, rel=1e-9)
    # Far outside exp range: still finite, linear in the logit.
    theta = np.array([-5000.0, 0.0])
    assert loss(theta, X, np.array([1.0]), 0.0) == pytest.approx(5000.0, rel=1e-12)


def test_grad_anchor_single_sample():
    # x = (1, 0), y = 1, theta = 0 so the logit is 0 and sigma = 1/2.
    X = np.array([[1.0, 0.0]])
    y = np.array([1.0])
    g = grad(np.zeros(3), X, y, 0.0)
    np.testing.assert_allclose(g, [-0.5, 0.0, -0.5], rtol=0, atol=0)


def test_hessian_anchor_single_sample():
    # x = (1,), logit 0: w = 1/4, phi = (1, 1) -> H = 0.25 * ones(2, 2).
    X = np.array([[1.0]])
    y = np.array([1.0])
    H = hessian(np.zeros(2), X, y, 0.0)
    np.testing.assert_array_equal(H, 0.25 * np.ones((2, 2)))
    H2 = hessian(np.zeros(2), X, y, 0.5)
    np.testing.assert_array_equal(H2, 0.25 * np.ones((2, 2)) + 0.5 * np.eye(2))


def test_sigmoid_values():
    z = np.array([0.0, 1000.0, -1000.0])
    s = sigmoid(z)
    assert s[0] == 0.5 and s[1] == 1.0 and s[2] == 0.0
    zs = np.linspace(-30, 30, 201)
    np.testing.assert_allclose(sigmoid(-zs), 1.0 - sigmoid(zs), atol=1e-15)
    assert (np.diff(sigmoid(zs)) > 0).all()


def test_augment_and_logits():
    X = np.array([[2.0, 3.0]])
    np.testing.assert_array_equal(augment(X), [[2.0, 3.0, 1.0]])
    theta = np.array([1.0, -1.0, 0.25])
    assert logits(theta, X)[0] == 2.0 - 3.0 + 0.25


# -- finite-difference oracles ------------------------------------------------------


@pytest.mark.parametrize("seed", range(8))
def test_grad_matches_finite_differences(seed):
    X, y, theta = random_problem(seed=seed)
    damping = 0.0 if seed % 2 else 0.05
    g = grad(theta, X, y, damping)
    np.testing.assert_allclose(g, fd_grad(theta, X, y, damping),
                               rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("seed", range(8))
def test_hessian_matches_finite_differences(seed):
    X, y, theta = random_problem(n=25, d=3, seed=seed)
    damping = 0.03
    H = hessian(theta, X, y, damping)
    np.testing.assert_allclose(H, fd_hessian(theta, X, y, damping),
                               rtol=1e-5, atol=1e-7)


def test_grad_is_mean_of_sample_grads_plus_damping():
    X, y, theta = random_problem(seed=3)
    rows = grad_samples(theta, X, y)
    assert rows.shape == (30, 5)
    np.testing.assert_allclose(grad(theta, X, y, 0.07),
                               rows.mean(axis=0) + 0.07 * theta, rtol=1e-12)


# -- Hessian structure --------------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_hessian_is_bitwise_symmetric(seed):
    X, y, theta = random_problem(n=37, d=6, seed=seed, theta_scale=1.5)
    H = hessian(theta, X, y, 0.01)
    assert H.tobytes() == np.ascontiguousarray(H.T).tobytes()


def test_hessian_is_positive_definite_with_damping():
    X, y, theta = random_problem(seed=4)
    H = hessian(theta, X, y, 0.01)
    assert np.linalg.eigvalsh(H).min() >= 0.01 - 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_hvp_matches_dense_hessian(seed):
    X, y, theta = random_problem(n=20, d=5, seed=seed)
    rng = np.random.default_rng(seed + 100)
    v = rng.normal(size=theta.size)
    H = hessian(theta, X, y, 0.02)
    np.testing.assert_allclose(hvp(theta, X, y, v, 0.02), H @ v,
                               rtol=1e-10, atol=1e-12)


def test_hvp_linearity_and_zero():
    X, y, theta = random_problem(seed=7)
    rng = np.random.default_rng(0)
    v1, v2 = rng.normal(size=(2, theta.size))
    lhs = hvp(theta, X, y, v1 + v2, 0.01)
    rhs = hvp(theta, X, y, v1, 0.01) + hvp(theta, X, y, v2, 0.01)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(hvp(theta, X, y, np.zeros(theta.size), 0.0),
                                  np.zeros(theta.size))


def test_hessian_trace_matches_dense():
    X, y, theta = random_problem(seed=9)
    H = hessian(theta, X, y, 0.04)
    assert hessian_trace(theta, X, 0.04) == pytest.approx(np.trace(H), rel=1e-12)


# -- property tests -----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 10.0))
def test_losses_nonnegative_and_finite(seed, scale):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 3)) * (1.0 + scale)
    y = rng.integers(0, 2, size=12).astype(np.float64)
    theta = rng.normal(size=4) * (1.0 + scale * 100)
    per = sample_losses(theta, X, y)
    assert np.isfinite(per).all() and (per >= 0).all()
    assert np.isfinite(grad(theta, X, y, 0.01)).all()
    assert np.isfinite(hessian(theta, X, y, 0.01)).all()


# -- training -----------------------------------------------------------------------


def test_newton_reaches_first_order_optimality():
    X, y, _ = random_problem(n=60, d=4, seed=12)
    config = TrainConfig(optimizer="newton", damping=0.01)
    theta, n_iter, converged, grad_norm = train_theta(X, y, config)
    assert converged and grad_norm <= config.newton_tol
    assert 0 < n_iter <= config.newton_max_iter
    # loss is a local (in fact global) minimum at the fitted parameters
    base = loss(theta, X, y, 0.01)
    rng = np.random.default_rng(0)
    for _ in range(10):
        probe = theta + rng.normal(size=theta.size) * 0.05
        assert loss(probe, X, y, 0.01) >= base - 1e-12


@pytest.mark.parametrize("optimizer", ["newton", "sgd", "gd"])
def test_training_is_bitwise_deterministic(optimizer):
    X, y, _ = random_problem(n=40, d=3, seed=21)
    config = TrainConfig(optimizer=optimizer, lr=0.05, epochs=30, damping=0.01,
                         seed=5)
    a = train_theta(X, y, config)
    b = train_theta(X, y, config)
    assert a[0].tobytes() == b[0].tobytes()
    assert a[1:] == b[1:]


def test_sgd_seed_changes_trajectory():
    X, y, _ = random_problem(n=40, d=3, seed=21)
    a = train_theta(X, y, TrainConfig(optimizer="sgd", epochs=5, seed=1))[0]
    b = train_theta(X, y, TrainConfig(optimizer="sgd", epochs=5, seed=2))[0]
    assert not np.array_equal(a, b)


def test_optimizers_agree_on_easy_problem():
    # Well-separated classes: all optimizers find nearby minima of the same
    # strictly convex objective.
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(-2.0, 0.5, size=(50, 2)),
                   rng.normal(2.0, 0.5, size=(50, 2))])
    y = np.concatenate([np.zeros(50), np.ones(50)])
    ref = train_theta(X, y, TrainConfig(optimizer="newton", damping=0.05))[0]
    gd = train_theta(X, y, TrainConfig(optimizer="gd", lr=0.5, epochs=4000,
                                       damping=0.05))[0]
    np.testing.assert_allclose(gd, ref, rtol=1e-3, atol=1e-4)


def test_constant_label_training_pushes_probabilities_up():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(30, 2))
    y = np.ones(30)
    theta, _, converged, _ = train_theta(
        X, y, TrainConfig(optimizer="newton", damping=0.1))
    assert converged
    assert sigmoid(logits(theta, X)).mean() > 0.5


def test_divergence_raises_with_last_finite_iterate():
    X, y, _ = random_problem(n=20, d=3, seed=2)
    config = TrainConfig(optimizer="gd", lr=1e10, epochs=100, damping=0.01)
    with np.errstate(over="ignore"), pytest.raises(TrainingDivergedError) as err:
        train_theta(X, y, config)
    assert np.isfinite(err.value.last_theta).all()


@pytest.mark.parametrize("kwargs, fragment", [
    (dict(optimizer="adam"), "unknown optimizer"),
    (dict(damping=-0.1), "non-negative"),
])
def test_train_config_validation(kwargs, fragment):
    with pytest.raises(TrainingError, match=fragment):
        TrainConfig(**kwargs)


# -- estimator wrapper --------------------------------------------------------------


def test_logistic_model_fits_generated_data():
    ds, _ = generate(1000, seed=0)
    model = LogisticModel(optimizer="newton", damping=0.01).fit(
        ds.X[ds.train_idx], ds.y[ds.train_idx])
    acc = (model.predict(ds.X[ds.test_idx]) == ds.y[ds.test_idx]).mean()
    assert acc > 0.7
    assert model.converged_ and model.n_features_in_ == ds.d
    np.testing.assert_array_equal(model.classes_, [0, 1])


def test_predictions_threshold_the_decision_function():
    ds, _ = generate(200, seed=1)
    model = LogisticModel(optimizer="newton").fit(ds.X, ds.y)
    scores = model.decision_function(ds.X)
    np.testing.assert_array_equal(model.predict(ds.X), (scores >= 0).astype(int))
    proba = model.predict_proba(ds.X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_array_equal(proba[:, 1] >= 0.5, scores >= 0)


def test_estimator_follows_sklearn_conventions():
    model = LogisticModel(optimizer="gd", lr=0.2, epochs=50, damping=0.03, seed=9)
    params = model.get_params()
    assert params["optimizer"] == "gd" and params["lr"] == 0.2
    twin = clone(model)
    assert twin.get_params() == params
    X, y, _ = random_problem(n=25, d=2, seed=0)
    fitted = model.fit(X, y)
    assert fitted is model and hasattr(model, "theta_")


def test_fit_rejects_nonbinary_labels():
    X = np.zeros((4, 2))
    with pytest.raises(ValueError, match="binary"):
        LogisticModel().fit(X, np.array([0, 1, 2, 1]))


def test_model_save_load_round_trip(tmp_path):
    X, y, _ = random_problem(n=30, d=3, seed=6)
    model = LogisticModel(optimizer="newton", damping=0.02).fit(X, y)
    path = tmp_path / "model.json"
    save_model(model, path, data_fingerprint="abc123")
    back = load_model(path)
    assert back.theta_.tobytes() == model.theta_.tobytes()
    assert back.get_params() == model.get_params()
    assert back.data_fingerprint_ == "abc123"
    np.testing.assert_array_equal(back.predict(X), model.predict(X))


def test_training_on_dataset_fixture(small_ds):
    theta, _, converged, _ = train_theta(
        small_ds.X[small_ds.train_idx],
        small_ds.y[small_ds.train_idx].astype(np.float64),
        TrainConfig(optimizer="newton", damping=0.01))
    assert converged and theta.size == small_ds.d + 1
