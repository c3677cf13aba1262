"""L2-damped binary logistic regression and its differential primitives.

The classifier itself is a small scikit-learn style estimator. The module-level
functions operate on a raw parameter vector ``theta`` of length ``d + 1`` (the
last entry is the intercept, which is damped exactly like the weights) so that
influence computations can differentiate through them without touching the
estimator object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

OPTIMIZERS = ("sgd", "gd", "newton")

DEFAULT_LR = 0.01
DEFAULT_EPOCHS = 200
DEFAULT_DAMPING = 0.01
DEFAULT_NEWTON_TOL = 1e-8
DEFAULT_NEWTON_MAX_ITER = 100


class TrainingError(RuntimeError):
    """Training could not proceed (singular Newton system, bad config, ...)."""


class TrainingDivergedError(TrainingError):
    """Parameters or loss became non-finite during optimization.

    Carries the last finite iterate so callers can inspect where the run blew up.
    """

    def __init__(self, message: str, last_theta: np.ndarray):
        super().__init__(message)
        self.last_theta = last_theta


def augment(X: np.ndarray) -> np.ndarray:
    """Append the constant-1 intercept column: phi(x) = [x, 1]."""
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def logits(theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ theta[:-1] + theta[-1]


def sigmoid(z: np.ndarray) -> np.ndarray:
    # Evaluated piecewise to avoid overflow in exp for large |z|.
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sample_losses(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample binary cross-entropy, computed in log-space for stability."""
    g = logits(theta, X)
    return np.logaddexp(0.0, g) - y * g


def loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray, damping: float) -> float:
    reg = 0.5 * damping * float(theta @ theta)
    return float(np.mean(sample_losses(theta, X, y))) + reg


def grad_samples(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample loss gradients, one row per sample, no damping term."""
    residual = sigmoid(logits(theta, X)) - y
    return augment(X) * residual[:, None]


def grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, damping: float) -> np.ndarray:
    return grad_samples(theta, X, y).mean(axis=0) + damping * theta


def hessian(theta: np.ndarray, X: np.ndarray, y: np.ndarray, damping: float) -> np.ndarray:
    """Dense damped Hessian of the mean training loss, shape (d+1, d+1).

    Assembled from one triangle so the result is symmetric bit for bit, not
    merely up to rounding.
    """
    phi = augment(X)
    s = sigmoid(logits(theta, X))
    w = s * (1.0 - s)
    B = phi * np.sqrt(w / X.shape[0])[:, None]
    H = B.T @ B
    H = np.triu(H) + np.triu(H, 1).T
    return H + damping * np.eye(theta.size)


def hvp(theta: np.ndarray, X: np.ndarray, y: np.ndarray, v: np.ndarray,
        damping: float) -> np.ndarray:
    """Damped Hessian-vector product in a single O(n*d) pass (no dense Hessian)."""
    phi = augment(X)
    s = sigmoid(logits(theta, X))
    w = s * (1.0 - s)
    return phi.T @ (w * (phi @ v)) / X.shape[0] + damping * v


def hessian_trace(theta: np.ndarray, X: np.ndarray, damping: float) -> float:
    """Trace of the damped Hessian, again in one O(n*d) pass."""
    phi = augment(X)
    s = sigmoid(logits(theta, X))
    w = s * (1.0 - s)
    return float((w[:, None] * phi * phi).sum() / X.shape[0]) + damping * theta.size


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by every training entry point."""

    optimizer: str = "sgd"
    lr: float = DEFAULT_LR
    epochs: int = DEFAULT_EPOCHS
    damping: float = DEFAULT_DAMPING
    seed: int = 0
    newton_tol: float = DEFAULT_NEWTON_TOL
    newton_max_iter: int = DEFAULT_NEWTON_MAX_ITER

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise TrainingError(
                f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if self.damping < 0:
            raise TrainingError("damping must be non-negative")


def _check_finite(theta: np.ndarray, last: np.ndarray, where: str) -> None:
    if not np.isfinite(theta).all():
        raise TrainingDivergedError(
            f"parameters became non-finite during {where}; "
            "reduce the learning rate or increase damping", last_theta=last)


def train_theta(X: np.ndarray, y: np.ndarray, config: TrainConfig) -> tuple:
    """Fit theta from a zero start.

    Returns (theta, n_iter, converged, final gradient norm of the damped
    objective). Fixed iteration order makes results bitwise reproducible for
    identical (X, y, config).
    """
    n, d = X.shape
    theta = np.zeros(d + 1)
    if config.optimizer == "newton":
        converged = False
        it = 0
        while it < config.newton_max_iter:
            g = grad(theta, X, y, config.damping)
            if np.linalg.norm(g) <= config.newton_tol:
                converged = True
                break
            H = hessian(theta, X, y, config.damping)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                raise TrainingError(
                    "singular Newton system; increase damping") from None
            last = theta
            theta = theta - step
            _check_finite(theta, last, "newton")
            it += 1
        grad_norm = float(np.linalg.norm(grad(theta, X, y, config.damping)))
        return theta, it, converged or grad_norm <= config.newton_tol, grad_norm

    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        last = theta.copy()
        if config.optimizer == "sgd":
            for i in rng.permutation(n):
                xi = X[i:i + 1]
                gi = grad_samples(theta, xi, y[i:i + 1])[0] + config.damping * theta
                theta = theta - config.lr * gi
        else:  # full-batch gradient descent
            theta = theta - config.lr * grad(theta, X, y, config.damping)
        _check_finite(theta, last, f"epoch {epoch}")
    grad_norm = float(np.linalg.norm(grad(theta, X, y, config.damping)))
    return theta, config.epochs, True, grad_norm


class LogisticModel(BaseEstimator):
    """Binary logistic regression with an L2-damped objective.

    The same ``damping`` value regularizes training and later damps the
    Hessian used for influence computation, keeping the two consistent.

    Ties at probability 0.5 predict class 1.
    """

    def __init__(self, optimizer: str = "sgd", lr: float = DEFAULT_LR,
                 epochs: int = DEFAULT_EPOCHS, damping: float = DEFAULT_DAMPING,
                 seed: int = 0, newton_tol: float = DEFAULT_NEWTON_TOL,
                 newton_max_iter: int = DEFAULT_NEWTON_MAX_ITER):
        self.optimizer = optimizer
        self.lr = lr
        self.epochs = epochs
        self.damping = damping
        self.seed = seed
        self.newton_tol = newton_tol
        self.newton_max_iter = newton_max_iter

    def _config(self) -> TrainConfig:
        return TrainConfig(optimizer=self.optimizer, lr=self.lr, epochs=self.epochs,
                           damping=self.damping, seed=self.seed,
                           newton_tol=self.newton_tol, newton_max_iter=self.newton_max_iter)

    def fit(self, X, y) -> "LogisticModel":
        X, y = check_X_y(X, y, dtype=np.float64)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("y must be binary-coded {0,1}")
        config = self._config()
        self.theta_, self.n_iter_, self.converged_, self.grad_norm_ = train_theta(
            X, y.astype(np.float64), config)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        return logits(self.theta_, X)

    def predict_proba(self, X) -> np.ndarray:
        p1 = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.0).astype(np.int64)

    def training_loss(self, X, y) -> float:
        check_is_fitted(self, "theta_")
        return loss(self.theta_, np.asarray(X, dtype=np.float64),
                    np.asarray(y, dtype=np.float64), self.damping)


def save_model(model: LogisticModel, path, data_fingerprint: Optional[str] = None) -> None:
    """Persist a fitted model as JSON (exact float round trip via repr)."""
    check_is_fitted(model, "theta_")
    payload = {
        "theta": [float(v) for v in model.theta_],
        "params": model.get_params(),
        "n_iter": int(model.n_iter_),
        "converged": bool(model.converged_),
        "grad_norm": float(model.grad_norm_),
        "data_fingerprint": data_fingerprint,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_model(path) -> LogisticModel:
    payload = json.loads(Path(path).read_text())
    model = LogisticModel(**payload["params"])
    model.theta_ = np.array(payload["theta"], dtype=np.float64)
    model.n_iter_ = payload["n_iter"]
    model.converged_ = payload["converged"]
    model.grad_norm_ = payload.get("grad_norm", float("nan"))
    model.classes_ = np.array([0, 1])
    model.n_features_in_ = model.theta_.size - 1
    model.data_fingerprint_ = payload.get("data_fingerprint")
    return model
