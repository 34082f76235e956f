"""L2-regularized logistic regression trained with Newton's method.

The objective is the per-point averaged log loss plus ``lam / 2 * ||theta||^2``
(intercept included in the penalty), so the Hessian is bounded below by
``lam * I`` and influence computations always have a well-posed solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

from .dataset import Dataset
from .errors import ConfigError, DataError, NumericError, OptimizationError


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-3
    tol: float = 1e-8
    max_newton_iters: int = 100
    fit_intercept: bool = True
    exclude_sensitive: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    theta: np.ndarray
    config: TrainConfig
    converged: bool
    grad_norm: float
    n_iter: int = 0
    drop_index: int | None = None  # feature column removed before fitting

    def design(self, X) -> np.ndarray:
        return design_matrix(X, self.config.fit_intercept, self.drop_index)


def design_matrix(X, fit_intercept=True, drop_index=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if drop_index is not None:
        X = np.delete(X, drop_index, axis=1)
    if fit_intercept:
        X = np.column_stack([X, np.ones(X.shape[0])])
    return X


def _drop_index(data: Dataset, config: TrainConfig):
    return data.sensitive_index if config.exclude_sensitive else None


def data_design(data: Dataset, config: TrainConfig) -> np.ndarray:
    return design_matrix(data.X, config.fit_intercept, _drop_index(data, config))


def logistic_objective(Z, y, theta, lam, weights=None):
    """Loss, gradient and Hessian of the regularized mean log loss on design ``Z``.

    ``weights`` optionally rescales each row's contribution (the mean is
    still taken over ``len(Z)``); used for up-weighting checks.
    """
    z = Z @ theta
    w = np.ones(len(Z)) if weights is None else np.asarray(weights, dtype=float)
    n = len(Z)
    p = expit(z)
    loss = np.sum(w * (np.logaddexp(0.0, z) - y * z)) / n + 0.5 * lam * theta @ theta
    grad = Z.T @ (w * (p - y)) / n + lam * theta
    hess = (Z.T * (w * p * (1.0 - p))) @ Z / n + lam * np.eye(len(theta))
    if not (np.isfinite(loss) and np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
        raise NumericError("non-finite value in logistic objective")
    return loss, grad, hess


def loss_grad_hessian(data: Dataset, theta, config: TrainConfig = TrainConfig()):
    Z = data_design(data, config)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (Z.shape[1],):
        raise ValueError(f"theta has shape {theta.shape}, expected ({Z.shape[1]},)")
    return logistic_objective(Z, data.y.astype(float), theta, config.lam)


def train(data: Dataset, config: TrainConfig = TrainConfig(), theta0=None) -> TrainedModel:
    """Fit by damped Newton iterations from zero (or ``theta0`` for warm starts)."""
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    if len(np.unique(data.y)) < 2:
        raise DataError("training data must contain both labels")
    Z = data_design(data, config)
    y = data.y.astype(float)
    theta = np.zeros(Z.shape[1]) if theta0 is None else np.array(theta0, dtype=float)

    loss, grad, hess = logistic_objective(Z, y, theta, config.lam)
    gnorm = float(np.linalg.norm(grad))
    it = 0
    while gnorm > config.tol and it < config.max_newton_iters:
        try:
            step = linalg.cho_solve(linalg.cho_factor(hess), grad)
        except linalg.LinAlgError as exc:
            raise OptimizationError(f"Hessian factorization failed at iteration {it}") from exc
        # Backtracking keeps the first steps from overshooting on nearly separable data.
        t = 1.0
        slope = grad @ step
        while True:
            cand = theta - t * step
            new_loss = logistic_objective(Z, y, cand, config.lam)[0]
            if new_loss <= loss - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        theta = cand
        loss, grad, hess = logistic_objective(Z, y, theta, config.lam)
        gnorm = float(np.linalg.norm(grad))
        it += 1
    return TrainedModel(theta, config, gnorm <= config.tol, gnorm, it, _drop_index(data, config))


def predict_proba(model: TrainedModel, x):
    """Positive-class probability; a scalar for one point, an array for a matrix."""
    x = np.asarray(x, dtype=float)
    Z = model.design(x)
    if Z.shape[1] != len(model.theta):
        raise ValueError(f"feature dimension mismatch: got {x.shape[-1]}")
    p = expit(Z @ model.theta)
    return float(p[0]) if x.ndim == 1 else p


def predict_label(model: TrainedModel, x):
    p = predict_proba(model, x)
    return int(p >= 0.5) if np.isscalar(p) else (p >= 0.5).astype(np.int8)


def accuracy(model: TrainedModel, data: Dataset) -> float:
    if len(data) == 0:
        raise DataError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict_label(model, data.X) == data.y))
