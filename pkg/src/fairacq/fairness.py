"""Demographic parity, its smooth surrogate, base rates and entropy.

Sign convention throughout: protected-group rate minus privileged-group
rate, so a negative value means the protected group (S=0) is disadvantaged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dataset import Dataset, group_stats
from .errors import GroupError
from .model import TrainConfig, TrainedModel, data_design, predict_label


@dataclass(frozen=True)
class FairnessReport:
    parity: float
    rate_protected: float
    rate_privileged: float
    accuracy: float
    n_protected: int
    n_privileged: int


def _group_masks(s):
    s = np.asarray(s)
    m0, m1 = s == 0, s == 1
    if not m0.any() or not m1.any():
        raise GroupError("both sensitive groups must be present")
    return m0, m1


def parity_of_predictions(yhat, s) -> float:
    m0, m1 = _group_masks(s)
    yhat = np.asarray(yhat, dtype=float)
    return float(yhat[m0].mean() - yhat[m1].mean())


def demographic_parity(model: TrainedModel, data: Dataset) -> FairnessReport:
    m0, m1 = _group_masks(data.s)
    yhat = predict_label(model, data.X)
    r0, r1 = float(yhat[m0].mean()), float(yhat[m1].mean())
    return FairnessReport(
        parity=r0 - r1,
        rate_protected=r0,
        rate_privileged=r1,
        accuracy=float(np.mean(yhat == data.y)),
        n_protected=int(m0.sum()),
        n_privileged=int(m1.sum()),
    )


def soft_parity_and_grad(theta, data: Dataset, config: TrainConfig = TrainConfig()):
    """Mean sigmoid score of S=0 minus that of S=1, and its gradient in theta.

    Hard parity is piecewise constant in theta; this surrogate supplies the
    gradient needed to push parameter influence through to fairness.
    """
    m0, m1 = _group_masks(data.s)
    Z = data_design(data, config)
    theta = np.asarray(theta, dtype=float)
    p = expit(Z @ theta)
    dp = (p * (1.0 - p))[:, None] * Z
    value = p[m0].mean() - p[m1].mean()
    grad = dp[m0].mean(axis=0) - dp[m1].mean(axis=0)
    return float(value), grad


def base_rate_diff(data: Dataset) -> float:
    return group_stats(data).delta_br


def entropy(p):
    """Binary entropy in bits, with 0 * log 0 taken as 0. Vectorized."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(p < 1, (1 - p) * np.log2(1 - p), 0.0))
    return float(h) if h.ndim == 0 else h
