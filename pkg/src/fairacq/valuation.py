"""Influence-function valuation of candidate points for fairness.

For a converged model, up-weighting a point d moves the parameters by
``-H^{-1} grad L(d)``; dotting that with the gradient of the soft parity
gives the first-order change in parity. Scores are oriented so that a
positive value means the point pulls |parity| toward zero. A ridge model
fitted on training-point scores extends the valuation to unseen pool points.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit

from .dataset import Dataset, Example
from .errors import ArmExhausted, NumericError
from .fairness import demographic_parity, soft_parity_and_grad
from .model import TrainConfig, TrainedModel, logistic_objective, train as fit_model
from .partition import Partitioning


@dataclass(frozen=True)
class InfluenceScore:
    id: int
    score: float


class InfluenceEstimator:
    """Caches the Hessian factorization of one trained model.

    All per-point quantities reuse the same Cholesky factor, so they are
    exactly linear in the per-point loss gradient.
    """

    def __init__(self, model: TrainedModel, train: Dataset, test: Dataset | None = None):
        self.model = model
        self.config = model.config
        self.n = len(train)
        Z = model.design(train.X)
        _, _, H = logistic_objective(Z, train.y.astype(float), model.theta, model.config.lam)
        try:
            self._cho = linalg.cho_factor(H)
        except linalg.LinAlgError as exc:
            raise NumericError("Hessian is not positive definite") from exc
        self.test = test
        if test is not None:
            self.soft_parity, self.parity_grad = soft_parity_and_grad(model.theta, test, model.config)
            self.parity = demographic_parity(model, test).parity
            self._v = linalg.cho_solve(self._cho, self.parity_grad)

    def solve(self, v) -> np.ndarray:
        return linalg.cho_solve(self._cho, v)

    def loss_grads(self, X, y) -> np.ndarray:
        """Per-point gradients of the unregularized log loss, one row each."""
        Z = self.model.design(X)
        r = expit(Z @ self.model.theta) - np.asarray(y, dtype=float)
        return r[:, None] * Z

    def params(self, X, y) -> np.ndarray:
        """Parameter influence rows: ``-H^{-1} grad L(d)``."""
        return -self.solve(self.loss_grads(X, y).T).T

    def parity_influence(self, X, y) -> np.ndarray:
        """Raw parity influence ``grad F^T I_theta(d)`` for each row."""
        if self.test is None:
            raise ValueError("estimator was built without an evaluation set")
        return -(self.loss_grads(X, y) @ self._v)

    @property
    def direction(self) -> float:
        """+1 when parity should increase toward zero, -1 when it should decrease."""
        f = self.parity if self.parity != 0 else self.soft_parity
        return -1.0 if f > 0 else 1.0

    def scores(self, X, y) -> np.ndarray:
        """Predicted parity change scaled by 1/n, oriented toward zero."""
        return self.direction * self.parity_influence(X, y) / self.n

    def score_dataset(self, data: Dataset) -> np.ndarray:
        return self.scores(data.X, data.y)


def influence_on_params(model: TrainedModel, train: Dataset, d: Example) -> np.ndarray:
    est = InfluenceEstimator(model, train)
    return est.params(np.atleast_2d(d.features), [d.label])[0]


def influence_on_fairness(model: TrainedModel, train: Dataset, test: Dataset,
                          d: Example) -> InfluenceScore:
    est = InfluenceEstimator(model, train, test)
    return InfluenceScore(d.id, float(est.scores(np.atleast_2d(d.features), [d.label])[0]))


# --------------------------------------------------------------------------
# Influence regressor


def _regressor_design(X, y, s) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([X, np.ones(len(X)), np.asarray(y, float), np.asarray(s, float)])


@dataclass(frozen=True, eq=False)
class InfluenceRegressor:
    """Ridge model on ``[x, 1, y, s]``; the intercept column is not penalized."""

    weights: np.ndarray
    lam_r: float
    r2: float

    def predict(self, data: Dataset) -> np.ndarray:
        return _regressor_design(data.X, data.y, data.s) @ self.weights


def fit_influence_regressor(train: Dataset, scores, lam_r: float = 1.0) -> InfluenceRegressor:
    if len(scores) and isinstance(scores[0], InfluenceScore):
        by_id = {sc.id: sc.score for sc in scores}
        target = np.array([by_id[int(i)] for i in train.ids])
    else:
        target = np.asarray(scores, dtype=float)
    if target.shape != (len(train),):
        raise ValueError("need one score per training point")
    A = _regressor_design(train.X, train.y, train.s)
    penalty = np.full(A.shape[1], lam_r)
    penalty[train.p] = 0.0
    w = linalg.solve(A.T @ A + np.diag(penalty), A.T @ target, assume_a="sym")
    resid = target - A @ w
    ss_tot = np.sum((target - target.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return InfluenceRegressor(w, lam_r, float(r2))


def fit_regressor_for_model(model: TrainedModel, train: Dataset, test: Dataset,
                            lam_r: float = 1.0) -> InfluenceRegressor:
    """Score every training point under ``model`` and fit the ridge regressor."""
    est = InfluenceEstimator(model, train, test)
    return fit_influence_regressor(train, est.score_dataset(train), lam_r)


def dump_scores(path, pool: Dataset, reg: InfluenceRegressor) -> None:
    """Write ``id,score`` rows (predicted valuation of every pool point) to CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score"])
        for i, v in zip(pool.ids.tolist(), reg.predict(pool).tolist()):
            w.writerow([i, repr(v)])


def sort_partitions(part: Partitioning, pool: Dataset, reg: InfluenceRegressor) -> Partitioning:
    """Copy of ``part`` whose remaining ids run from highest predicted score down."""
    out = part.copy()
    pred = reg.predict(pool)
    score = {int(i): float(v) for i, v in zip(pool.ids, pred)}
    out.scores = score
    out.remaining = [sorted(rem, key=lambda i: (-score[i], i)) for rem in out.remaining]
    return out


class TopKSampler:
    """Takes the first K not-yet-tried ids of the arm's sorted order.

    Rejected ids are marked consumed so the next draw moves down the list.
    With ``refit_every=m`` the regressor is refitted on the current model
    after every m accepted batches and the remaining ids are re-sorted.
    """

    def __init__(self, pool: Dataset | None = None, test: Dataset | None = None,
                 refit_every: int = 0, lam_r: float = 1.0):
        self.consumed: set[int] = set()
        self.pool, self.test = pool, test
        self.refit_every = refit_every
        self.lam_r = lam_r
        self._accepted = 0

    def _open(self, part, arm):
        return [i for i in part.remaining[arm] if i not in self.consumed]

    def available(self, part, arm):
        return len(self._open(part, arm))

    def draw(self, part, arm, k, rng=None):
        open_ids = self._open(part, arm)
        if len(open_ids) < k:
            raise ArmExhausted(f"arm {arm} has {len(open_ids)} untried ids, needs {k}")
        return open_ids[:k]

    def rejected(self, part, arm, batch):
        self.consumed.update(batch)

    def accepted(self, part, arm, batch, train, model):
        self._accepted += 1
        if self.refit_every and self._accepted % self.refit_every == 0:
            reg = fit_regressor_for_model(model, train, self.test, self.lam_r)
            part.remaining = sort_partitions(part, self.pool, reg).remaining


def topk_sampler(part: Partitioning, arm: int, k: int,
                 consumed: Sequence[int] = ()) -> list[int]:
    """Stateless form: first ``k`` ids of the arm's order not in ``consumed``."""
    s = TopKSampler()
    s.consumed = set(consumed)
    return s.draw(part, arm, k)


# --------------------------------------------------------------------------
# Retraining oracle


def _parity(model, test, metric):
    if metric == "soft":
        return soft_parity_and_grad(model.theta, test, model.config)[0]
    return demographic_parity(model, test).parity


def loo_retrain_delta(train: Dataset, test: Dataset, d: Example,
                      config: TrainConfig = TrainConfig(), metric: str = "soft",
                      base: TrainedModel | None = None) -> float:
    """Parity change from retraining with ``d`` added, by brute force.

    ``metric="soft"`` measures the sigmoid surrogate (the quantity the
    influence scores linearize); ``"hard"`` measures thresholded parity.
    """
    if metric not in ("soft", "hard"):
        raise ValueError("metric must be 'soft' or 'hard'")
    base = base or fit_model(train, config)
    grown = fit_model(train.with_example(d), config, theta0=base.theta)
    return _parity(grown, test, metric) - _parity(base, test, metric)


def predicted_delta(est: InfluenceEstimator, d: Example) -> float:
    """Unoriented first-order parity change for adding ``d`` (``raw / n``)."""
    return float(est.parity_influence(np.atleast_2d(d.features), [d.label])[0] / est.n)


__all__ = [
    "InfluenceEstimator", "InfluenceRegressor", "InfluenceScore", "TopKSampler",
    "dump_scores", "fit_influence_regressor", "fit_regressor_for_model", "influence_on_fairness",
    "influence_on_params", "loo_retrain_delta", "predicted_delta", "sort_partitions",
    "topk_sampler",
]
