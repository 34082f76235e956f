"""Partition the data pool into bandit arms.

Two routes: a diagonal-covariance Gaussian mixture fitted by EM on z-scored
features (with BIC to pick the component count), or one partition per value
of a categorical column.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import DataError, GroupError

log = logging.getLogger(__name__)

MAX_ATTRIBUTE_VALUES = 32


@dataclass
class Partitioning:
    """Pool ids grouped into ``g`` disjoint partitions.

    ``centroids`` are in the original feature space; ``dist`` is computed
    from the standardized-space centroids. ``remaining`` is the only
    mutable part: per-partition ordered lists of unconsumed pool ids.
    """

    ids: np.ndarray
    assignment: np.ndarray
    centroids: np.ndarray
    delta_br: np.ndarray
    dist: np.ndarray
    remaining: list[list[int]] = field(default_factory=list)
    scores: dict[int, float] | None = None  # predicted valuation per id, once sorted

    def __post_init__(self):
        if not self.remaining:
            self.remaining = [sorted(int(i) for i in self.ids[self.assignment == k])
                              for k in range(self.g)]

    @property
    def g(self) -> int:
        return len(self.centroids)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.g)

    def members(self, k: int) -> np.ndarray:
        return self.ids[self.assignment == k]

    def copy(self) -> Partitioning:
        return Partitioning(self.ids.copy(), self.assignment.copy(), self.centroids.copy(),
                            self.delta_br.copy(), self.dist.copy(),
                            [list(r) for r in self.remaining],
                            None if self.scores is None else dict(self.scores))

    def to_json(self) -> str:
        return json.dumps({
            "assignment": {str(int(i)): int(a) for i, a in zip(self.ids, self.assignment)},
            "centroids": self.centroids.tolist(),
            "delta_br": self.delta_br.tolist(),
            "dist": self.dist.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> Partitioning:
        d = json.loads(text)
        pairs = sorted((int(k), v) for k, v in d["assignment"].items())
        return cls(np.array([k for k, _ in pairs], dtype=np.int64),
                   np.array([v for _, v in pairs], dtype=np.int64),
                   np.asarray(d["centroids"], dtype=float), np.asarray(d["delta_br"], dtype=float),
                   np.asarray(d["dist"], dtype=float))


def normalized_distances(centroids) -> np.ndarray:
    c = np.atleast_2d(np.asarray(centroids, dtype=float))
    d = np.sqrt(np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1))
    m = d.max() if d.size else 0.0
    return d / m if m > 0 else np.zeros_like(d)


def _delta_brs(pool: Dataset, assignment, g) -> np.ndarray:
    """Per-partition base-rate difference; partitions lacking a group or a
    label class fall back to the pool-level value."""
    def dbr(mask):
        s, y = pool.s[mask], pool.y[mask]
        if not ((s == 0).any() and (s == 1).any()):
            raise GroupError
        if len(np.unique(y)) < 2:
            raise GroupError
        return y[s == 0].mean() - y[s == 1].mean()

    try:
        fallback = dbr(np.ones(len(pool), dtype=bool))
    except GroupError:
        fallback = 0.0
    out = np.empty(g)
    for k in range(g):
        try:
            out[k] = dbr(assignment == k)
        except GroupError:
            out[k] = fallback
    return out


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def _build(pool: Dataset, assignment, Xs) -> Partitioning:
    g = int(assignment.max()) + 1 if len(assignment) else 0
    cents = np.array([pool.X[assignment == k].mean(axis=0) for k in range(g)])
    zcents = np.array([Xs[assignment == k].mean(axis=0) for k in range(g)])
    return Partitioning(pool.ids.copy(), assignment.astype(np.int64), cents,
                        _delta_brs(pool, assignment, g), normalized_distances(zcents))


# --------------------------------------------------------------------------
# Gaussian mixture


@dataclass(frozen=True)
class GMMFit:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik: float
    n_iter: int
    resp: np.ndarray

    @property
    def n_params(self) -> int:
        g, p = self.means.shape
        return g * (2 * p + 1) - 1

    def bic(self, n: int) -> float:
        return -2.0 * self.loglik + self.n_params * np.log(n)


_VAR_FLOOR = 1e-6


def _kmeanspp(X, g, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, g):
        total = d2.sum()
        idx = rng.integers(len(X)) if total == 0 else rng.choice(len(X), p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _log_joint(X, weights, means, variances):
    # log w_k + log N(x | mu_k, diag(var_k)), shape (n, g), expanded into matrix products
    prec = 1.0 / variances
    quad = (X ** 2) @ prec.T - 2.0 * X @ (means * prec).T + np.sum(means ** 2 * prec, axis=1)
    return (np.log(weights) - 0.5 * np.sum(np.log(2 * np.pi * variances), axis=1)
            - 0.5 * quad)


def em_diag(X, g, rng, max_iter=200, tol=1e-6) -> GMMFit:
    """EM for a diagonal Gaussian mixture, k-means++ seeded.

    Stops when the mean per-sample log-likelihood changes by less than ``tol``.
    """
    n, p = X.shape
    means = _kmeanspp(X, g, rng)
    # initial hard assignment to the nearest seed
    lab = np.argmin(((X[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1)
    resp = np.eye(g)[lab]
    prev = -np.inf
    loglik = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = nk / n
        means = resp.T @ X / nk[:, None]
        variances = resp.T @ (X ** 2) / nk[:, None] - means ** 2
        variances = np.maximum(variances, _VAR_FLOOR)
        lj = _log_joint(X, weights, means, variances)
        top = lj.max(axis=1, keepdims=True)
        e = np.exp(lj - top)
        tot = e.sum(axis=1, keepdims=True)
        loglik = float(np.sum(top + np.log(tot)))
        resp = e / tot
        if abs(loglik - prev) < tol * n:
            break
        prev = loglik
    return GMMFit(weights, means, variances, loglik, it, resp)


def _fit_assignment(Xs, g, seed, max_reseeds=5):
    """Fit a g-component mixture; returns (fit, hard assignment, used g)."""
    ss = np.random.SeedSequence(seed)
    while True:
        for attempt in range(max_reseeds):
            rng = np.random.default_rng(ss.spawn(1)[0])
            fit = em_diag(Xs, g, rng)
            assignment = np.argmax(fit.resp, axis=1)
            if len(np.unique(assignment)) == g:
                return fit, assignment, g
            log.info("GMM g=%d produced an empty component (attempt %d)", g, attempt + 1)
        if g == 1:
            raise DataError("could not fit a single-component mixture")
        log.warning("reducing g from %d to %d after %d empty-component fits", g, g - 1, max_reseeds)
        g -= 1


def fit_gmm(pool: Dataset, g: int, seed: int = 0) -> Partitioning:
    if g < 1:
        raise ValueError("g must be at least 1")
    if len(pool) < 5 * g:
        raise DataError(f"pool of {len(pool)} rows too small for {g} partitions")
    Xs = _standardize(pool.X)
    _, assignment, _ = _fit_assignment(Xs, g, seed)
    return _build(pool, assignment, Xs)


def bic_scores(pool: Dataset, g_range, seed: int = 0) -> dict[int, float]:
    Xs = _standardize(pool.X)
    out = {}
    for g in g_range:
        if len(pool) < 5 * g:
            raise DataError(f"pool of {len(pool)} rows too small for {g} partitions")
        fit, _, used = _fit_assignment(Xs, g, seed + g)
        out[g] = fit.bic(len(pool)) if used == g else np.inf
    return out


def select_g(pool: Dataset, g_range=range(2, 11), seed: int = 0) -> int:
    g_range = list(g_range)
    if not g_range:
        raise ValueError("g_range is empty")
    scores = bic_scores(pool, g_range, seed)
    best = min(g_range, key=lambda g: (scores[g], g))
    log.info("BIC selected g=%d from %s", best,
             {g: round(float(v), 1) for g, v in scores.items()})
    return best


# --------------------------------------------------------------------------
# Attribute partitioning


def partition_by_attribute(pool: Dataset, column: str) -> Partitioning:
    if column in pool.attributes:
        values = np.asarray(pool.attributes[column])
    elif column in pool.feature_names:
        values = pool.X[:, pool.feature_names.index(column)]
    else:
        raise DataError(f"column {column!r} not found in pool")
    uniq, assignment = np.unique(values, return_inverse=True)
    if len(uniq) > MAX_ATTRIBUTE_VALUES:
        raise DataError(f"column {column!r} has {len(uniq)} values (max {MAX_ATTRIBUTE_VALUES})")
    return _build(pool, assignment.ravel(), _standardize(pool.X))
