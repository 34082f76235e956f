"""UCB bandit over pool partitions for fairness-driven acquisition.

Each partition is an arm. Every round the engine pulls the arm with the
highest UCB score, asks a sampler for a batch from it, retrains on the
training set plus the batch and keeps the batch only if the absolute
demographic parity on the evaluation set shrinks below the best so far.
The observed improvement is then shared out to every arm (full feedback),
discounted by each arm's base-rate gap and its distance to the pulled arm.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from .dataset import Dataset
from .errors import ArmExhausted, ConfigError, FairAcqError
from .fairness import demographic_parity
from .model import TrainConfig, TrainedModel, train as fit_model
from .partition import Partitioning

log = logging.getLogger(__name__)

REWARD_VARIANTS = ("datasift", "autodata", "base_rate")


@dataclass
class ArmState:
    cum_reward: float = 0.0
    n_pos: int = 0
    n_sel: int = 0
    R: float = 0.0
    U: float = 0.0
    active: bool = True
    delta_br: float = 0.0

    def count(self, count_selections=False) -> int:
        return self.n_sel if count_selections else self.n_pos


@dataclass(frozen=True)
class BanditConfig:
    """Acquisition settings. ``budget``/``batch_size``/``max_iters`` left as
    None are derived from the pool size by :meth:`resolve`."""

    alpha: float = 0.1
    budget: int | None = None
    batch_size: int | None = None
    budget_frac: float = 0.2
    batch_frac: float = 0.1
    tau: float = 0.01
    max_iters: int | None = None
    seed: int = 0
    count_selections: bool = False
    reward: str = "datasift"
    warm_start: bool = False

    def resolve(self, n_pool: int) -> BanditConfig:
        budget = self.budget if self.budget is not None else math.ceil(self.budget_frac * n_pool)
        k = self.batch_size if self.batch_size is not None else math.ceil(self.batch_frac * budget)
        max_iters = self.max_iters if self.max_iters is not None else math.ceil(n_pool / max(k, 1))
        cfg = replace(self, budget=budget, batch_size=k, max_iters=max_iters)
        if not 0 < k <= budget <= n_pool:
            raise ConfigError(f"need 0 < K <= B <= |pool|, got K={k}, B={budget}, |pool|={n_pool}")
        if self.tau < 0 or self.alpha < 0:
            raise ConfigError("tau and alpha must be non-negative")
        if self.reward not in REWARD_VARIANTS:
            raise ConfigError(f"unknown reward variant {self.reward!r}")
        return cfg


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    arm: int
    batch: tuple[int, ...]
    delta_signed: float
    delta_improve: float
    accepted: bool
    candidate_parity: float
    parity: float
    accuracy: float
    budget_used: int
    budget_remaining: int
    arms: tuple[tuple[float, int, float], ...]  # (R, n_pos, U) per arm
    failed: bool = False


@dataclass
class AcquisitionResult:
    acquired: list[int]
    trace: list[IterationRecord]
    stop_reason: str
    initial_parity: float
    initial_accuracy: float
    final_parity: float
    final_accuracy: float
    model: TrainedModel
    train: Dataset
    config: BanditConfig = field(repr=False, default=None)


# --------------------------------------------------------------------------
# Scoring primitives


def compute_rewards(delta_improve: float, selected: int, part: Partitioning,
                    variant: str = "datasift") -> np.ndarray:
    """Per-arm reward for an observed improvement on arm ``selected``."""
    dist = part.dist[selected]
    br = 1.0 + np.abs(part.delta_br)
    if variant == "datasift":
        denom = br * (1.0 + dist)
    elif variant == "autodata":
        denom = 1.0 + dist
    elif variant == "base_rate":
        denom = br
    else:
        raise ConfigError(f"unknown reward variant {variant!r}")
    return delta_improve / denom


def ucb_scores(arms: list[ArmState], alpha: float, total_n: int,
               count_selections: bool = False) -> np.ndarray:
    """Set and return ``U = R + alpha * sqrt(2 ln(total_n / (n_i + 1)))``.

    The log argument is clamped at 1, so an arm that has been counted as
    often as the total contributes no (rather than an imaginary) bonus.
    """
    out = np.empty(len(arms))
    for i, a in enumerate(arms):
        ratio = total_n / (a.count(count_selections) + 1)
        bonus = alpha * math.sqrt(2.0 * math.log(ratio)) if ratio > 1 else 0.0
        a.U = a.R + bonus
        out[i] = a.U
    return out


def select_arm(arms: list[ArmState]) -> int:
    """Argmax U over active arms; ties go to smaller |delta_br|, then lower index."""
    candidates = [i for i, a in enumerate(arms) if a.active]
    if not candidates:
        raise ArmExhausted("no active arms")
    return min(candidates, key=lambda i: (-arms[i].U, abs(arms[i].delta_br), i))


def update_arms(arms: list[ArmState], selected: int, rewards, alpha: float,
                count_selections: bool = False) -> None:
    """Fold one round of rewards into the arm statistics and recompute UCB."""
    arms[selected].n_sel += 1
    if rewards[selected] > 0:
        arms[selected].n_pos += 1
    for a, r in zip(arms, rewards):
        a.cum_reward += float(r)
        a.R = a.cum_reward / max(1, a.count(count_selections))
    total = sum(a.count(count_selections) for a in arms)
    ucb_scores(arms, alpha, total, count_selections)


def init_arms(part: Partitioning) -> list[ArmState]:
    return [ArmState(delta_br=float(b)) for b in part.delta_br]


# --------------------------------------------------------------------------
# Samplers


class BatchSampler(Protocol):
    def available(self, part: Partitioning, arm: int) -> int: ...
    def draw(self, part: Partitioning, arm: int, k: int, rng: np.random.Generator) -> list[int]: ...
    def rejected(self, part: Partitioning, arm: int, batch: list[int]) -> None: ...
    def accepted(self, part: Partitioning, arm: int, batch: list[int],
                 train: Dataset, model: TrainedModel) -> None: ...


class RandomSampler:
    """Uniform batches from the arm's remaining ids; rejected ids stay eligible."""

    def available(self, part, arm):
        return len(part.remaining[arm])

    def draw(self, part, arm, k, rng):
        rem = part.remaining[arm]
        if len(rem) < k:
            raise ArmExhausted(f"arm {arm} has {len(rem)} ids left, needs {k}")
        idx = rng.choice(len(rem), size=k, replace=False)
        return [rem[i] for i in np.sort(idx)]

    def rejected(self, part, arm, batch):
        pass

    def accepted(self, part, arm, batch, train, model):
        pass


# --------------------------------------------------------------------------
# Engine


def _evaluate(model, data):
    rep = demographic_parity(model, data)
    return rep.parity, rep.accuracy


def run_acquisition(train: Dataset, test: Dataset, pool: Dataset, part: Partitioning,
                    model_config: TrainConfig = TrainConfig(),
                    bandit_config: BanditConfig = BanditConfig(),
                    sampler: BatchSampler | None = None,
                    eval_data: Dataset | None = None) -> AcquisitionResult:
    """Run the bandit acquisition loop.

    ``part`` is copied; the caller's partitioning is left untouched.
    Fairness drives acceptance on ``eval_data`` (defaults to ``test``);
    reported accuracy is on the same set.
    """
    cfg = bandit_config.resolve(len(pool))
    K, B = cfg.batch_size, cfg.budget
    sampler = sampler or RandomSampler()
    part = part.copy()
    eval_data = test if eval_data is None else eval_data
    rng = np.random.default_rng(cfg.seed)

    model = fit_model(train, model_config)
    f_best, acc = _evaluate(model, eval_data)
    init_parity, init_acc = f_best, acc
    arms = init_arms(part)
    for i, a in enumerate(arms):
        a.active = sampler.available(part, i) >= K

    current = train
    acquired: list[int] = []
    trace: list[IterationRecord] = []
    k = 0
    while True:
        if abs(f_best) < cfg.tau:
            stop = "fair"
            break
        if B - len(acquired) < K:
            stop = "budget"
            break
        if k + 1 > cfg.max_iters:
            stop = "max_iters"
            break
        if not any(a.active for a in arms):
            stop = "exhausted"
            break
        k += 1
        arm = select_arm(arms)
        try:
            batch = sampler.draw(part, arm, K, rng)
        except ArmExhausted:
            arms[arm].active = False
            k -= 1
            continue

        batch_data = pool.select_ids(batch)
        candidate = current.concat(batch_data)
        try:
            theta0 = model.theta if cfg.warm_start else None
            new_model = fit_model(candidate, model_config, theta0=theta0)
            f_new, acc_new = _evaluate(new_model, eval_data)
        except FairAcqError as exc:
            log.warning("iteration %d: retraining failed (%s); batch rejected", k, exc)
            sampler.rejected(part, arm, batch)
            trace.append(IterationRecord(k, arm, tuple(batch), math.nan, math.nan, False,
                                         math.nan, f_best, acc, len(acquired), B - len(acquired),
                                         _snapshot(arms), failed=True))
            _refresh_active(arms, part, sampler, K)
            continue

        f_before = f_best
        delta_improve = abs(f_before) - abs(f_new)
        accepted = delta_improve > 0
        if accepted:
            current = candidate
            model = new_model
            f_best, acc = f_new, acc_new
            acquired.extend(batch)
            taken = set(batch)
            part.remaining[arm] = [i for i in part.remaining[arm] if i not in taken]
            sampler.accepted(part, arm, batch, current, model)
        else:
            sampler.rejected(part, arm, batch)

        rewards = compute_rewards(delta_improve, arm, part, cfg.reward)
        update_arms(arms, arm, rewards, cfg.alpha, cfg.count_selections)
        _refresh_active(arms, part, sampler, K)
        trace.append(IterationRecord(k, arm, tuple(batch), f_new - f_before, delta_improve,
                                     accepted, f_new, f_best, acc, len(acquired),
                                     B - len(acquired), _snapshot(arms)))

    return AcquisitionResult(acquired, trace, stop, init_parity, init_acc, f_best, acc,
                             model, current, cfg)


def _snapshot(arms):
    return tuple((a.R, a.n_pos, a.U) for a in arms)


def _refresh_active(arms, part, sampler, K):
    for i, a in enumerate(arms):
        if a.active and sampler.available(part, i) < K:
            a.active = False
