"""Experiment runner: baselines, bandit methods, trace and summary output."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .bandit import AcquisitionResult, BanditConfig, IterationRecord, RandomSampler, run_acquisition
from .dataset import Dataset, Schema, SplitSpec, SyntheticSpec, load_csv, split, synthesize
from .errors import ConfigError, DataError
from .fairness import demographic_parity, entropy
from .model import TrainConfig, predict_proba, train as fit_model
from .partition import Partitioning, fit_gmm, partition_by_attribute, select_g
from .valuation import TopKSampler, fit_regressor_for_model, sort_partitions

log = logging.getLogger(__name__)

METHODS = ("random", "entropy", "inf", "autodata", "datasift", "datasift-inf")
BANDIT_METHODS = ("autodata", "datasift", "datasift-inf")
TRACE_COLUMNS = ["iter", "method", "arm", "accepted", "batch_size", "parity", "accuracy",
                 "budget_used", "delta_improve"]
SUMMARY_SCHEMA = 1


@dataclass
class RunSummary:
    method: str
    initial_parity: float
    initial_accuracy: float
    final_parity: float
    final_accuracy: float
    checkpoints: list[dict]
    acquired: int
    iterations: int
    wall_time: float
    stop_reason: str
    budget: int = 0
    batch_size: int = 0
    acquired_ids: list[int] = field(default_factory=list, repr=False)
    trace: list[dict] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        return {"schema": SUMMARY_SCHEMA, **d}


def _checkpoints(initial_parity, initial_accuracy, rows, budget):
    """Parity of the current model at each 10% of budget spent.

    A checkpoint is filled by the first state whose spend reaches it; grid
    points beyond the final spend carry the final state forward, since the
    training set no longer changes after the run stops.
    """
    states = [(0, initial_parity, initial_accuracy)]
    states += [(r["budget_used"], r["parity"], r["accuracy"]) for r in rows]
    out = []
    for j in range(11):
        mark = budget * j / 10
        hit = next((st for st in states if st[0] >= mark), states[-1])
        out.append({"budget_frac": j / 10, "parity": hit[1], "accuracy": hit[2]})
    return out


def _trace_rows(method, records: list[IterationRecord]) -> list[dict]:
    return [{"iter": r.iteration, "method": method, "arm": r.arm, "accepted": int(r.accepted),
             "batch_size": len(r.batch), "parity": r.parity, "accuracy": r.accuracy,
             "budget_used": r.budget_used, "delta_improve": r.delta_improve} for r in records]


def _summary(method, result: AcquisitionResult, t0) -> RunSummary:
    rows = _trace_rows(method, result.trace)
    return RunSummary(method, result.initial_parity, result.initial_accuracy,
                      result.final_parity, result.final_accuracy,
                      _checkpoints(result.initial_parity, result.initial_accuracy, rows,
                                   result.config.budget),
                      len(result.acquired), len(result.trace), time.perf_counter() - t0,
                      result.stop_reason, result.config.budget, result.config.batch_size,
                      list(result.acquired), rows)


# --------------------------------------------------------------------------
# Baselines: acquire unconditionally


def _run_unconditional(method, train, test, pool, bandit_config, model_config,
                       choose: Callable[[Dataset, object, np.ndarray, int], list[int]]):
    """Shared loop for the baselines. ``choose(pool_left, model, rng_or_none, k)``
    returns the ids of the next batch."""
    t0 = time.perf_counter()
    if len(pool) == 0:
        raise DataError("empty data pool")
    cfg = bandit_config.resolve(len(pool))
    K, B = cfg.batch_size, cfg.budget
    rng = np.random.default_rng(cfg.seed)
    model = fit_model(train, model_config)
    rep = demographic_parity(model, test)
    init_parity, init_acc = rep.parity, rep.accuracy
    current = train
    left = np.ones(len(pool), dtype=bool)
    acquired: list[int] = []
    records = []
    k = 0
    while B - len(acquired) >= K and left.sum() >= K:
        k += 1
        remaining = pool.take(np.flatnonzero(left))
        batch = choose(remaining, model, rng, K)
        left[pool.rows(batch)] = False
        current = current.concat(pool.select_ids(batch))
        model = fit_model(current, model_config)
        before = rep.parity
        rep = demographic_parity(model, test)
        acquired.extend(batch)
        records.append(IterationRecord(k, -1, tuple(batch), rep.parity - before,
                                       abs(before) - abs(rep.parity), True, rep.parity,
                                       rep.parity, rep.accuracy, len(acquired),
                                       B - len(acquired), ()))
    stop = "budget" if B - len(acquired) < K else "exhausted"
    result = AcquisitionResult(acquired, records, stop, init_parity, init_acc, rep.parity,
                               rep.accuracy, model, current, cfg)
    return _summary(method, result, t0)


def run_random(train, test, pool, bandit_config=BanditConfig(), model_config=TrainConfig()):
    def choose(left, model, rng, k):
        idx = rng.choice(len(left), size=k, replace=False)
        return [int(i) for i in left.ids[np.sort(idx)]]
    return _run_unconditional("random", train, test, pool, bandit_config, model_config, choose)


def top_by_score(ids, scores, k) -> list[int]:
    """Ids of the k highest scores; ties broken by ascending id."""
    order = np.lexsort((ids, -np.asarray(scores)))
    return [int(i) for i in np.asarray(ids)[order[:k]]]


def run_entropy(train, test, pool, bandit_config=BanditConfig(), model_config=TrainConfig()):
    def choose(left, model, rng, k):
        return top_by_score(left.ids, entropy(predict_proba(model, left.X)), k)
    return _run_unconditional("entropy", train, test, pool, bandit_config, model_config, choose)


def run_inf(train, test, pool, bandit_config=BanditConfig(), model_config=TrainConfig(),
            lam_r: float = 1.0):
    if len(pool) == 0:
        raise DataError("empty data pool")
    model = fit_model(train, model_config)
    reg = fit_regressor_for_model(model, train, test, lam_r)
    pred = reg.predict(pool)
    score = dict(zip(pool.ids.tolist(), pred.tolist()))

    def choose(left, model, rng, k):
        return top_by_score(left.ids, [score[int(i)] for i in left.ids], k)
    return _run_unconditional("inf", train, test, pool, bandit_config, model_config, choose)


# --------------------------------------------------------------------------
# Bandit methods


def run_datasift(train, test, pool, part, bandit_config=BanditConfig(),
                 model_config=TrainConfig(), eval_data=None) -> RunSummary:
    t0 = time.perf_counter()
    res = run_acquisition(train, test, pool, part, model_config,
                          replace(bandit_config, reward="datasift"), RandomSampler(), eval_data)
    return _summary("datasift", res, t0)


def run_autodata(train, test, pool, part, bandit_config=BanditConfig(),
                 model_config=TrainConfig(), eval_data=None) -> RunSummary:
    t0 = time.perf_counter()
    res = run_acquisition(train, test, pool, part, model_config,
                          replace(bandit_config, reward="autodata"), RandomSampler(), eval_data)
    return _summary("autodata", res, t0)


def run_datasift_inf(train, test, pool, part, bandit_config=BanditConfig(),
                     model_config=TrainConfig(), lam_r: float = 1.0, refit_every: int = 0,
                     eval_data=None) -> RunSummary:
    t0 = time.perf_counter()
    scoring = test if eval_data is None else eval_data
    model = fit_model(train, model_config)
    reg = fit_regressor_for_model(model, train, scoring, lam_r)
    sorted_part = sort_partitions(part, pool, reg)
    sampler = TopKSampler(pool, scoring, refit_every=refit_every, lam_r=lam_r)
    res = run_acquisition(train, test, pool, sorted_part, model_config, bandit_config,
                          sampler, eval_data)
    return _summary("datasift-inf", res, t0)


# --------------------------------------------------------------------------
# Brute-force oracle


def brute_force_best_batch(train, test, pool, k, model_config=TrainConfig(),
                           max_subsets: int = 10**6):
    """Exhaustively retrain on every size-k subset of the pool.

    Returns ``(ids, parity)`` of the subset with the smallest |parity|;
    ties go to the lexicographically first subset.
    """
    n_sub = math.comb(len(pool), k)
    if n_sub > max_subsets:
        raise ConfigError(f"{n_sub} subsets exceeds the limit of {max_subsets}")
    best_ids, best_f = None, math.inf
    for rows in itertools.combinations(range(len(pool)), k):
        model = fit_model(train.concat(pool.take(list(rows))), model_config)
        f = demographic_parity(model, test).parity
        if abs(f) < abs(best_f):
            best_ids, best_f = [int(pool.ids[r]) for r in rows], f
    return best_ids, best_f


# --------------------------------------------------------------------------
# Configuration and dispatch


@dataclass
class ExperimentConfig:
    method: str = "datasift-inf"
    csv: str | None = None
    schema: str | None = None
    synthetic: SyntheticSpec | None = None
    split: SplitSpec = field(default_factory=SplitSpec)
    partitioner: str = "gmm"  # gmm | attribute | fixed
    g_range: tuple[int, int] = (2, 10)
    g: int | None = None
    column: str | None = None
    bandit: BanditConfig = field(default_factory=BanditConfig)
    model: TrainConfig = field(default_factory=TrainConfig)
    lam_r: float = 1.0
    refit_every: int = 0
    fairness_on: str = "test"  # test | validation
    out: str = "runs/out"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.partitioner not in ("gmm", "attribute", "fixed"):
            raise ConfigError(f"unknown partitioner {self.partitioner!r}")
        if self.partitioner == "attribute" and not self.column:
            raise ConfigError("attribute partitioning needs 'column'")
        if self.partitioner == "fixed" and not self.g:
            raise ConfigError("fixed partitioning needs 'g'")
        if (self.csv is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of 'csv' (with 'schema') or 'synthetic'")
        if self.csv is not None and self.schema is None:
            raise ConfigError("'csv' needs a 'schema'")
        if self.fairness_on not in ("test", "validation"):
            raise ConfigError("fairness_on must be 'test' or 'validation'")

    @classmethod
    def from_dict(cls, d: Mapping) -> ExperimentConfig:
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "synthetic" in d and d["synthetic"] is not None:
                d["synthetic"] = SyntheticSpec.from_dict(d["synthetic"])
            if "split" in d:
                sp = dict(d["split"])
                if "ratios" in sp:
                    sp["ratios"] = tuple(sp["ratios"])
                d["split"] = SplitSpec(**sp)
            if "bandit" in d:
                d["bandit"] = BanditConfig(**d["bandit"])
            if "model" in d:
                d["model"] = TrainConfig(**d["model"])
            if "g_range" in d:
                d["g_range"] = tuple(d["g_range"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def load_data(cfg: ExperimentConfig) -> Dataset:
    if cfg.synthetic is not None:
        return synthesize(cfg.synthetic)
    return load_csv(cfg.csv, Schema.load(cfg.schema))


def make_partitioning(cfg: ExperimentConfig, pool: Dataset) -> Partitioning:
    if cfg.partitioner == "attribute":
        return partition_by_attribute(pool, cfg.column)
    if cfg.partitioner == "fixed":
        return fit_gmm(pool, cfg.g, cfg.seed)
    lo, hi = cfg.g_range
    g = select_g(pool, range(lo, hi + 1), cfg.seed)
    return fit_gmm(pool, g, cfg.seed + g)


def prepare(cfg: ExperimentConfig):
    """Load or synthesize data and split it. Returns (train, test, pool, eval_data)."""
    data = load_data(cfg)
    train, test, pool = split(data, replace(cfg.split, seed=cfg.seed))
    eval_data = None
    if cfg.fairness_on == "validation":
        # hold out half of the test split for acceptance decisions
        rng = np.random.default_rng(cfg.seed + 1)
        perm = rng.permutation(len(test))
        half = len(test) // 2
        eval_data, test = test.take(np.sort(perm[:half])), test.take(np.sort(perm[half:]))
    return train, test, pool, eval_data


def run_method(cfg: ExperimentConfig, train, test, pool, eval_data=None,
               part: Partitioning | None = None) -> RunSummary:
    bandit = replace(cfg.bandit, seed=cfg.seed)
    if cfg.method in BANDIT_METHODS:
        part = part if part is not None else make_partitioning(cfg, pool)
        if cfg.method == "datasift":
            return run_datasift(train, test, pool, part, bandit, cfg.model, eval_data)
        if cfg.method == "autodata":
            return run_autodata(train, test, pool, part, bandit, cfg.model, eval_data)
        return run_datasift_inf(train, test, pool, part, bandit, cfg.model, cfg.lam_r,
                                cfg.refit_every, eval_data)
    if cfg.method == "random":
        return run_random(train, test, pool, bandit, cfg.model)
    if cfg.method == "entropy":
        return run_entropy(train, test, pool, bandit, cfg.model)
    return run_inf(train, test, pool, bandit, cfg.model, cfg.lam_r)


def write_trace(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_summary(path, summary: RunSummary) -> None:
    d = summary.to_json()
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> RunSummary:
    out = Path(out or cfg.out)
    train, test, pool, eval_data = prepare(cfg)
    summary = run_method(cfg, train, test, pool, eval_data)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", summary.trace)
    write_summary(out / "summary.json", summary)
    log.info("%s: parity %.4f -> %.4f, accuracy %.4f -> %.4f, %d acquired in %.2fs (%s)",
             summary.method, summary.initial_parity, summary.final_parity,
             summary.initial_accuracy, summary.final_accuracy, summary.acquired,
             summary.wall_time, summary.stop_reason)
    return summary
