"""Command-line entry point: ``fairacq run --config exp.json [overrides]``."""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, FairAcqError
from .harness import METHODS, ExperimentConfig, run_experiment

log = logging.getLogger("fairacq")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairacq",
                                     description="Fairness-aware data acquisition experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("-v", "--verbose", action="count", default=0)
    run.add_argument("--config", required=True, help="experiment config (JSON)")
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--seed", type=int)
    run.add_argument("--seeds", help="comma-separated seeds, run as parallel replicas")
    run.add_argument("--budget-frac", type=float)
    run.add_argument("--batch-frac", type=float)
    run.add_argument("--alpha", type=float)
    run.add_argument("--tau", type=float)
    run.add_argument("--g", type=int, help="fix the number of GMM partitions")
    run.add_argument("--out", help="output directory")
    run.add_argument("--jobs", type=int, default=None, help="worker processes for --seeds")
    return parser


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    bandit = cfg.bandit
    for flag, name in (("budget_frac", "budget_frac"), ("batch_frac", "batch_frac"),
                       ("alpha", "alpha"), ("tau", "tau")):
        value = getattr(args, flag)
        if value is not None:
            bandit = replace(bandit, **{name: value})
    # a fraction given on the command line wins over an absolute size in the file
    if args.budget_frac is not None:
        bandit = replace(bandit, budget=None)
    if args.batch_frac is not None:
        bandit = replace(bandit, batch_size=None)
    changes = {"bandit": bandit}
    if args.method:
        changes["method"] = args.method
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.g is not None:
        changes.update(partitioner="fixed", g=args.g)
    if args.out:
        changes["out"] = args.out
    return replace(cfg, **changes)


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value {text!r}") from exc
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("--seeds needs distinct integers")
    return seeds


def _replica(cfg: ExperimentConfig, out: str) -> tuple[int, str]:
    """Worker body; errors come back as (exit code, message)."""
    try:
        s = run_experiment(cfg, out)
    except FairAcqError as exc:
        return exc.exit_code, f"seed {cfg.seed}: {exc}"
    return 0, (f"seed {cfg.seed}: parity {s.initial_parity:+.4f} -> {s.final_parity:+.4f}, "
               f"accuracy {s.initial_accuracy:.4f} -> {s.final_accuracy:.4f}, "
               f"{s.acquired} acquired ({s.stop_reason})")


def run(args) -> int:
    cfg = apply_overrides(ExperimentConfig.load(args.config), args)
    if not args.seeds:
        code, msg = _replica(cfg, cfg.out)
        print(msg, file=sys.stdout if code == 0 else sys.stderr)
        return code
    seeds = parse_seeds(args.seeds)
    jobs = [(replace(cfg, seed=s), str(Path(cfg.out) / f"seed_{s}")) for s in seeds]
    with ProcessPoolExecutor(max_workers=args.jobs) as ex:
        results = list(ex.map(_replica, *zip(*jobs)))
    worst = 0
    for code, msg in results:
        print(msg, file=sys.stdout if code == 0 else sys.stderr)
        worst = max(worst, code)
    return worst


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except FairAcqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
