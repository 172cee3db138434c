"""Command-line entry point: ``fleetsim <verb> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dispatch import save_effective_policy, variant_router
from .engine import PolicyRouter, run_epoch, write_epoch_csv
from .experiment import (
    ConfigError, ExperimentConfig, build_problem, compare_methods, effective_for, load_config,
    paper_scale, read_summary, run_experiment,
)
from .policy import load_policy, random_policy, save_policy
from .rl import Trainer, imitation_init, write_curve

log = logging.getLogger("fleetsim")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.paper_scale:
        cfg = paper_scale(cfg)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.out:
        cfg = replace(cfg, out=args.out)
    cfg.validate()
    return cfg


def _router(cfg, problem):
    if cfg.policy:
        return PolicyRouter(load_policy(cfg.policy[5:] if cfg.policy.startswith("file:") else cfg.policy,
                                        problem.network))
    base, _, variant = cfg.methods[0].partition(":")
    if base == "mb-dispatch":
        return variant_router(variant or cfg.dispatch_variant, problem.travel_times, problem.demand.g,
                              cfg.unnormalized_mode)
    return PolicyRouter(random_policy(problem.network))


def cmd_simulate(cfg, args):
    problem = build_problem(cfg)
    router = _router(cfg, problem)
    rows = []
    for k in cfg.taxis:
        for s in cfg.seeds:
            r = run_epoch(problem.network, problem.travel_times, problem.demand, router, k,
                          cfg.horizon, [s, 2, 0], max_samples=0)
            rows.append(r.csv_row(0, s))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_epoch_csv(out / "simulate.csv", rows)
    for row in rows:
        print(f"taxis={row['taxis']} seed={row['seed']} reward_avg={float(row['reward_avg']):.4f} "
              f"waiting_avg={float(row['waiting_avg']):.4f}")


def cmd_train(cfg, args):
    problem = build_problem(cfg)
    init = load_policy(_path(cfg.policy), problem.network) if cfg.policy else None
    for k in cfg.taxis:
        for s in cfg.seeds:
            out = Path(cfg.out) / f"taxis-{k}" / f"seed-{s}"
            out.mkdir(parents=True, exist_ok=True)
            trainer = Trainer(cfg.trainer(k, s), problem.network, problem.travel_times, problem.demand, init)
            trainer.run()
            trainer.save(out / "checkpoints")
            write_curve(out / "curve.csv", trainer.curve)
            save_policy(trainer.policy, out / "policy.txt", header=f"trained taxis={k} seed={s}")
            last = trainer.curve[-1] if trainer.curve else None
            if last:
                print(f"taxis={k} seed={s} final reward_avg={last['reward_avg']:.4f}")


def cmd_extract(cfg, args):
    problem = build_problem(cfg)
    k, s = cfg.taxis[0], cfg.seeds[0]
    policy, visited, _ = effective_for(cfg, problem, k, s)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_effective_policy(policy, out / "effective_policy.txt", cfg.dispatch_variant, cfg.effective_horizon)
    print(f"effective policy from {cfg.dispatch_variant}: {int(visited.sum())}/{visited.size} rows visited")


def cmd_imitate(cfg, args):
    problem = build_problem(cfg)
    if not cfg.target:
        raise ConfigError("imitate needs 'target = <policy file>' in the config")
    target = load_policy(_path(cfg.target), problem.network)
    policy, info = imitation_init(target)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_policy(policy, out / "init_policy.txt", header="imitation init")
    print(f"imitation: {info['steps']} steps, max row TV {policy.total_variation(target).max():.2e}")


def cmd_experiment(cfg, args):
    root = run_experiment(cfg)
    print(f"results in {root}")


def cmd_compare(args):
    if not args.summaries:
        raise ConfigError("compare needs at least one summary.csv")
    report = compare_methods(read_summary(args.summaries))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "comparison.csv")
    for s in report.stats:
        print(f"{s['method']:<36} taxis={s['taxis']:<4} waiting {s['waiting_mean']:.3f} ± {s['waiting_std']:.3f}  "
              f"reward {s['reward_mean']:.4f} ± {s['reward_std']:.4f}")
    for k in sorted({s["taxis"] for s in report.stats}):
        print(f"taxis={k} best waiting first: {', '.join(report.ordering(k))}")


def _path(value):
    return value[5:] if value.startswith("file:") else value


VERBS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "extract-effective": cmd_extract,
    "imitate": cmd_imitate,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fleetsim", description="Taxi fleet simulation and learning harness.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in (*VERBS, "compare"):
        p = sub.add_parser(verb)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--paper-scale", action="store_true", help="use full-length runs and epochs")
        if verb == "compare":
            p.add_argument("summaries", nargs="*", help="summary.csv files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "compare":
            cmd_compare(args)
        else:
            VERBS[args.verb](_config(args), args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"fleetsim {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
