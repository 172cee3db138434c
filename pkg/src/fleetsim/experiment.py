"""Benchmark harness: settings S1-S4, method pipelines, summaries, comparisons.

A run is fully determined by its :class:`ExperimentConfig`; every
``(method, taxis, seed)`` cell writes to its own directory and the summary
is assembled in a fixed order, so repeated runs give identical files.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .demand import generate_random_demand, load_demand
from .dispatch import VARIANTS, extract_effective_policy, save_effective_policy, variant_router
from .engine import DEFAULT_HORIZON, DESK_HORIZON, MAX_SAMPLES, PolicyRouter, run_epoch
from .graph import all_pairs_shortest, build_lattice, load_network
from .policy import random_policy, save_policy
from .rl import Trainer, TrainerConfig, imitation_init, write_curve

log = logging.getLogger(__name__)

METHODS = ("random", "mb-dispatch", "mf-rl", "mb-init", "hybrid")
SUMMARY_FIELDS = ("method", "taxis", "seed", "epochs", "reward_last10", "waiting_last10")
LAST = 10

SETTINGS = {
    "S1": {"network": "lattice:10x10:1:10", "n_c": 0.3},
    "S2": {"network": "lattice:33x33:1:10", "n_c": 1.0},
    "S3": {"network": "", "demand": "random", "n_c": 1.0},
    "S4": {"network": "", "demand": "", "n_c": 1.0},
}


class ConfigError(ValueError):
    pass


class ComparisonError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    setting: str = "S1"
    network: str = "lattice:10x10:1:10"
    network_seed: int = 1
    demand: str = "random"
    demand_seed: int = 2
    n_c: float = 0.3
    taxis: tuple = (20,)
    horizon: int = DESK_HORIZON
    epochs: int = 200
    methods: tuple = ("random",)
    dispatch_variant: str = "non-committed-normalized"
    unnormalized_mode: str = "proportional"
    effective_horizon: int = DEFAULT_HORIZON
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "results"
    learning_rate: float = 0.01
    clip: float = 0.1
    iterations: int = 10
    exploration: bool = True
    return_mode: str = "taxi"
    baseline: str = "node-time"
    sigma_mode: str = "running"
    max_samples: int = MAX_SAMPLES
    policy: str = ""
    target: str = ""

    def validate(self) -> None:
        if any(k < 0 for k in self.taxis):
            raise ConfigError("taxi counts must be >= 0")
        if self.epochs < 0 or self.horizon < 1:
            raise ConfigError("need epochs >= 0 and horizon >= 1")
        for m in self.methods:
            base, _, variant = m.partition(":")
            if base not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
            if variant and variant not in VARIANTS:
                raise ConfigError(f"unknown dispatch variant {variant!r}")
        if self.dispatch_variant not in VARIANTS:
            raise ConfigError(f"unknown dispatch variant {self.dispatch_variant!r}")
        for key in ("network", "demand", "policy", "target"):
            value = getattr(self, key)
            path = value[5:] if value.startswith("file:") else None
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{key} file {path!r} does not exist")
        if not self.network:
            raise ConfigError(f"setting {self.setting} needs a network file (network = file:<path>)")
        if not self.demand:
            raise ConfigError(f"setting {self.setting} needs a demand file (demand = file:<path>)")

    def trainer(self, taxis, seed, epochs=None) -> TrainerConfig:
        return TrainerConfig(
            learning_rate=self.learning_rate, clip=self.clip, iterations=self.iterations,
            epochs=self.epochs if epochs is None else epochs, exploration=self.exploration,
            seed=seed, horizon=self.horizon, taxi_count=taxis, max_samples=self.max_samples,
            sigma_mode=self.sigma_mode, return_mode=self.return_mode, baseline=self.baseline,
        )


def _parse_value(kind, raw):
    if kind is bool:
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if kind == "tuple_int":
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if kind == "tuple_str":
        return tuple(x for x in raw.replace(",", " ").split())
    return kind(raw)


_KINDS = {
    f.name: (bool if isinstance(f.default, bool) else
             "tuple_int" if f.name in ("taxis", "seeds") else
             "tuple_str" if f.name == "methods" else type(f.default))
    for f in fields(ExperimentConfig)
}


def parse_config(text, source="<config>") -> ExperimentConfig:
    """Flat ``key = value`` file; ``#`` starts a comment, unknown keys fail.

    A ``setting`` line (S1..S4) supplies that setting's defaults; explicit
    keys override them regardless of order.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _KINDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(_KINDS[key], value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    setting = values.get("setting", "S1")
    if setting not in SETTINGS:
        raise ConfigError(f"{source}: unknown setting {setting!r}")
    merged = {**SETTINGS[setting], **values}
    return ExperimentConfig(**merged)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Appendix-scale run length and epochs."""
    epochs = {"S4": 3000}.get(cfg.setting, 1000)
    return replace(cfg, horizon=DEFAULT_HORIZON, epochs=epochs, effective_horizon=DEFAULT_HORIZON,
                   max_samples=MAX_SAMPLES)


@dataclass
class Problem:
    network: object
    travel_times: object
    demand: object


def build_problem(cfg: ExperimentConfig) -> Problem:
    if cfg.network.startswith("lattice:"):
        dims, lo, hi = cfg.network[len("lattice:"):].split(":")
        rows, cols = (int(x) for x in dims.lower().split("x"))
        network = build_lattice(rows, cols, int(lo), int(hi), seed=cfg.network_seed)
    elif cfg.network.startswith("file:"):
        network = load_network(cfg.network[5:])
    else:
        raise ConfigError(f"network must be 'lattice:RxC:LO:HI' or 'file:<path>', got {cfg.network!r}")
    if cfg.demand == "random":
        demand = generate_random_demand(network, cfg.demand_seed, cfg.n_c)
    elif cfg.demand.startswith("file:"):
        demand = load_demand(cfg.demand[5:], network.node_count)
    else:
        raise ConfigError(f"demand must be 'random' or 'file:<path>', got {cfg.demand!r}")
    return Problem(network, all_pairs_shortest(network), demand)


def evaluate(problem, router, taxis, seed, epochs, horizon, max_samples=0):
    """Fixed-router evaluation on the same epoch seeds the trainer uses."""
    curve = []
    for e in range(epochs):
        r = run_epoch(problem.network, problem.travel_times, problem.demand, router, taxis,
                      horizon, [seed, 2, e], max_samples)
        curve.append({"epoch": e, "reward_avg": float(r.average_reward),
                      "waiting_avg": float(r.average_waiting), "intrinsic_mean": 0.0,
                      "loss_surrogate": 0.0, "loss_value": 0.0})
    return curve


def effective_for(cfg, problem, taxis, seed):
    router = variant_router(cfg.dispatch_variant, problem.travel_times, problem.demand.g,
                            cfg.unnormalized_mode)
    return extract_effective_policy(problem.network, problem.travel_times, problem.demand, router,
                                    taxis, cfg.effective_horizon, [seed, 3])


def run_cell(cfg: ExperimentConfig, method, taxis, seed, out_dir, problem=None):
    """Execute one method pipeline; returns its learning curve."""
    problem = problem or build_problem(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base, _, variant = method.partition(":")
    n_eval = max(1, min(cfg.epochs, LAST))
    if base == "random":
        router = PolicyRouter(random_policy(problem.network))
        curve = evaluate(problem, router, taxis, seed, n_eval, cfg.horizon)
    elif base == "mb-dispatch":
        router = variant_router(variant or cfg.dispatch_variant, problem.travel_times,
                                problem.demand.g, cfg.unnormalized_mode)
        curve = evaluate(problem, router, taxis, seed, n_eval, cfg.horizon)
    elif base == "mb-init":
        policy, _, _ = effective_for(cfg, problem, taxis, seed)
        save_effective_policy(policy, out_dir / "effective_policy.txt", cfg.dispatch_variant,
                              cfg.effective_horizon)
        curve = evaluate(problem, PolicyRouter(policy), taxis, seed, n_eval, cfg.horizon)
    elif base in ("mf-rl", "hybrid"):
        init = None
        if base == "hybrid":
            effective, _, _ = effective_for(cfg, problem, taxis, seed)
            save_effective_policy(effective, out_dir / "effective_policy.txt", cfg.dispatch_variant,
                                  cfg.effective_horizon)
            init, _ = imitation_init(effective)
            save_policy(init, out_dir / "init_policy.txt", header="imitation init")
        trainer = Trainer(cfg.trainer(taxis, seed), problem.network, problem.travel_times,
                          problem.demand, init)
        trainer.run()
        trainer.save(out_dir / "checkpoints")
        curve = trainer.curve
    else:
        raise ConfigError(f"unknown method {method!r}")
    write_curve(out_dir / "curve.csv", curve)
    return curve


def summarize(curve):
    tail = curve[-LAST:]
    return (float(np.mean([r["reward_avg"] for r in tail])),
            float(np.mean([r["waiting_avg"] for r in tail])))


def _cell_job(args):
    cfg, method, taxis, seed, out_dir = args
    curve = run_cell(cfg, method, taxis, seed, out_dir)
    return method, taxis, seed, len(curve), summarize(curve)


def _cell_dir(root, method, taxis, seed):
    return Path(root) / method.replace(":", "_") / f"taxis-{taxis}" / f"seed-{seed}"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(root, failure=None) -> Path:
    root = Path(root)
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != "MANIFEST")
    with open(root / "MANIFEST", "w", encoding="utf-8") as fh:
        fh.write("status " + ("failed" if failure else "ok") + "\n")
        if failure:
            fh.write(f"failure {failure}\n")
        for p in files:
            fh.write(f"{sha256(p)}  {p.relative_to(root).as_posix()}\n")
    return root / "MANIFEST"


def write_config(cfg, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(cfg):
            if f.name == "out":
                continue
            v = getattr(cfg, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            fh.write(f"{f.name} = {v}\n")


def threads() -> int:
    try:
        return max(1, int(os.environ.get("FLEETSIM_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig, out=None) -> Path:
    """Run every ``(method, taxis, seed)`` cell and write ``summary.csv``.

    Returns the output root. On error the MANIFEST records the failing cell
    and the exception is re-raised with completed results left on disk.
    """
    cfg.validate()
    root = Path(out or cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    write_config(cfg, root / "config.txt")
    cells = [(m, k, s) for m in cfg.methods for k in cfg.taxis for s in cfg.seeds]
    jobs = [(cfg, m, k, s, _cell_dir(root, m, k, s)) for m, k, s in cells]
    results = {}
    current = None
    try:
        if threads() > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=threads()) as pool:
                for res in pool.map(_cell_job, jobs):
                    results[res[:3]] = res
        else:
            problem = build_problem(cfg)
            for job in jobs:
                current = job[1:4]
                curve = run_cell(*job, problem=problem)
                results[job[1:4]] = (*job[1:4], len(curve), summarize(curve))
    except Exception as exc:
        _write_summary(root, cells, results)
        write_manifest(root, failure=f"cell {current} raised {type(exc).__name__}: {exc}")
        raise
    _write_summary(root, cells, results)
    write_manifest(root)
    return root


def _write_summary(root, cells, results):
    with open(Path(root) / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for key in cells:
            if key in results:
                method, taxis, seed, n, (reward, waiting) = results[key]
                w.writerow([method, taxis, seed, n, repr(reward), repr(waiting)])


def read_summary(paths):
    rows = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                rows.append({"method": r["method"], "taxis": int(r["taxis"]), "seed": int(r["seed"]),
                             "reward": float(r["reward_last10"]),
                             "waiting": float(r["waiting_last10"])})
    return rows


def sign_test(diffs):
    """Sign test on paired differences (zeros dropped).

    Returns ``(p_two_sided, p_lower)`` where ``p_lower`` is the one-sided
    p-value for the first sample being smaller; ``None`` when undefined.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    if d.size == 0:
        return 1.0, 1.0
    neg = int(np.count_nonzero(d < 0))
    two = stats.binomtest(neg, d.size, 0.5).pvalue
    lower = stats.binomtest(neg, d.size, 0.5, alternative="greater").pvalue
    return float(two), float(lower)


@dataclass
class Comparison:
    stats: list = field(default_factory=list)
    pairs: list = field(default_factory=list)

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "taxis", "n", "reward_mean", "reward_std", "waiting_mean", "waiting_std"])
            for s in self.stats:
                w.writerow([s["method"], s["taxis"], s["n"], repr(s["reward_mean"]), repr(s["reward_std"]),
                            repr(s["waiting_mean"]), repr(s["waiting_std"])])
            w.writerow([])
            w.writerow(["method_a", "method_b", "taxis", "metric", "mean_diff", "p_two_sided", "p_a_lower"])
            for p in self.pairs:
                w.writerow([p["a"], p["b"], p["taxis"], p["metric"], repr(p["mean_diff"]),
                            _fmt_p(p["p_two_sided"]), _fmt_p(p["p_a_lower"])])

    def ordering(self, taxis, metric="waiting"):
        """Methods sorted best-first (lowest waiting, highest reward)."""
        rows = [s for s in self.stats if s["taxis"] == taxis]
        sign = 1 if metric == "waiting" else -1
        return [s["method"] for s in sorted(rows, key=lambda s: sign * s[f"{metric}_mean"])]


def _fmt_p(p):
    return "n/a" if p is None else repr(p)


def compare_methods(rows) -> Comparison:
    """Per-taxi-count dispersion and pairwise sign tests across seeds.

    ``rows`` are summary records (see :func:`read_summary`). Every method
    must cover the same ``(taxis, seed)`` grid.
    """
    methods = sorted({r["method"] for r in rows})
    grid = {m: {(r["taxis"], r["seed"]): r for r in rows if r["method"] == m} for m in methods}
    keys = set(next(iter(grid.values())).keys()) if grid else set()
    for m in methods:
        if set(grid[m]) != keys:
            raise ComparisonError(f"method {m!r} covers a different (taxis, seed) grid")
    out = Comparison()
    for k in sorted({t for t, _ in keys}):
        seeds = sorted(s for t, s in keys if t == k)
        for m in methods:
            rew = np.array([grid[m][(k, s)]["reward"] for s in seeds])
            wait = np.array([grid[m][(k, s)]["waiting"] for s in seeds])
            ddof = 1 if len(seeds) > 1 else 0
            out.stats.append({"method": m, "taxis": k, "n": len(seeds),
                              "reward_mean": float(rew.mean()), "reward_std": float(rew.std(ddof=ddof)),
                              "waiting_mean": float(wait.mean()), "waiting_std": float(wait.std(ddof=ddof))})
        for a in methods:
            for b in methods:
                if a == b and len(methods) > 1:
                    continue
                for metric in ("waiting", "reward"):
                    d = np.array([grid[a][(k, s)][metric] - grid[b][(k, s)][metric] for s in seeds])
                    two, lower = sign_test(d) if len(seeds) > 1 else (None, None)
                    out.pairs.append({"a": a, "b": b, "taxis": k, "metric": metric,
                                      "mean_diff": float(d.mean()), "p_two_sided": two, "p_a_lower": lower,
                                      "diffs": d})
    return out
