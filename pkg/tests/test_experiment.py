import hashlib
from dataclasses import replace

import numpy as np
import pytest

from fleetsim import experiment as ex
from fleetsim.cli import main
from fleetsim.experiment import (
    ComparisonError, ConfigError, ExperimentConfig, compare_methods, parse_config, read_summary,
    run_experiment, sign_test,
)

SMALL = ExperimentConfig(taxis=(5,), seeds=(0,), horizon=300, epochs=2, effective_horizon=1000)


def test_parse_config_and_settings():
    cfg = parse_config("setting = S2\n# comment\ntaxis = 10, 20 30\nexploration = false\nn_c = 0.5\n")
    assert cfg.network == "lattice:33x33:1:10"
    assert cfg.taxis == (10, 20, 30) and cfg.exploration is False and cfg.n_c == 0.5
    assert parse_config("").n_c == 0.3
    with pytest.raises(ConfigError, match="<config>:2: unknown key 'taxi'"):
        parse_config("seeds = 1\ntaxi = 3\n")
    with pytest.raises(ConfigError, match="expected"):
        parse_config("epochs 3\n")
    with pytest.raises(ConfigError, match="not a boolean"):
        parse_config("exploration = maybe\n")
    with pytest.raises(ConfigError, match="unknown setting"):
        parse_config("setting = S9\n")


def test_validation():
    with pytest.raises(ConfigError):
        replace(SMALL, taxis=(-1,)).validate()
    with pytest.raises(ConfigError):
        replace(SMALL, epochs=-1).validate()
    with pytest.raises(ConfigError, match="does not exist"):
        replace(SMALL, network="file:/nonexistent/net.txt").validate()
    with pytest.raises(ConfigError, match="unknown method"):
        replace(SMALL, methods=("greedy",)).validate()
    with pytest.raises(ConfigError, match="needs a network"):
        parse_config("setting = S3\n").validate()


def test_paper_scale():
    cfg = ex.paper_scale(SMALL)
    assert (cfg.horizon, cfg.epochs, cfg.effective_horizon) == (50_000, 1000, 50_000)
    assert ex.paper_scale(replace(SMALL, setting="S4")).epochs == 3000


def test_random_single_epoch_has_no_training_artifacts(tmp_path):
    cfg = replace(SMALL, methods=("random",), epochs=1, taxis=(3, 4), seeds=(0, 1))
    run_experiment(cfg, tmp_path)
    rows = read_summary([tmp_path / "summary.csv"])
    assert len(rows) == 4
    assert not list(tmp_path.rglob("checkpoints"))
    curve = (tmp_path / "random" / "taxis-3" / "seed-0" / "curve.csv").read_text().splitlines()
    assert len(curve) == 2


def test_manifest_hashes_every_file(tmp_path):
    run_experiment(replace(SMALL, methods=("mf-rl",)), tmp_path)
    lines = (tmp_path / "MANIFEST").read_text().splitlines()
    assert lines[0] == "status ok"
    listed = {}
    for line in lines[1:]:
        digest, name = line.split("  ", 1)
        listed[name] = digest
    files = {p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file()} - {"MANIFEST"}
    assert set(listed) == files
    for name, digest in listed.items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest


def test_failure_preserves_partial_results(tmp_path, monkeypatch):
    real = ex.run_cell

    def flaky(cfg, method, taxis, seed, out_dir, problem=None):
        if seed == 1:
            raise RuntimeError("boom")
        return real(cfg, method, taxis, seed, out_dir, problem)

    monkeypatch.setattr(ex, "run_cell", flaky)
    with pytest.raises(RuntimeError):
        run_experiment(replace(SMALL, methods=("random",), seeds=(0, 1, 2)), tmp_path)
    manifest = (tmp_path / "MANIFEST").read_text()
    assert manifest.startswith("status failed\nfailure cell ('random', 5, 1) raised RuntimeError: boom")
    assert len(read_summary([tmp_path / "summary.csv"])) == 1


def test_sign_test_values():
    two, lower = sign_test([-1, -2, -3, -4, -5])
    assert lower == pytest.approx(1 / 32) and two == pytest.approx(1 / 16)
    assert sign_test([0, 0]) == (1.0, 1.0)


def _rows(methods, seeds, taxis=(5,)):
    rng = np.random.default_rng(0)
    return [{"method": m, "taxis": k, "seed": s, "reward": float(rng.random()), "waiting": float(rng.random())}
            for m in methods for k in taxis for s in seeds]


def test_compare_self_and_single_seed(tmp_path):
    rows = _rows(["a"], range(4))
    report = compare_methods(rows)
    assert all(np.all(p["diffs"] == 0) for p in report.pairs)
    single = compare_methods(_rows(["a", "b"], [0]))
    assert all(s["reward_std"] == 0 and s["waiting_std"] == 0 for s in single.stats)
    assert all(p["p_two_sided"] is None for p in single.pairs)
    single.write(tmp_path / "cmp.csv")
    assert "n/a" in (tmp_path / "cmp.csv").read_text()


def test_compare_rejects_mismatched_grids():
    rows = _rows(["a"], [0, 1]) + _rows(["b"], [0, 2])
    with pytest.raises(ComparisonError):
        compare_methods(rows)


def test_ordering_by_waiting():
    rows = [{"method": m, "taxis": 5, "seed": s, "reward": 1.0, "waiting": w}
            for m, w in (("slow", 9.0), ("fast", 1.0)) for s in range(3)]
    assert compare_methods(rows).ordering(5) == ["fast", "slow"]


def test_cli_verbs(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("taxis = 5\nseeds = 0\nhorizon = 300\nepochs = 2\neffective_horizon = 1000\n"
                   "methods = random, mb-dispatch:committed\n")
    out = tmp_path / "out"
    assert main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["compare", str(out / "summary.csv"), "--out", str(out)]) == 0
    assert (out / "comparison.csv").exists()
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim"), "--seed", "3"]) == 0
    assert "seed=3" in capsys.readouterr().out
    assert main(["extract-effective", "--config", str(cfg), "--out", str(tmp_path / "eff")]) == 0
    eff = tmp_path / "eff" / "effective_policy.txt"
    imit = tmp_path / "imit.cfg"
    imit.write_text(cfg.read_text() + f"target = file:{eff}\n")
    assert main(["imitate", "--config", str(imit), "--out", str(tmp_path / "imit")]) == 0
    train_cfg = tmp_path / "train.cfg"
    train_cfg.write_text(cfg.read_text() + f"policy = file:{tmp_path / 'imit' / 'init_policy.txt'}\n")
    assert main(["train", "--config", str(train_cfg), "--out", str(tmp_path / "train")]) == 0
    assert (tmp_path / "train" / "taxis-5" / "seed-0" / "curve.csv").exists()


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("taxis = 5\nwhatever = 1\n")
    assert main(["experiment", "--config", str(bad)]) == 1
    assert "unknown key 'whatever'" in capsys.readouterr().err
    assert main(["imitate", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit):
        main(["fly"])
