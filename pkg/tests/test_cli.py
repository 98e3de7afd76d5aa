import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from pa_lab.cli import main
from pa_lab.config import build_config, load_config
from pa_lab.hjb import ConfigError

TINY = """
[market]
b = 0.1
sigma = 0.3

[default]
family = "uniform"

[grid]
nt = 12
nx = 10
ny = 10

[solver]
max_iter = 5
z_n = 5
zx_n = 5
g_n = 5
gx_n = 5
u_n = 9

[sim]
paths = 200
dt = 0.02
seed = 7
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return str(path)


def test_solve_roundtrip(runner, tiny_config, tmp_path):
    out = tmp_path / "solve"
    res = runner.invoke(main, ["solve", "--config", tiny_config, "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert (out / "solution.npz").exists()
    assert (out / "grid_dump.csv").exists()
    diag = json.loads((out / "diagnostics.json").read_text())
    assert "converged" in diag and "principal_value" in diag

    sim_out = tmp_path / "sim"
    res = runner.invoke(main, [
        "simulate", "--config", tiny_config, "--policy", str(out / "solution.npz"),
        "--out", str(sim_out),
    ])
    assert res.exit_code == 0, res.output
    csvs = [f for f in os.listdir(sim_out) if f.endswith(".csv")]
    assert len(csvs) == 1
    lines = (sim_out / csvs[0]).read_text().splitlines()
    assert len(lines) == 1 + 51  # header + n_steps + 1 rows


def test_solve_rejects_case_mismatch(runner, tmp_path):
    cfg = TINY.replace('family = "uniform"', 'family = "beta"\na = 2\nb = 4')
    path = tmp_path / "beta.toml"
    path.write_text(cfg)
    res = runner.invoke(main, ["solve", "--config", str(path), "--case", "unbounded",
                               "--out", str(tmp_path / "o")])
    assert res.exit_code != 0
    assert "beta" in res.output and "bounded" in res.output


def test_missing_market_section(runner, tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[default]\nfamily = \"uniform\"\n")
    res = runner.invoke(main, ["solve", "--config", str(path), "--out", str(tmp_path / "o")])
    assert res.exit_code != 0
    assert "market" in res.output


def test_unknown_key_rejected(runner, tmp_path):
    path = tmp_path / "typo.toml"
    path.write_text(TINY + "\n[output]\ndir = \".\"\n")
    ok = load_config(str(path))
    assert ok.output_dir == "."
    path.write_text(TINY.replace("seed = 7", "sead = 7"))
    res = runner.invoke(main, ["solve", "--config", str(path), "--out", str(tmp_path / "o")])
    assert res.exit_code != 0
    assert "sead" in res.output


def test_simulate_missing_policy(runner, tiny_config, tmp_path):
    res = runner.invoke(main, [
        "simulate", "--config", tiny_config, "--policy", str(tmp_path / "nope.npz"),
        "--out", str(tmp_path / "s"),
    ])
    assert res.exit_code != 0


def test_simulate_determinism(runner, tiny_config, tmp_path):
    out = tmp_path / "solve"
    assert runner.invoke(main, ["solve", "--config", tiny_config, "--out", str(out)]).exit_code == 0
    blobs = []
    for d in ("s1", "s2"):
        res = runner.invoke(main, [
            "simulate", "--config", tiny_config, "--policy", str(out / "solution.npz"),
            "--out", str(tmp_path / d), "--paths", "10", "--seed", "7",
        ])
        assert res.exit_code == 0
        name = [f for f in os.listdir(tmp_path / d) if f.endswith(".csv")][0]
        blobs.append((tmp_path / d / name).read_bytes())
    assert blobs[0] == blobs[1]


def test_simulate_freeze_both(runner, tiny_config, tmp_path):
    out = tmp_path / "solve"
    assert runner.invoke(main, ["solve", "--config", tiny_config, "--out", str(out)]).exit_code == 0
    res = runner.invoke(main, [
        "simulate", "--config", tiny_config, "--policy", str(out / "solution.npz"),
        "--out", str(tmp_path / "s"), "--freeze-mode", "both",
    ])
    assert res.exit_code == 0
    csvs = [f for f in os.listdir(tmp_path / "s") if f.endswith(".csv")]
    assert len(csvs) == 2


def test_compare_linear_cmd(runner, tiny_config, tmp_path):
    res = runner.invoke(main, [
        "compare-linear", "--config", tiny_config, "--out", str(tmp_path / "cl"),
        "--p-grid", "0.2,0.6",
    ])
    assert res.exit_code == 0, res.output
    rep = json.loads((tmp_path / "cl" / "compare_linear.json").read_text())
    assert rep["gap"] >= 0.0
    assert set(map(float, rep["linear"])) == {0.2, 0.6}


def test_experiments_cmd(runner, tiny_config, tmp_path):
    res = runner.invoke(main, [
        "experiments", "fig4", "--config", tiny_config, "--out", str(tmp_path / "e"),
        "--paths", "100",
    ])
    assert res.exit_code == 0, res.output
    man = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert len(man["files"]) == 3


def test_check_hazard_suite(runner):
    res = runner.invoke(main, ["check", "hazard"])
    assert res.exit_code == 0, res.output
    assert "[PASS]" in res.output and "[FAIL]" not in res.output


def test_check_oracle_suite(runner):
    res = runner.invoke(main, ["check", "oracle"])
    assert res.exit_code == 0, res.output
    assert "[FAIL]" not in res.output


def test_check_degenerate_suite():
    from pa_lab import checks

    results = checks.run_suite("degenerate")
    assert all(ok for _, ok, _ in results), results


def test_check_martingale_suite_small():
    from pa_lab import checks

    results = checks.martingale_suite(n_paths=4_000)
    assert all(ok for _, ok, _ in results), results


def test_check_unknown_suite(runner):
    res = runner.invoke(main, ["check", "quantum"])
    assert res.exit_code != 0


def test_build_config_defaults():
    cfg = build_config({"market": {}, "default": {}})
    assert cfg.market.b[0] == 0.1
    assert cfg.model.family.value == "uniform"
    assert cfg.grid.nt == 40
    assert cfg.case_for_model() == "bounded"


def test_build_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        build_config({"market": {"eta": -1.0}, "default": {}})
    with pytest.raises(ConfigError):
        build_config({"market": {}, "default": {"family": "weibull"}})
    with pytest.raises(ConfigError):
        build_config({"market": {}, "default": {}, "agent": {"reservation": 1.0}})
    with pytest.raises(ConfigError):
        build_config({"market": {}, "default": {}, "sim": {"dt": 0.3}})


def test_config_fuzz_never_crashes(rng):
    # any config accepted by validation must run end to end (or end with a
    # clean non-converged diagnostic), never raise
    from pa_lab import hjb

    families = [
        {"family": "uniform"},
        {"family": "beta", "a": 2.0, "b": 4.0},
        {"family": "beta", "a": 4.0, "b": 2.0},
        {"family": "exponential", "rate": 2.0},
        {"family": "none"},
    ]
    n_accepted = 0
    for trial in range(200):
        data = {
            "market": {
                "b": float(rng.uniform(-0.2, 0.3)),
                "sigma": float(rng.uniform(0.1, 1.0)),
                "x0": float(rng.uniform(0.5, 5.0)),
                "alpha": float(rng.uniform(-0.5, 0.5)),
                "eta": float(rng.uniform(0.2, 3.0)),
                "c_lo": 0.0,
                "c_hi": float(rng.uniform(0.5, 2.0)),
            },
            "default": dict(rng.choice(families)),
            "grid": {"nt": int(rng.integers(8, 13)), "nx": 8, "ny": 8},
            "solver": {
                "max_iter": 2, "z_n": 3, "zx_n": 3, "g_n": 3, "gx_n": 3, "u_n": 3,
                "refine_levels": 1, "refine_levels_iter": 1,
            },
            "sim": {"paths": 20, "dt": 0.05, "seed": int(rng.integers(0, 2**31))},
        }
        try:
            cfg = build_config(data)
        except ConfigError:
            continue
        n_accepted += 1
        v, policy, diag = hjb.actor_critic(
            cfg.market, cfg.model, cfg.grid, cfg.solver_for_class(),
            cfg.case_for_model(),
        )
        assert isinstance(diag["converged"], bool)
        assert np.all(np.isfinite(v.values))
    assert n_accepted >= 150
