"""Tests for end-to-end runs of the command-line workflow."""

import json
import math
import time

import pytest

from ergodic_inventory import cli
from ergodic_inventory.config import load_run_config
from ergodic_inventory.pipeline import StudyRunner
from ergodic_inventory.simulator import SimConfig, make_ss_policy, simulate


@pytest.fixture
def mock_config_path(tmp_path):
    """Create a study configuration with a short simulation."""
    config_file = tmp_path / "study.ini"
    config_content = """[model]
drift = constant
drift_mu = 1.0
volatility = constant
volatility_sigma = 1.4142135623730951

[holding]
family = piecewise-linear
holding = 1.0
shortage = 1.0

[ordering]
family = setup-plus-linear
setup = 1.0
rate = 0.0

[simulation]
dt = 0.01
horizon = 40
replications = 1
batch_count = 20
record_every = 50
policy = ss
s = 0.0
S = 2.0

[logging]
level = WARNING
"""
    config_file.write_text(config_content)
    return str(config_file)


def run_cli(*args):
    return cli.main(list(args))


def test_full_workflow(mock_config_path, tmp_path):
    """Test solve, verify, simulate and report against one output directory."""
    out = str(tmp_path / "results")
    common = ["--config", mock_config_path, "--out", out]
    assert run_cli("solve", *common) == 0
    assert run_cli("verify", *common) == 0
    assert run_cli("simulate", *common) == 0
    assert run_cli("report", *common) == 0

    with open(f"{out}/certificate.json") as f:
        assert json.load(f)["pass"] is True
    with open(f"{out}/simulation.json") as f:
        simulation = json.load(f)
    # one replication still gets a batch-means interval
    assert simulation["replications"] == 1
    assert math.isfinite(simulation["ci_halfwidth"])
    with open(f"{out}/summary.md") as f:
        assert "## Simulation" in f.read()


def test_solve_is_deterministic(mock_config_path, tmp_path):
    """Test that two runs of solve write identical optimum files."""
    outputs = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        assert run_cli("solve", "--config", mock_config_path, "--out", out) == 0
        with open(f"{out}/optimum.json", "rb") as f:
            outputs.append(f.read())
    assert outputs[0] == outputs[1]


def test_simulate_is_deterministic_given_seed(mock_config_path, tmp_path):
    """Test that the trace depends only on the configuration and seed."""
    traces = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        args = ["simulate", "--config", mock_config_path, "--out", out, "--seed", "5"]
        assert run_cli(*args) == 0
        with open(f"{out}/trace.csv", "rb") as f:
            traces.append(f.read())
    assert traces[0] == traces[1]


@pytest.mark.slow
def test_optimal_policy_cost_matches_alpha_star(tmp_path):
    """Test the simulated cost of (s*, S*) at horizon 10^4 with 32 replications."""
    runner = StudyRunner(load_run_config(None), str(tmp_path))
    optimum = runner.solve()
    cfg = SimConfig(dt=1e-3, horizon=1e4, replications=32, seed=2024, batch_count=20)
    started = time.perf_counter()
    trace = simulate(
        runner.model,
        runner.h,
        runner.c,
        make_ss_policy(optimum.s_star, optimum.S_star),
        cfg,
        optimum.S_star,
    )
    assert time.perf_counter() - started < 60.0
    assert abs(trace.average_cost - optimum.alpha_star) <= 3 * trace.standard_error


@pytest.mark.slow
def test_reflected_baseline_matches_exponential(tmp_path):
    """Test the reflected baseline against the exponential stationary law."""
    run = load_run_config(
        None,
        [
            "simulation.dt=0.001",
            "simulation.horizon=10000",
            "simulation.replications=1",
            "simulation.record_every=0",
        ],
    )
    summary = StudyRunner(run, str(tmp_path)).simulate("reflected")
    assert summary["ks_distance"] < 0.02
    assert abs(summary["mean"] - 1.0) <= 3 * summary["standard_error"]


@pytest.mark.slow
def test_truncation_gap_within_bound(tmp_path):
    """Test the truncated cost gap against its bound for j in {10, 20, 40}."""
    run = load_run_config(
        None,
        [
            "simulation.dt=0.01",
            "simulation.horizon=2000",
            "simulation.replications=4",
            "simulation.record_every=0",
            "simulation.order_up_to=100",
        ],
    )
    rows = StudyRunner(run, str(tmp_path)).compare([10.0, 20.0, 40.0])
    for row in rows:
        assert row["within_bound"]
        assert row["gap"] <= row["bound"] + 3 * row["gap_ci"]
    bounds = [row["bound"] for row in rows]
    assert bounds == sorted(bounds, reverse=True)


@pytest.mark.slow
def test_halving_dt_stays_within_ci(tmp_path):
    """Test that halving dt moves the optimal-policy cost by less than the CI."""
    runner = StudyRunner(load_run_config(None), str(tmp_path))
    optimum = runner.solve()
    policy = make_ss_policy(optimum.s_star, optimum.S_star)
    traces = []
    for dt in (2e-3, 1e-3):
        cfg = SimConfig(dt=dt, horizon=2000.0, replications=8, seed=99, batch_count=20)
        traces.append(
            simulate(runner.model, runner.h, runner.c, policy, cfg, optimum.S_star)
        )
    coarse, fine = traces
    allowance = coarse.ci_halfwidth + fine.ci_halfwidth
    assert abs(coarse.average_cost - fine.average_cost) <= allowance
