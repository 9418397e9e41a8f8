"""Tests for the pipeline and report modules."""

import json
import shutil
from unittest import mock

import pytest

from ergodic_inventory.artifacts import (
    CERTIFICATE_FILE,
    COMPARE_FILE,
    COMPARE_HEADER,
    EVALUATIONS_FILE,
    FINGERPRINT_KEY,
    HISTOGRAM_FILE,
    OPTIMUM_FILE,
    PLOT_FILE,
    RESIDUALS_FILE,
    SIMULATION_FILE,
    SUMMARY_FILE,
    TRACE_FILE,
)
from ergodic_inventory.config import load_run_config
from ergodic_inventory.errors import CertificateFailure, ConfigError
from ergodic_inventory.pipeline import StudyRunner
from ergodic_inventory.report import SPARK_LEVELS, sparkline

QUICK_SIMULATION = [
    "simulation.dt=0.01",
    "simulation.horizon=20",
    "simulation.replications=2",
    "simulation.batch_count=10",
    "simulation.record_every=100",
]


def quick_run(*overrides):
    """Baseline configuration with a short simulation."""
    return load_run_config(None, [*QUICK_SIMULATION, *overrides])


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    """Output directory holding a solved and verified baseline study."""
    directory = str(tmp_path_factory.mktemp("study"))
    runner = StudyRunner(quick_run("verifier.dump_residuals=true"), directory)
    runner.solve()
    runner.verify()
    return directory


def read_json(directory, name):
    with open(f"{directory}/{name}") as f:
        return json.load(f)


def test_validate_inputs_passes_baseline(tmp_path):
    """Test that the baseline model and costs pass validation."""
    runner = StudyRunner(quick_run(), str(tmp_path))
    reports = runner.validate_inputs()
    assert len(reports) == 3
    assert all(report.passed for report in reports)


def test_validate_inputs_rejects_wrong_bounds(tmp_path):
    """Test that declared drift bounds not matching the drift are rejected."""
    runner = StudyRunner(quick_run("model.mu_lo=0.5", "model.mu_hi=0.8"), str(tmp_path))
    with mock.patch("ergodic_inventory.pipeline.logger") as mock_logger:
        with pytest.raises(ConfigError):
            runner.validate_inputs()
    mock_logger.error.assert_called()


def test_solve_writes_optimum(solved_dir):
    """Test the optimum artifact of the baseline."""
    optimum = read_json(solved_dir, OPTIMUM_FILE)
    assert optimum["s_star"] < optimum["S_star"]
    assert optimum["alpha_star"] <= 1.0 + 2.0**0.5
    assert set(optimum["bracket"]) == {"B1", "B2"}
    with open(f"{solved_dir}/{EVALUATIONS_FILE}") as f:
        assert f.readline().strip() == "stage,objective,s,S,value"


def test_verify_writes_passing_certificate(solved_dir):
    """Test that the baseline certificate passes and residuals are dumped."""
    certificate = read_json(solved_dir, CERTIFICATE_FILE)
    assert certificate["pass"] is True
    assert certificate["z_bar"] > 0
    assert certificate["underline"]["underline_s"] == certificate["underline_s"]
    with open(f"{solved_dir}/{RESIDUALS_FILE}") as f:
        assert f.readline().strip() == "z,residual"


def test_verify_fails_with_perturbed_alpha(solved_dir, tmp_path):
    """Test that a perturbed alpha writes a failing certificate and raises."""
    shutil.copy(f"{solved_dir}/{OPTIMUM_FILE}", tmp_path / OPTIMUM_FILE)
    runner = StudyRunner(quick_run("verifier.alpha_perturbation=0.1"), str(tmp_path))
    with pytest.raises(CertificateFailure) as excinfo:
        runner.verify()
    assert excinfo.value.offending
    assert read_json(str(tmp_path), CERTIFICATE_FILE)["pass"] is False


def test_simulate_ss_policy(tmp_path):
    """Test the simulation summary and trace of a fixed (s, S) policy."""
    runner = StudyRunner(quick_run("simulation.policy=ss"), str(tmp_path))
    summary = runner.simulate()
    assert summary["policy"] == "ss"
    assert summary["seed"] == 20240601
    assert summary["dt"] == 0.01
    assert read_json(str(tmp_path), SIMULATION_FILE)["average_cost"] == pytest.approx(
        summary["average_cost"]
    )
    with open(tmp_path / TRACE_FILE) as f:
        lines = f.read().splitlines()
    assert lines[0] == "time,state,cumulative_order,cumulative_cost"
    assert len(lines) == 1 + 21


def test_simulate_optimal_uses_stored_optimum(solved_dir, tmp_path):
    """Test that the optimal policy is read from optimum.json."""
    shutil.copy(f"{solved_dir}/{OPTIMUM_FILE}", tmp_path / OPTIMUM_FILE)
    runner = StudyRunner(quick_run(), str(tmp_path))
    with mock.patch.object(runner, "solve") as mock_solve:
        summary = runner.simulate("optimal")
    mock_solve.assert_not_called()
    assert summary["policy"] == "optimal"
    assert "(s,S)" in summary["label"]


def test_simulate_optimal_resolves_for_changed_settings(solved_dir, tmp_path):
    """Test that an optimum solved for other settings is not reused."""
    shutil.copy(f"{solved_dir}/{OPTIMUM_FILE}", tmp_path / OPTIMUM_FILE)
    stored = read_json(str(tmp_path), OPTIMUM_FILE)
    runner = StudyRunner(quick_run("ordering.setup=2"), str(tmp_path))
    with mock.patch.object(runner, "solve") as mock_solve:
        mock_solve.return_value.to_dict.return_value = stored
        runner.simulate("optimal")
    mock_solve.assert_called_once()


def test_optimum_records_settings_fingerprint(solved_dir):
    """Test that optimum.json carries the digest of the solve settings."""
    optimum = read_json(solved_dir, OPTIMUM_FILE)
    assert optimum[FINGERPRINT_KEY] == quick_run().fingerprint()
    assert optimum[FINGERPRINT_KEY] != quick_run("holding.holding=2").fingerprint()


def test_simulate_reflected_writes_histogram(tmp_path):
    """Test the histogram artifact of the reflected process."""
    runner = StudyRunner(quick_run("simulation.hist_bins=50"), str(tmp_path))
    summary = runner.simulate("reflected")
    assert summary["bins"] == 50
    with open(tmp_path / HISTOGRAM_FILE) as f:
        lines = f.read().splitlines()
    assert lines[0] == "bin_left,bin_right,mass"
    assert len(lines) == 51


def test_simulate_truncated_reports_base(tmp_path):
    """Test that the truncated run carries the base summary."""
    runner = StudyRunner(quick_run("simulation.x0=0"), str(tmp_path))
    summary = runner.simulate("truncated")
    assert summary["policy"] == "truncated"
    assert summary["base"]["average_cost"] > summary["average_cost"]


def test_compare_writes_rows(tmp_path):
    """Test one compare row per truncation level."""
    runner = StudyRunner(quick_run(), str(tmp_path))
    rows = runner.compare([20.0, 10.0])
    assert [row["j"] for row in rows] == [10.0, 20.0]
    for row in rows:
        assert row["gap"] == pytest.approx(row["truncated_cost"] - row["base_cost"])
        assert row["bound"] == pytest.approx(4.0 / row["j"])
    with open(tmp_path / COMPARE_FILE) as f:
        assert f.readline().strip() == ",".join(COMPARE_HEADER)


def test_report_writes_summary_and_plot(solved_dir, tmp_path):
    """Test summary.md and the plot from stored artifacts."""
    for name in (OPTIMUM_FILE, CERTIFICATE_FILE):
        shutil.copy(f"{solved_dir}/{name}", tmp_path / name)
    runner = StudyRunner(quick_run(), str(tmp_path))
    path = runner.report()
    text = open(path).read()
    assert path.endswith(SUMMARY_FILE)
    assert "## Optimal policy" in text
    assert "| pass | yes |" in text
    assert "## Simulation" not in text
    assert (tmp_path / PLOT_FILE).exists()


def test_report_verifies_when_certificate_missing(solved_dir, tmp_path):
    """Test that report runs the verifier when no certificate exists."""
    shutil.copy(f"{solved_dir}/{OPTIMUM_FILE}", tmp_path / OPTIMUM_FILE)
    runner = StudyRunner(quick_run(), str(tmp_path))
    runner.report()
    assert (tmp_path / CERTIFICATE_FILE).exists()


def test_sparkline_levels():
    """Test that a ramp spans the lowest to the highest level."""
    line = sparkline(range(10), width=10)
    assert line == SPARK_LEVELS
    assert sparkline([2.0, 2.0, 2.0]) == SPARK_LEVELS[4] * 3
    assert sparkline([]) == ""
    assert len(sparkline(range(1000))) == 64
