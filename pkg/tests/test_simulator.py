"""Tests for the simulator module."""

import math
from unittest import mock

import numpy as np
import pytest

from ergodic_inventory.errors import (
    CouplingFailure,
    DomainError,
    InsufficientData,
    SimulationFailure,
)
from ergodic_inventory.families import build_model
from ergodic_inventory.simulator import (
    JumpContext,
    _coalesce,
    _threshold_block,
    ImpulsePolicy,
    SimConfig,
    batch_interval,
    cycle_time_lower_bound,
    make_ss_policy,
    never_order_policy,
    order_up_to_policy,
    regenerative_cycle_stats,
    simulate,
    simulate_coupled,
    simulate_reflected,
    truncate_policy,
    truncation_gap_bound,
)


@pytest.fixture
def quick_config():
    """Coarse settings for fast runs."""
    return SimConfig(dt=0.01, horizon=50.0, replications=4, seed=7, batch_count=10)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dt": 0.0},
        {"dt": 1.0, "horizon": 1.0},
        {"replications": 0},
        {"batch_count": 5},
        {"dt": 0.1, "horizon": 0.5},
    ],
    ids=["dt", "horizon", "replications", "batches", "too-few-steps"],
)
def test_sim_config_rejects_invalid(kwargs):
    """Test that invalid discretisation settings are rejected."""
    with pytest.raises(DomainError):
        SimConfig(**kwargs)


def test_sim_config_steps():
    """Test the number of Euler steps."""
    assert SimConfig(dt=0.01, horizon=2.0).n_steps == 200


def test_ss_policy_orders_at_or_below_s():
    """Test that (s, S) orders S - z exactly when z <= s."""
    policy = make_ss_policy(0.0, 2.0)
    q = policy.orders(0.0, np.array([-0.3, 0.0, 0.01, 3.0]))
    np.testing.assert_allclose(q, [2.3, 2.0, 0.0, 0.0])


def test_ss_policy_rejects_inverted_pair():
    """Test that s >= S is rejected."""
    with pytest.raises(DomainError):
        make_ss_policy(1.0, 1.0)


def test_policy_rejects_negative_orders():
    """Test that a policy returning a negative order is rejected."""
    policy = ImpulsePolicy(decide=lambda t, z, ctx: -np.ones_like(z), label="bad")
    with pytest.raises(DomainError):
        policy.orders(0.0, np.zeros(3))


def test_order_up_to_and_never_policies():
    """Test the order-up-to and never-order helpers."""
    z = np.array([-1.0, 5.0])
    up_to = order_up_to_policy(0.0, 100.0)
    np.testing.assert_allclose(up_to.orders(0.0, z), [101.0, 0.0])
    np.testing.assert_allclose(never_order_policy().orders(0.0, z), [0.0, 0.0])


def test_truncation_rules():
    """Test the suppress, pass-through and clip rules at j = 10."""
    truncated = truncate_policy(never_order_policy(), 10.0)
    zj = np.array([1.0, 6.0, 3.0, 3.0])
    ctx = JumpContext(
        base_order=np.array([99.0, 1.0, 2.0, 0.0]),
        base_state=np.full(4, 50.0),
        crossed_zero=np.zeros(4, dtype=bool),
    )
    np.testing.assert_allclose(truncated.orders(0.0, zj, ctx), [9.0, 0.0, 2.0, 0.0])


def test_truncation_lifts_from_zero():
    """Test that reaching zero lifts the truncated state to max(min(Z, j), 0)."""
    truncated = truncate_policy(never_order_policy(), 10.0)
    zj = np.zeros(3)
    ctx = JumpContext(
        base_order=np.zeros(3),
        base_state=np.array([3.0, -2.0, 15.0]),
        crossed_zero=np.ones(3, dtype=bool),
    )
    np.testing.assert_allclose(truncated.orders(0.0, zj, ctx), [3.0, 0.0, 10.0])


def test_truncation_rejects_nonpositive_level():
    """Test that j must be positive."""
    with pytest.raises(DomainError):
        truncate_policy(never_order_policy(), 0.0)


def test_zero_noise_follows_drift(abs_holding, setup_cost):
    """Test that with negligible noise the state falls at rate mu."""
    model = build_model("constant", {"mu": 1.0}, "constant", {"sigma": 1e-6})
    cfg = SimConfig(dt=0.01, horizon=1.0, replications=1, batch_count=10)
    with mock.patch("ergodic_inventory.simulator.logger"):
        trace = simulate(model, abs_holding, setup_cost, never_order_policy(), cfg, 5.0)
    assert trace.final_state == pytest.approx(4.0, abs=1e-3)
    assert trace.order_events == []
    # holding cost of a path falling from 5 to 4
    assert trace.average_cost == pytest.approx(4.5, abs=1e-3)


def test_step_size_warning(baseline_model, abs_holding, setup_cost):
    """Test that dt above the stability threshold is warned about."""
    cfg = SimConfig(dt=0.5, horizon=10.0, replications=1, batch_count=10)
    with mock.patch("ergodic_inventory.simulator.logger") as mock_logger:
        simulate(
            baseline_model, abs_holding, setup_cost, make_ss_policy(0, 2), cfg, 1.0
        )
    mock_logger.warning.assert_called_once()


def test_average_cost_accounting(baseline_model, abs_holding, setup_cost, quick_config):
    """Test average cost = (holding integral + order costs) / horizon."""
    trace = simulate(
        baseline_model,
        abs_holding,
        setup_cost,
        make_ss_policy(0.0, 2.0),
        quick_config,
        1.0,
    )
    assert trace.average_cost == pytest.approx(
        (trace.holding_cost_integral + trace.order_cost_total) / trace.horizon,
        rel=1e-12,
    )
    assert trace.ci_halfwidth >= 0
    assert trace.batch_means.shape == (4, 10)
    assert all(event.cost == 1.0 for event in trace.order_events)
    assert trace.summary()["order_count"] == len(trace.order_events)


def test_ss_average_cost_matches_closed_form(baseline_model, abs_holding, setup_cost):
    """Test that the (0, 2) policy costs about alpha(0, 2) = 2.5."""
    cfg = SimConfig(dt=0.01, horizon=400.0, replications=8, seed=11, batch_count=20)
    trace = simulate(
        baseline_model, abs_holding, setup_cost, make_ss_policy(0.0, 2.0), cfg, 2.0
    )
    # the Euler overshoot below s biases the estimate by O(sqrt(dt))
    assert abs(trace.average_cost - 2.5) <= 3 * trace.ci_halfwidth + 0.15


@pytest.mark.slow
def test_ss_average_cost_fine_step(baseline_model, abs_holding, setup_cost):
    """Test the (0, 2) cost at a fine step and long horizon."""
    cfg = SimConfig(dt=1e-3, horizon=2000.0, replications=8, seed=3, batch_count=20)
    trace = simulate(
        baseline_model, abs_holding, setup_cost, make_ss_policy(0.0, 2.0), cfg, 2.0
    )
    assert abs(trace.average_cost - 2.5) <= 3 * trace.ci_halfwidth + 0.05


def test_simulation_is_reproducible(
    baseline_model, abs_holding, setup_cost, quick_config
):
    """Test that the same seed gives the same trace."""
    policy = make_ss_policy(0.0, 2.0)
    a = simulate(baseline_model, abs_holding, setup_cost, policy, quick_config, 1.0)
    b = simulate(baseline_model, abs_holding, setup_cost, policy, quick_config, 1.0)
    assert a.average_cost == b.average_cost
    np.testing.assert_array_equal(a.final_states, b.final_states)


def test_replications_use_independent_streams(baseline_model, abs_holding, setup_cost):
    """Test that a replication's path does not depend on how many run alongside."""
    policy = make_ss_policy(0.0, 2.0)
    small = SimConfig(dt=0.01, horizon=20.0, replications=2, seed=5, batch_count=10)
    large = SimConfig(dt=0.01, horizon=20.0, replications=4, seed=5, batch_count=10)
    a = simulate(baseline_model, abs_holding, setup_cost, policy, small, 1.0)
    b = simulate(baseline_model, abs_holding, setup_cost, policy, large, 1.0)
    np.testing.assert_allclose(a.replication_costs, b.replication_costs[:2], rtol=1e-12)


def test_never_order_cost_grows(baseline_model, abs_holding, setup_cost):
    """Test that never ordering gives a growing average cost."""
    averages = []
    for horizon in (5.0, 10.0, 20.0):
        cfg = SimConfig(
            dt=0.01, horizon=horizon, replications=4, seed=1, batch_count=10
        )
        trace = simulate(
            baseline_model, abs_holding, setup_cost, never_order_policy(), cfg, 0.0
        )
        averages.append(trace.average_cost)
    assert averages[0] < averages[1] < averages[2]


def test_recorded_path(baseline_model, abs_holding, setup_cost):
    """Test that every record_every steps one row is kept."""
    cfg = SimConfig(
        dt=0.01, horizon=1.0, replications=1, batch_count=10, record_every=10
    )
    trace = simulate(
        baseline_model, abs_holding, setup_cost, make_ss_policy(0.0, 2.0), cfg, 1.0
    )
    assert trace.path.shape == (11, 4)
    assert trace.path[0, 0] == 0.0
    assert trace.path[-1, 0] == pytest.approx(1.0)


def test_coupled_truncation_never_binds(
    baseline_model, abs_holding, setup_cost, quick_config
):
    """Test identical traces when S <= j."""
    base, truncated = simulate_coupled(
        baseline_model, abs_holding, setup_cost, make_ss_policy(0.0, 2.0), 4.0,
        quick_config, 1.0,
    )
    assert truncated.average_cost == pytest.approx(base.average_cost, rel=1e-12)
    np.testing.assert_allclose(truncated.final_states, base.final_states)


def test_coupled_truncation_caps_level(baseline_model, abs_holding, setup_cost):
    """Test that truncated orders are capped near j and cost less."""
    cfg = SimConfig(dt=0.05, horizon=300.0, replications=4, seed=9, batch_count=10)
    base, truncated = simulate_coupled(
        baseline_model, abs_holding, setup_cost, order_up_to_policy(0.0, 100.0), 10.0,
        cfg, 0.0,
    )
    assert truncated.order_events[0].quantity == pytest.approx(10.0)
    # only the overshoot below zero adds to j
    assert max(event.quantity for event in truncated.order_events) < 12.0
    assert base.order_events[0].quantity == pytest.approx(100.0)
    bound = truncation_gap_bound(baseline_model, setup_cost, 10.0)
    allowance = bound + 3 * truncated.ci_halfwidth
    assert truncated.average_cost <= base.average_cost + allowance


def test_truncation_gap_bound(baseline_model, setup_cost):
    """Test the bound 4 mu_hi sigma_hi^2 / sigma_lo^2 * sup K / j."""
    assert truncation_gap_bound(baseline_model, setup_cost, 10.0) == pytest.approx(0.4)
    assert cycle_time_lower_bound(baseline_model, 10.0) == pytest.approx(5.0)


def test_reflected_stationary_distribution(baseline_model):
    """Test that the reflected process has mean about 1 and an exponential law."""
    cfg = SimConfig(dt=0.005, horizon=200.0, replications=8, seed=13, batch_count=20)
    result = simulate_reflected(baseline_model, 0.0, cfg, 0.0, span=10.0, bins=100)
    assert result.bin_edges[0] == 0.0
    assert result.mass.sum() + result.overflow_mass == pytest.approx(1.0)
    assert abs(result.mean - 1.0) <= 3 * result.mean_ci_halfwidth + 0.1
    assert result.ks_distance < 0.12
    assert result.density.shape == (100,)
    assert result.summary()["bins"] == 100


@pytest.mark.slow
def test_reflected_ks_at_long_horizon(baseline_model):
    """Test a KS distance below 0.02 at horizon 10^4."""
    cfg = SimConfig(dt=1e-3, horizon=1e4, replications=1, seed=17, batch_count=20)
    result = simulate_reflected(baseline_model, 0.0, cfg, 0.0)
    assert result.ks_distance < 0.02


def test_reflected_rejects_start_below_barrier(baseline_model, quick_config):
    """Test that x0 below the barrier is rejected."""
    with pytest.raises(DomainError):
        simulate_reflected(baseline_model, 0.0, quick_config, -1.0)


def test_regenerative_cycle_stats(baseline_model, abs_holding):
    """Test cycle cost about 4 and cycle time about 2 for (0, 2)."""
    cfg = SimConfig(dt=0.01, horizon=100.0, replications=8, seed=21, batch_count=10)
    result = regenerative_cycle_stats(baseline_model, abs_holding, 0.0, 2.0, cfg)
    assert result.cycles >= 100
    assert abs(result.mean_time - 2.0) <= 3 * result.time_ci + 0.2
    assert abs(result.mean_cost - 4.0) <= 3 * result.cost_ci + 0.3
    assert set(result.to_dict()) >= {"mean_cost", "mean_time", "cycles"}


def test_regenerative_cycle_stats_needs_cycles(baseline_model, abs_holding):
    """Test that too few completed cycles raise InsufficientData."""
    cfg = SimConfig(dt=0.01, horizon=1.0, replications=1, batch_count=10)
    with pytest.raises(InsufficientData):
        regenerative_cycle_stats(baseline_model, abs_holding, 0.0, 2.0, cfg)


def test_batch_interval():
    """Test the Student-t interval of three batch means."""
    mean, se, half = batch_interval(np.array([1.0, 2.0, 3.0]))
    assert mean == 2.0
    assert se == pytest.approx(1.0 / math.sqrt(3.0))
    assert half == pytest.approx(4.302653 * se, rel=1e-6)


def test_batch_interval_single_value():
    """Test that one value has no interval."""
    _, se, half = batch_interval(np.array([1.0]))
    assert math.isnan(se) and math.isnan(half)


@pytest.fixture
def loose_bounds_model():
    """Baseline coefficients with declared bounds wider than the family range."""
    return build_model(
        "constant",
        {"mu": 1.0},
        "constant",
        {"sigma": math.sqrt(2.0)},
        mu_lo=0.9,
        mu_hi=1.1,
        sigma_lo=1.3,
        sigma_hi=1.5,
    )


def test_threshold_block_restarts_at_order_level():
    """Test that a crossing of s orders up to S and the path restarts there."""
    increments = np.array([[-0.5, -0.6, 0.2, -2.5, 0.1]])
    left, ordered = _threshold_block(np.array([1.0]), increments, 0.0, 2.0)
    np.testing.assert_allclose(left[0], [0.5, -0.1, 2.2, -0.3, 2.1])
    np.testing.assert_array_equal(ordered[0], [False, True, False, True, False])


def test_chunked_run_matches_step_loop(
    baseline_model, loose_bounds_model, abs_holding, setup_cost
):
    """Test that chunked and step-by-step runs of one (s, S) rule agree."""
    cfg = SimConfig(
        dt=0.01, horizon=30.0, replications=3, seed=4, batch_count=10,
        chunk_steps=256, record_every=25,
    )
    policy = make_ss_policy(0.0, 2.0)
    chunked = simulate(baseline_model, abs_holding, setup_cost, policy, cfg, 1.0)
    stepped = simulate(loose_bounds_model, abs_holding, setup_cost, policy, cfg, 1.0)
    assert len(chunked.order_events) == len(stepped.order_events)
    assert [e.replication for e in chunked.order_events] == [
        e.replication for e in stepped.order_events
    ]
    assert chunked.average_cost == pytest.approx(stepped.average_cost, rel=1e-9)
    np.testing.assert_allclose(chunked.batch_means, stepped.batch_means, rtol=1e-9)
    np.testing.assert_allclose(chunked.final_states, stepped.final_states, atol=1e-9)
    np.testing.assert_allclose(chunked.path, stepped.path, rtol=1e-9, atol=1e-9)


def test_chunked_reflected_run_matches_step_loop(baseline_model, loose_bounds_model):
    """Test that chunked and step-by-step reflected runs agree."""
    cfg = SimConfig(
        dt=0.01, horizon=30.0, replications=2, seed=8, batch_count=10,
        chunk_steps=300, record_every=50,
    )
    chunked = simulate_reflected(baseline_model, 0.0, cfg, 0.5, span=10.0, bins=50)
    stepped = simulate_reflected(loose_bounds_model, 0.0, cfg, 0.5, span=10.0, bins=50)
    assert chunked.mean == pytest.approx(stepped.mean, rel=1e-9)
    np.testing.assert_allclose(chunked.path, stepped.path, rtol=1e-9, atol=1e-9)


def test_non_finite_state_reports_step(abs_holding, setup_cost):
    """Test that a blown-up state names the step where it happened."""
    model = build_model("constant", {"mu": 3e11}, "constant", {"sigma": 1.0})
    cfg = SimConfig(dt=1.0, horizon=40.0, replications=1, batch_count=10)
    with mock.patch("ergodic_inventory.simulator.logger"):
        with pytest.raises(SimulationFailure) as exc_info:
            simulate(model, abs_holding, setup_cost, never_order_policy(), cfg, 0.0)
    assert exc_info.value.step == 4


def test_coalesce_merges_small_overshoot():
    """Test that an overshoot within tolerance is merged into the base state."""
    base = np.array([1.0, 2.0, -3.0])
    truncated = np.array([0.5, 2.0 + 1e-6, -3.0 + 1e-4])
    merged, count = _coalesce(base, truncated, np.full(3, 1e-3), step=4)
    np.testing.assert_array_equal(merged, [0.5, 2.0, -3.0])
    assert count == 2


def test_coalesce_rejects_large_overshoot():
    """Test that an overshoot beyond tolerance raises CouplingFailure."""
    with pytest.raises(CouplingFailure) as exc_info:
        _coalesce(np.array([1.0]), np.array([1.5]), np.array([0.1]), step=7)
    assert exc_info.value.step == 7


def test_coupled_run_reports_broken_ordering(abs_holding, setup_cost):
    """Test that a truncated path overtaking its base path stops the run."""
    # steep drift around zero pulls the higher path down much faster
    model = build_model(
        "tanh", {"mu": 1.0, "amplitude": 0.9, "scale": 0.001},
        "constant", {"sigma": 1e-3},
    )
    nudge = ImpulsePolicy(
        decide=lambda t, z, ctx: np.full_like(z, 0.001) if t == 0 else np.zeros_like(z),
        label="nudge",
    )
    cfg = SimConfig(dt=0.5, horizon=10.0, replications=1, batch_count=10)
    with mock.patch(
        "ergodic_inventory.simulator.truncate_policy",
        return_value=never_order_policy(),
    ), mock.patch("ergodic_inventory.simulator.logger"):
        with pytest.raises(CouplingFailure) as exc_info:
            simulate_coupled(model, abs_holding, setup_cost, nudge, 1.0, cfg, -0.0005)
    assert exc_info.value.step == 1


def test_regenerative_cycle_stats_logs_dropped_steps(baseline_model, abs_holding):
    """Test that the unfinished cycle at the horizon is reported."""
    cfg = SimConfig(dt=0.01, horizon=100.0, replications=2, seed=21, batch_count=10)
    with mock.patch("ergodic_inventory.simulator.logger") as mock_logger:
        regenerative_cycle_stats(baseline_model, abs_holding, 0.0, 2.0, cfg)
    messages = [call.args[0] for call in mock_logger.debug.call_args_list]
    assert any(m.startswith("Dropped ") and "unfinished" in m for m in messages)
