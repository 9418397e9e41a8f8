"""Tests for the verifier module."""

import math

import numpy as np
import pytest

from ergodic_inventory.costs import (
    all_unit_discount,
    eval_cost,
    piecewise_linear_holding,
    power_holding,
)
from ergodic_inventory.errors import DomainError
from ergodic_inventory.families import build_model
from ergodic_inventory.kernel import kernel_table
from ergodic_inventory.optimizer import optimize
from ergodic_inventory.verifier import (
    GridSpec,
    ValueFunction,
    VerifierOptions,
    build_V,
    check_certificate,
    find_underline_s,
    find_z_bar,
    underline_alpha,
    underline_s_search,
)


@pytest.fixture(scope="module")
def baseline_optimum(baseline_model, abs_holding, setup_cost):
    """Optimal baseline policy."""
    return optimize(baseline_model, abs_holding, setup_cost)


@pytest.fixture(scope="module")
def baseline_search(baseline_model, abs_holding, setup_cost, baseline_optimum):
    """Level s_ of the baseline lower-bound function."""
    return underline_s_search(
        baseline_model,
        abs_holding,
        setup_cost,
        baseline_optimum.alpha_star,
        baseline_optimum.s_star,
        S_star=baseline_optimum.S_star,
        b1=baseline_optimum.bracket[0],
    )


@pytest.fixture(scope="module")
def baseline_V(baseline_model, abs_holding, baseline_optimum, baseline_search):
    """Lower-bound function of the baseline."""
    return build_V(
        baseline_model,
        abs_holding,
        baseline_optimum.alpha_star,
        baseline_search.underline_s,
    )


def certify(model, h, c, optimum, V, underline_s, opts=None):
    opts = opts or VerifierOptions()
    grid = GridSpec.around(optimum.s_star, optimum.S_star, underline_s, opts)
    return check_certificate(
        model, h, c, optimum.alpha_star, V, underline_s, grid, opts=opts
    )


def test_underline_s_lies_below_s_star(baseline_search, baseline_optimum):
    """Test that s_ <= s* and the recorded region covers it."""
    assert baseline_search.underline_s <= baseline_optimum.s_star
    low, high = baseline_search.checked_region
    assert low < baseline_search.underline_s < high
    assert baseline_search.min_underline_gap >= -1e-7 * baseline_optimum.alpha_star
    assert baseline_search.candidates_tried >= 1


def test_find_underline_s_matches_search(
    baseline_model, abs_holding, setup_cost, baseline_optimum, baseline_search
):
    """Test the scalar wrapper."""
    value = find_underline_s(
        baseline_model,
        abs_holding,
        setup_cost,
        baseline_optimum.alpha_star,
        baseline_optimum.s_star,
        S_star=baseline_optimum.S_star,
        b1=baseline_optimum.bracket[0],
    )
    assert value == baseline_search.underline_s


def test_underline_alpha_bounded_below(
    baseline_model, abs_holding, setup_cost, baseline_optimum, baseline_search
):
    """Test that the underline cost rate never drops below alpha*."""
    table = kernel_table(baseline_model, abs_holding)
    axis = np.linspace(baseline_search.underline_s - 3.0, 5.0, 61)
    s, S = np.meshgrid(axis, axis, indexing="ij")
    mask = s < S
    values = underline_alpha(
        table, setup_cost, baseline_search.underline_s, s[mask], S[mask]
    )
    assert np.min(values) >= baseline_optimum.alpha_star * (1.0 - 1e-7)


def test_value_function_shape(baseline_V, baseline_search):
    """Test V(s_) = 0, continuous V' at s_ and linear V below s_."""
    s_ = baseline_search.underline_s
    assert float(baseline_V.value(s_)) == pytest.approx(0.0, abs=1e-12)
    left = float(baseline_V.derivative(s_ - 1e-9))
    right = float(baseline_V.derivative(s_ + 1e-9))
    assert left == pytest.approx(right, abs=1e-6)
    below = np.array([s_ - 3.0, s_ - 1.0])
    np.testing.assert_allclose(baseline_V.second_derivative(below), 0.0)
    np.testing.assert_allclose(
        baseline_V.value(below), baseline_V.slope_below * (below - s_)
    )


def test_generator_residual_vanishes_above_s_(baseline_V, baseline_search):
    """Test the HJB identity A V + h = alpha* above s_."""
    zs = np.linspace(baseline_search.underline_s + 0.01, 8.0, 200)
    residual = baseline_V.generator_residual(zs)
    assert np.max(np.abs(residual)) <= 1e-7


def test_certificate_passes_on_baseline(
    baseline_model,
    abs_holding,
    setup_cost,
    baseline_optimum,
    baseline_V,
    baseline_search,
):
    """Test that the baseline optimum is certified."""
    cert = certify(
        baseline_model, abs_holding, setup_cost, baseline_optimum, baseline_V,
        baseline_search.underline_s,
    )
    assert cert.passed
    assert cert.hjb_max_abs_residual_above <= 1e-7 * baseline_optimum.alpha_star
    assert cert.hjb_min_residual >= -1e-7 * baseline_optimum.alpha_star
    assert cert.intervention_min_slack >= -1e-7 * baseline_optimum.alpha_star
    assert np.isfinite(cert.vprime_bound)
    assert cert.to_dict()["pass"] is True


def test_certificate_fails_with_perturbed_alpha(
    baseline_model,
    abs_holding,
    setup_cost,
    baseline_optimum,
    baseline_V,
    baseline_search,
):
    """Test that a 10% larger alpha breaks the HJB identity above s_."""
    cert = certify(
        baseline_model, abs_holding, setup_cost, baseline_optimum, baseline_V,
        baseline_search.underline_s, VerifierOptions(alpha_perturbation=0.1),
    )
    assert not cert.passed
    assert cert.hjb_max_abs_residual_above > cert.tolerance
    assert cert.alpha_checked == pytest.approx(1.1 * baseline_optimum.alpha_star)


def test_certificate_fails_with_zero_tolerance(
    baseline_model,
    abs_holding,
    setup_cost,
    baseline_optimum,
    baseline_V,
    baseline_search,
):
    """Test that cert_tol = 0 fails on floating-point residuals."""
    cert = certify(
        baseline_model, abs_holding, setup_cost, baseline_optimum, baseline_V,
        baseline_search.underline_s, VerifierOptions(cert_tol=0.0),
    )
    assert cert.tolerance == 0.0
    assert not cert.passed


def test_find_z_bar(baseline_V):
    """Test that V and V' are positive beyond z_bar."""
    z_bar = find_z_bar(baseline_V, 20.0)
    assert 0 < z_bar <= 20.0
    zs = np.linspace(z_bar, 40.0, 100)
    assert np.all(baseline_V.value(zs) > 0)
    assert np.all(baseline_V.derivative(zs) > 0)


def test_find_z_bar_rejects_nonpositive_scan(baseline_V):
    """Test that the scan must extend to positive z."""
    with pytest.raises(DomainError):
        find_z_bar(baseline_V, 0.0)


def test_growth_bounds(baseline_V):
    """Test the polynomial envelope of V for a linear holding cost."""
    growth = baseline_V.growth_bounds(10.0)
    assert growth["n"] == 2.0
    zs = np.linspace(-10.0, 10.0, 41)
    envelope = growth["b1"] * (1 + np.abs(zs) ** 2)
    assert np.all(np.abs(baseline_V.value(zs)) <= envelope * (1 + 1e-9) + 1e-9)


def test_value_function_uses_shared_table(baseline_model, abs_holding, baseline_V):
    """Test that V reuses the memoised kernel table by default."""
    other = ValueFunction(baseline_model, abs_holding, 2.0, -1.0)
    assert other.table is baseline_V.table is kernel_table(baseline_model, abs_holding)


def lower_bound_for(model, h, c):
    """Optimize and build the lower-bound function of one study."""
    optimum = optimize(model, h, c)
    search = underline_s_search(
        model,
        h,
        c,
        optimum.alpha_star,
        optimum.s_star,
        S_star=optimum.S_star,
        b1=optimum.bracket[0],
    )
    return optimum, search, build_V(model, h, optimum.alpha_star, search.underline_s)


def test_intervention_binds_at_optimum(setup_cost, baseline_optimum, baseline_V):
    """Test V(S*) - V(s*) + c(S* - s*) = 0 at the optimal pair."""
    s, S = baseline_optimum.s_star, baseline_optimum.S_star
    slack = (
        float(baseline_V.value(S))
        - float(baseline_V.value(s))
        + eval_cost(setup_cost, S - s)
    )
    assert slack == pytest.approx(0.0, abs=1e-6)


def test_find_z_bar_with_doubled_holding(baseline_model, setup_cost):
    """Test that z_bar still exists when the holding cost is doubled."""
    _, _, V = lower_bound_for(
        baseline_model, piecewise_linear_holding(2.0, 2.0), setup_cost
    )
    z_bar = find_z_bar(V, 20.0)
    assert 0 < z_bar <= 20.0
    zs = np.linspace(z_bar, 40.0, 100)
    assert np.all(V.value(zs) > 0)
    assert np.all(V.derivative(zs) > 0)


@pytest.mark.parametrize(
    "study",
    ["tanh-quadratic", "all-unit-discount"],
)
def test_certificate_passes_off_baseline(
    study, baseline_model, abs_holding, setup_cost
):
    """Test certification with state-dependent drift or a quantity discount."""
    if study == "tanh-quadratic":
        model = build_model(
            "tanh", {"mu": 1.0, "amplitude": 0.5}, "constant", {"sigma": math.sqrt(2)}
        )
        h, c = power_holding(1.0, 1.0, 2), setup_cost
    else:
        model, h = baseline_model, abs_holding
        c = all_unit_discount(1.0, [3.0], [0.5, 0.25])
    optimum, search, V = lower_bound_for(model, h, c)
    cert = certify(model, h, c, optimum, V, search.underline_s)
    assert cert.passed, cert.to_dict()
    assert cert.hjb_min_residual >= -cert.tolerance
    assert cert.intervention_min_slack >= -cert.tolerance
