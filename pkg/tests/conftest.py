"""Pytest configuration file."""

import math

import pytest

from ergodic_inventory.costs import piecewise_linear_holding, setup_plus_linear
from ergodic_inventory.families import build_model


def pytest_addoption(parser):
    """Add the --runslow option."""
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="Run long Monte-Carlo acceptance tests",
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless --runslow is given."""
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="Needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def baseline_model():
    """Constant drift 1 and variance 2."""
    return build_model("constant", {"mu": 1.0}, "constant", {"sigma": math.sqrt(2.0)})


@pytest.fixture(scope="session")
def abs_holding():
    """h(z) = |z|."""
    return piecewise_linear_holding(1.0, 1.0)


@pytest.fixture(scope="session")
def setup_cost():
    """c(xi) = 1{xi > 0}."""
    return setup_plus_linear(1.0, 0.0)
