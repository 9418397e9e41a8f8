"""Named families of drift, volatility, holding and ordering costs.

Configuration files refer to models and costs by family name plus a flat
parameter map; this module turns those into callables.
"""

import logging
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from ergodic_inventory import costs
from ergodic_inventory.costs import HoldingCost, OrderingCost
from ergodic_inventory.errors import ConfigError, DomainError
from ergodic_inventory.kernel import DemandModel

logger = logging.getLogger(__name__)

Coefficient = Tuple[Callable[[Any], Any], float, float]

DRIFT_FAMILIES = ("constant", "tanh")
VOLATILITY_FAMILIES = ("constant", "tanh")


def _require(params: Mapping[str, Any], name: str, family: str) -> Any:
    if name not in params:
        raise ConfigError(f"Family '{family}' needs parameter '{name}'")
    return params[name]


def _coefficient(kind: str, family: str, params: Mapping[str, Any]) -> Coefficient:
    """Return (callable, lower bound, upper bound) of a coefficient family."""
    base_name = "mu" if kind == "drift" else "sigma"
    base = float(_require(params, base_name, family))
    if family == "constant":
        return (lambda z: np.full_like(np.asarray(z, float), base)), base, base
    if family == "tanh":
        amplitude = float(_require(params, "amplitude", family))
        scale = float(params.get("scale", 1.0))
        if not 0 <= amplitude < base or scale <= 0:
            raise ConfigError(
                f"{kind} tanh family needs 0 <= amplitude < {base_name} and scale > 0"
            )
        return (
            lambda z: base + amplitude * np.tanh(np.asarray(z, float) / scale),
            base - amplitude,
            base + amplitude,
        )
    known = DRIFT_FAMILIES if kind == "drift" else VOLATILITY_FAMILIES
    raise ConfigError(f"Unknown {kind} family '{family}', expected one of {known}")


def build_model(
    drift: str,
    drift_params: Mapping[str, Any],
    volatility: str,
    volatility_params: Mapping[str, Any],
    mu_lo: Optional[float] = None,
    mu_hi: Optional[float] = None,
    sigma_lo: Optional[float] = None,
    sigma_hi: Optional[float] = None,
    ref_point: float = 0.0,
) -> DemandModel:
    """Build a demand model from family names and parameters.

    Declared bounds default to the exact range of the family.

    Raises:
        ConfigError: If a family is unknown or its parameters are invalid
    """
    mu, mu_min, mu_max = _coefficient("drift", drift, drift_params)
    sigma, sigma_min, sigma_max = _coefficient(
        "volatility", volatility, volatility_params
    )
    try:
        return DemandModel(
            mu=mu,
            sigma=sigma,
            mu_lo=mu_min if mu_lo is None else mu_lo,
            mu_hi=mu_max if mu_hi is None else mu_hi,
            sigma_lo=sigma_min if sigma_lo is None else sigma_lo,
            sigma_hi=sigma_max if sigma_hi is None else sigma_hi,
            ref_point=ref_point,
            label=f"{drift}/{volatility}",
        )
    except DomainError as e:
        raise ConfigError(str(e)) from e


def build_holding(family: str, params: Mapping[str, Any]) -> HoldingCost:
    """Build a holding cost from a family name and parameters.

    Raises:
        ConfigError: If the family is unknown or a parameter is missing
    """
    try:
        if family == "piecewise-linear":
            return costs.piecewise_linear_holding(
                float(_require(params, "holding", family)),
                float(_require(params, "shortage", family)),
            )
        if family == "power":
            return costs.power_holding(
                float(_require(params, "holding", family)),
                float(_require(params, "shortage", family)),
                int(_require(params, "degree", family)),
            )
    except DomainError as e:
        raise ConfigError(str(e)) from e
    raise ConfigError(
        f"Unknown holding family '{family}', expected piecewise-linear or power"
    )


def _floats(value: Any) -> Tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return (float(value),)


def build_ordering(family: str, params: Mapping[str, Any]) -> OrderingCost:
    """Build an ordering cost from a family name and parameters.

    Raises:
        ConfigError: If the family is unknown or its parameters are invalid
    """
    p: Dict[str, Any] = dict(params)
    try:
        if family == "setup-plus-linear":
            return costs.setup_plus_linear(
                float(_require(p, "setup", family)), float(p.get("rate", 0.0))
            )
        if family == "all-unit-discount":
            return costs.all_unit_discount(
                float(_require(p, "setup", family)),
                _floats(_require(p, "breaks", family)),
                _floats(_require(p, "rates", family)),
            )
        if family == "incremental-discount":
            return costs.incremental_discount(
                float(p.get("setup", 0.0)),
                _floats(_require(p, "breaks", family)),
                _floats(_require(p, "rates", family)),
            )
        if family == "quantity-dependent-setup":
            return costs.quantity_dependent_setup(
                float(p.get("rate", 0.0)),
                _floats(_require(p, "breaks", family)),
                _floats(_require(p, "setups", family)),
            )
        if family == "table":
            return costs.table_cost(
                _floats(_require(p, "breaks", family)),
                _floats(_require(p, "intercepts", family)),
                _floats(_require(p, "slopes", family)),
            )
        if family == "power":
            return costs.power_cost(
                float(p.get("setup", 0.0)),
                float(_require(p, "coefficient", family)),
                float(_require(p, "exponent", family)),
            )
    except DomainError as e:
        raise ConfigError(str(e)) from e
    raise ConfigError(
        f"Unknown ordering family '{family}', expected one of "
        f"{costs.ORDERING_FAMILIES[:-1]}"
    )
