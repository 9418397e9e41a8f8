"""Diffusion kernel module.

Evaluates the scale and speed densities of the uncontrolled inventory diffusion
``dX = -mu(X) dt - sigma(X) dB``, the tail integrals against the speed measure,
and the functions

    g(z) = 2 S'(z) int_z^inf h(y) M(dy),    l(z) = 2 S'(z) int_z^inf M(dy),

with derivatives recovered from

    sigma^2/2 g' = mu g - h,    sigma^2/2 l' = mu l - 1.

Direct evaluation uses nested adaptive quadrature in a form referenced at z,
so that no exponential of a large exponent is ever formed. ``KernelTable``
tabulates g, l and their running integrals for the optimizer and verifier by
integrating the ODE pair backward from a quadrature anchor.
"""

import dataclasses
import functools
import logging
import math
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from ergodic_inventory.costs import HoldingCost, zero_holding
from ergodic_inventory.errors import DomainError, NumericFailure
from ergodic_inventory.numerics import DEFAULT_ABS_TOL, DEFAULT_REL_TOL, adaptive_quad
from ergodic_inventory.validation import ValidationReport

logger = logging.getLogger(__name__)

ArrayFunc = Callable[[Any], Any]

MAX_TAIL_EXPANSIONS = 40
ZERO_HOLDING = zero_holding()


@dataclass(frozen=True, eq=False)
class DemandModel:
    """Drift and volatility of the demand diffusion with declared bounds.

    ``mu`` and ``sigma`` must accept numpy arrays. The bounds are declared by
    the user and only spot-checked by :func:`validate_model`.
    """

    mu: ArrayFunc
    sigma: ArrayFunc
    mu_lo: float
    mu_hi: float
    sigma_lo: float
    sigma_hi: float
    ref_point: float = 0.0
    kinks: Tuple[float, ...] = ()
    label: str = "custom"

    def __post_init__(self) -> None:
        if not 0 < self.mu_lo <= self.mu_hi < math.inf:
            raise DomainError(
                f"Drift bounds must satisfy 0 < mu_lo <= mu_hi < inf, "
                f"got ({self.mu_lo}, {self.mu_hi})"
            )
        if not 0 < self.sigma_lo <= self.sigma_hi < math.inf:
            raise DomainError(
                f"Volatility bounds must satisfy 0 < sigma_lo <= sigma_hi < inf, "
                f"got ({self.sigma_lo}, {self.sigma_hi})"
            )

    def drift(self, z: Any) -> np.ndarray:
        """Evaluate mu at z (broadcast to the shape of z)."""
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(self.mu(z), dtype=float), z.shape)

    def volatility(self, z: Any) -> np.ndarray:
        """Evaluate sigma at z (broadcast to the shape of z)."""
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(self.sigma(z), dtype=float), z.shape)

    def variance(self, z: Any) -> np.ndarray:
        """Evaluate sigma^2 at z."""
        return self.volatility(z) ** 2

    def exponent_rate(self, z: Any) -> np.ndarray:
        """Evaluate 2 mu / sigma^2, the integrand of the scale exponent."""
        return 2.0 * self.drift(z) / self.variance(z)

    @property
    def decay_rate(self) -> float:
        """Worst-case decay rate 2 mu_lo / sigma_hi^2 of the speed measure."""
        return 2.0 * self.mu_lo / self.sigma_hi**2

    def with_ref_point(self, ref_point: float) -> "DemandModel":
        """Return a copy with a different reference point."""
        return dataclasses.replace(self, ref_point=ref_point)


@dataclass(frozen=True)
class KernelValues:
    """Kernel quantities at one point z."""

    z: float
    scale_density: float
    speed_density: float
    tail_speed: float
    tail_cost: float
    g: float
    ell: float
    g_prime: float
    ell_prime: float

    def to_dict(self) -> Dict[str, float]:
        """Return a JSON-ready dictionary."""
        return dataclasses.asdict(self)


def _scalar(values: np.ndarray) -> float:
    return float(np.asarray(values).reshape(-1)[0])


def _exponent(
    model: DemandModel,
    lower: float,
    upper: float,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
) -> float:
    """Return int_lower^upper 2 mu / sigma^2 dv."""
    value, _ = adaptive_quad(
        lambda v: _scalar(model.exponent_rate(v)),
        lower,
        upper,
        rel_tol=rel_tol,
        abs_tol=abs_tol,
    )
    return value


def scale_density(
    model: DemandModel,
    x: float,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
) -> float:
    """Return S'(x) = exp(int_a^x 2 mu / sigma^2 dv).

    Args:
        model: Demand model
        x: Evaluation point
        rel_tol: Relative quadrature tolerance
        abs_tol: Absolute quadrature tolerance

    Returns:
        The scale density, strictly positive

    Raises:
        NumericFailure: If the exponent quadrature does not converge
    """
    return math.exp(_exponent(model, model.ref_point, x, rel_tol, abs_tol))


def speed_density(
    model: DemandModel,
    x: float,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
) -> float:
    """Return the speed measure density 1 / (sigma^2(x) S'(x))."""
    exponent = _exponent(model, model.ref_point, x, rel_tol, abs_tol)
    return math.exp(-exponent) / _scalar(model.variance(x))


def _reduced_tail(
    model: DemandModel,
    weight: Callable[[float], float],
    envelope: Callable[[float], float],
    z: float,
    rel_tol: float,
    abs_tol: float,
) -> float:
    """Return int_z^inf weight(y) / sigma^2(y) exp(-int_z^y 2 mu / sigma^2) dy.

    The integral is truncated at ``y_max``, which grows geometrically until the
    analytic bound ``envelope(y) exp(-decay (y - z)) / sigma_lo^2`` on the
    remaining tail is below ``rel_tol`` of the accumulated value.
    """
    decay = model.decay_rate
    inv_var_hi = 1.0 / model.sigma_lo**2

    def integrand(y: float, base: float, carried: float) -> float:
        exponent = carried + _exponent(model, base, y, rel_tol, abs_tol)
        return weight(y) * math.exp(-exponent) / _scalar(model.variance(y))

    def tail_bound(y_max: float) -> float:
        bound, _ = adaptive_quad(
            lambda y: envelope(y) * math.exp(-decay * (y - z)) * inv_var_hi,
            y_max,
            math.inf,
            rel_tol=1e-8,
            abs_tol=abs_tol,
        )
        return bound

    distance = 10.0 / decay
    lower, carried, total = z, 0.0, 0.0
    for expansion in range(MAX_TAIL_EXPANSIONS):
        upper = z + distance
        piece, _ = adaptive_quad(
            lambda y, b=lower, e=carried: integrand(y, b, e),
            lower,
            upper,
            rel_tol=rel_tol,
            abs_tol=abs_tol,
        )
        total += piece
        carried += _exponent(model, lower, upper, rel_tol, abs_tol)
        remainder = tail_bound(upper)
        if remainder <= max(rel_tol * abs(total), abs_tol):
            logger.debug(
                f"Tail at z={z:.6g} truncated at y_max={upper:.6g} "
                f"after {expansion + 1} interval(s), bound {remainder:.3e}"
            )
            return total
        lower = upper
        distance *= 2.0

    raise NumericFailure(
        f"Tail truncation bound not met at z={z} within "
        f"{MAX_TAIL_EXPANSIONS} expansions",
        error_estimate=remainder,
    )


def _reduced_tails(
    model: DemandModel,
    h: HoldingCost,
    z: float,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
) -> Tuple[float, float]:
    speed = _reduced_tail(model, lambda y: 1.0, lambda y: 1.0, z, rel_tol, abs_tol)
    cost = _reduced_tail(
        model,
        lambda y: _scalar(h(y)),
        lambda y: _scalar(h.growth_bound(y)),
        z,
        rel_tol,
        abs_tol,
    )
    return speed, cost


def tail_integrals(
    model: DemandModel,
    h: HoldingCost,
    z: float,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
) -> Tuple[float, float]:
    """Return (int_z^inf M(dy), int_z^inf h(y) M(dy)).

    Args:
        model: Demand model
        h: Holding cost
        z: Lower end of the tail
        rel_tol: Relative quadrature tolerance
        abs_tol: Absolute quadrature tolerance

    Returns:
        Tuple of (tail_speed, tail_cost)

    Raises:
        NumericFailure: If quadrature or tail truncation fails
    """
    speed, cost = _reduced_tails(model, h, z, rel_tol, abs_tol)
    factor = math.exp(-_exponent(model, model.ref_point, z, rel_tol, abs_tol))
    return speed * factor, cost * factor


def eval_g_ell(
    model: DemandModel,
    h: HoldingCost,
    z: float,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
) -> KernelValues:
    """Evaluate g, l and their derivatives at z by quadrature.

    Args:
        model: Demand model
        h: Holding cost
        z: Evaluation point
        rel_tol: Relative quadrature tolerance
        abs_tol: Absolute quadrature tolerance

    Returns:
        Kernel values at z
    """
    speed, cost = _reduced_tails(model, h, z, rel_tol, abs_tol)
    exponent = _exponent(model, model.ref_point, z, rel_tol, abs_tol)
    mu = _scalar(model.drift(z))
    var = _scalar(model.variance(z))
    g = 2.0 * cost
    ell = 2.0 * speed
    return KernelValues(
        z=float(z),
        scale_density=math.exp(exponent),
        speed_density=math.exp(-exponent) / var,
        tail_speed=speed * math.exp(-exponent),
        tail_cost=cost * math.exp(-exponent),
        g=g,
        ell=ell,
        g_prime=2.0 / var * (mu * g - _scalar(h(z))),
        ell_prime=2.0 / var * (mu * ell - 1.0),
    )


def validate_model(
    model: DemandModel, grid: Sequence[float], tol: float = 1e-9
) -> ValidationReport:
    """Spot-check the declared bounds and the monotonicity of mu on a grid.

    Args:
        model: Demand model
        grid: Sorted evaluation points
        tol: Absolute tolerance

    Returns:
        Validation report
    """
    report = ValidationReport(
        subject=f"demand model ({model.label})",
        checks=["drift-bounds", "drift-monotone", "volatility-bounds"],
    )
    zs = np.asarray(grid, dtype=float)
    if zs.size == 0:
        report.add("grid", None, "grid is empty")
        return report

    mu = model.drift(zs)
    sigma = model.volatility(zs)

    for z, m in zip(zs, mu):
        if not model.mu_lo - tol <= m <= model.mu_hi + tol:
            report.add(
                "drift-bounds",
                float(z),
                f"mu={m:.6g} outside [{model.mu_lo:g}, {model.mu_hi:g}]",
            )
    for i in np.flatnonzero(np.diff(mu) < -tol):
        report.add(
            "drift-monotone",
            float(zs[i + 1]),
            f"mu decreases from {mu[i]:.6g} to {mu[i + 1]:.6g}",
        )
    for z, s in zip(zs, sigma):
        if not model.sigma_lo - tol <= s <= model.sigma_hi + tol:
            report.add(
                "volatility-bounds",
                float(z),
                f"sigma={s:.6g} outside [{model.sigma_lo:g}, {model.sigma_hi:g}]",
            )

    if report.passed:
        logger.debug(f"Model {model.label} passed validation on {zs.size} points")
    else:
        logger.warning(
            f"Model {model.label} failed validation with "
            f"{len(report.violations)} violation(s)"
        )
    return report


def stationary_density(model: DemandModel, z_b: float, z: float) -> float:
    """Return the stationary density of X reflected at the lower barrier z_b.

    The density is proportional to the speed density on ``[z_b, inf)`` and
    vanishes below the barrier.
    """
    if z < z_b:
        return 0.0
    norm = _reduced_tail(
        model, lambda y: 1.0, lambda y: 1.0, z_b, DEFAULT_REL_TOL, DEFAULT_ABS_TOL
    )
    return math.exp(-_exponent(model, z_b, z)) / (_scalar(model.variance(z)) * norm)


def stationary_cdf(
    model: DemandModel, z_b: float, z: Any, table: Optional["KernelTable"] = None
) -> np.ndarray:
    """Return the stationary CDF of X reflected at z_b, vectorised over z.

    Uses ``P(X > z) = l(z) exp(-int_{z_b}^z 2 mu / sigma^2) / l(z_b)``.
    """
    table = table or kernel_table(model, ZERO_HOLDING)
    zs = np.atleast_1d(np.asarray(z, dtype=float))
    above = np.maximum(zs, z_b)
    survival = (
        table.ell(above) * np.exp(-table.exponent(z_b, above)) / table.ell(z_b)
    )
    cdf = np.where(zs < z_b, 0.0, 1.0 - survival)
    return np.clip(cdf, 0.0, 1.0)


class KernelTable:
    """Tabulated g, l, their running integrals G, L and the scale exponent E.

    The state ``(g, l, G, L, E)`` solves

        g' = 2/sigma^2 (mu g - h),  l' = 2/sigma^2 (mu l - 1),
        G' = g,  L' = l,  E' = 2 mu / sigma^2,

    integrated downward from a quadrature anchor at the upper end of the
    domain (the stable direction), split at the kinks of mu, sigma and h.
    Values between nodes come from a cubic Hermite spline with derivative data
    taken from the ODE right-hand side. The domain grows on demand.
    """

    def __init__(
        self,
        model: DemandModel,
        h: HoldingCost,
        lower: float = -10.0,
        upper: float = 10.0,
        pitch: float = 0.01,
        max_nodes: int = 400_001,
        rel_tol: float = 1e-11,
        abs_tol: float = 1e-13,
        method: str = "LSODA",
    ):
        """Initialize and build the table.

        Args:
            model: Demand model
            h: Holding cost
            lower: Initial lower end of the domain
            upper: Initial upper end of the domain
            pitch: Node spacing
            max_nodes: Cap on the number of nodes (pitch grows beyond it)
            rel_tol: Relative tolerance of the ODE solver
            abs_tol: Absolute tolerance of the ODE solver
            method: ``solve_ivp`` method
        """
        if lower >= upper:
            raise DomainError(f"Table domain must be nonempty, got [{lower}, {upper}]")
        self.model = model
        self.h = h
        self.pitch = pitch
        self.max_nodes = max_nodes
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.method = method
        self._lock = threading.Lock()
        self._spline: Optional[CubicHermiteSpline] = None
        self.lower = lower
        self.upper = upper
        self.builds = 0
        self._build(lower, upper)

    def _rhs(self, z: float, state: np.ndarray) -> np.ndarray:
        g, ell = state[0], state[1]
        mu = _scalar(self.model.drift(z))
        var = _scalar(self.model.variance(z))
        hz = _scalar(self.h(z))
        return np.array(
            [
                2.0 / var * (mu * g - hz),
                2.0 / var * (mu * ell - 1.0),
                g,
                ell,
                2.0 * mu / var,
            ]
        )

    def _derivatives(self, zs: np.ndarray, states: np.ndarray) -> np.ndarray:
        mu = self.model.drift(zs)
        var = self.model.variance(zs)
        g, ell = states[:, 0], states[:, 1]
        return np.column_stack(
            [
                2.0 / var * (mu * g - self.h(zs)),
                2.0 / var * (mu * ell - 1.0),
                g,
                ell,
                2.0 * mu / var,
            ]
        )

    def _build(self, lower: float, upper: float) -> None:
        pitch = max(self.pitch, (upper - lower) / (self.max_nodes - 1))
        anchor = eval_g_ell(self.model, self.h, upper)
        state = np.array([anchor.g, anchor.ell, 0.0, 0.0, 0.0])

        kinks = (0.0, *self.model.kinks, *self.h.kinks)
        cuts = sorted({float(k) for k in kinks if lower < k < upper}, reverse=True)
        edges = [upper, *cuts, lower]

        nodes = [np.array([upper])]
        states = [state[None, :]]
        for hi, lo in zip(edges[:-1], edges[1:]):
            count = max(2, int(math.ceil((hi - lo) / pitch)) + 1)
            t_eval = np.linspace(hi, lo, count)
            sol = integrate.solve_ivp(
                self._rhs,
                (hi, lo),
                state,
                method=self.method,
                t_eval=t_eval,
                rtol=self.rel_tol,
                atol=self.abs_tol,
            )
            if not sol.success:
                raise NumericFailure(
                    f"Kernel ODE failed on [{lo}, {hi}]: {sol.message}"
                )
            nodes.append(sol.t[1:])
            states.append(sol.y[:, 1:].T)
            state = sol.y[:, -1]

        zs = np.concatenate(nodes)[::-1]
        ys = np.concatenate(states)[::-1]
        # G, L and E are anchored at the upper end; only differences are used
        spline = CubicHermiteSpline(zs, ys, self._derivatives(zs, ys), axis=0)

        self._spline = spline
        self.lower, self.upper = float(zs[0]), float(zs[-1])
        self.builds += 1
        logger.debug(
            f"Kernel table built on [{self.lower:.6g}, {self.upper:.6g}] "
            f"with {zs.size} nodes (pitch {pitch:.3g})"
        )

    def ensure(self, lower: float, upper: float) -> None:
        """Grow the domain so that it covers ``[lower, upper]``."""
        if lower >= self.lower and upper <= self.upper:
            return
        with self._lock:
            if lower >= self.lower and upper <= self.upper:
                return
            new_lower, new_upper = self.lower, self.upper
            while new_lower > lower or new_upper < upper:
                width = new_upper - new_lower
                if new_lower > lower:
                    new_lower -= width
                if new_upper < upper:
                    new_upper += width
            logger.info(
                f"Extending kernel table to [{new_lower:.6g}, {new_upper:.6g}]"
            )
            self._build(new_lower, new_upper)

    def _state(self, z: Any) -> np.ndarray:
        zs = np.asarray(z, dtype=float)
        if zs.size:
            self.ensure(float(np.min(zs)), float(np.max(zs)))
        spline = self._spline
        assert spline is not None
        return spline(zs)

    def g(self, z: Any) -> np.ndarray:
        """Return g(z)."""
        return self._state(z)[..., 0]

    def ell(self, z: Any) -> np.ndarray:
        """Return l(z)."""
        return self._state(z)[..., 1]

    def g_prime(self, z: Any) -> np.ndarray:
        """Return g'(z) from the ODE identity."""
        z = np.asarray(z, dtype=float)
        return (
            2.0
            / self.model.variance(z)
            * (self.model.drift(z) * self.g(z) - self.h(z))
        )

    def ell_prime(self, z: Any) -> np.ndarray:
        """Return l'(z) from the ODE identity."""
        z = np.asarray(z, dtype=float)
        return 2.0 / self.model.variance(z) * (self.model.drift(z) * self.ell(z) - 1.0)

    def integral_g(self, a: Any, b: Any) -> np.ndarray:
        """Return int_a^b g."""
        return self._state(b)[..., 2] - self._state(a)[..., 2]

    def integral_ell(self, a: Any, b: Any) -> np.ndarray:
        """Return int_a^b l."""
        return self._state(b)[..., 3] - self._state(a)[..., 3]

    def exponent(self, a: Any, b: Any) -> np.ndarray:
        """Return int_a^b 2 mu / sigma^2."""
        return self._state(b)[..., 4] - self._state(a)[..., 4]


@functools.lru_cache(maxsize=16)
def kernel_table(model: DemandModel, h: HoldingCost) -> KernelTable:
    """Return the shared table for a (model, h) pair, building it once."""
    logger.info(f"Building kernel table for model {model.label}, holding {h.family}")
    return KernelTable(model, h)
