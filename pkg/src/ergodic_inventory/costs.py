"""Cost model module.

This module represents the ordering cost c and the holding/shortage cost h,
validates their structural assumptions and splits c into a proportional rate k
and a setup part K.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from ergodic_inventory.errors import DomainError, ResolutionError
from ergodic_inventory.validation import ValidationReport

logger = logging.getLogger(__name__)

ArrayFunc = Callable[[np.ndarray], np.ndarray]

ORDERING_FAMILIES = (
    "setup-plus-linear",
    "all-unit-discount",
    "incremental-discount",
    "quantity-dependent-setup",
    "table",
    "power",
    "custom",
)
HOLDING_FAMILIES = ("piecewise-linear", "power", "zero", "custom")

DEFAULT_TOL = 1e-9
# Quantity at which callable-backed costs are evaluated for c(0+)
MACHINE_SMALL_XI = 1e-12


class PiecewiseLinear:
    """Piecewise-linear cost with jumps, evaluated at its lsc envelope.

    Segment ``i`` covers the open interval ``(b_i, b_{i+1})`` with ``b_0 = 0``
    and ``b_{m+1} = inf`` and has value ``a_i + m_i * xi`` there. At a breakpoint
    the value is the smaller of the two one-sided limits.
    """

    def __init__(
        self,
        breaks: Sequence[float],
        intercepts: Sequence[float],
        slopes: Sequence[float],
    ):
        """Initialize the piecewise-linear cost.

        Args:
            breaks: Strictly increasing positive breakpoints b_1..b_m
            intercepts: Intercepts a_0..a_m
            slopes: Slopes m_0..m_m

        Raises:
            DomainError: If the arrays are inconsistent
        """
        self.breaks = np.asarray(breaks, dtype=float)
        self.intercepts = np.asarray(intercepts, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        m = self.breaks.size
        if self.intercepts.size != m + 1 or self.slopes.size != m + 1:
            raise DomainError(
                f"Expected {m + 1} intercepts and slopes for {m} breakpoints, "
                f"got {self.intercepts.size} and {self.slopes.size}"
            )
        if m and (self.breaks[0] <= 0 or np.any(np.diff(self.breaks) <= 0)):
            raise DomainError("Breakpoints must be positive and strictly increasing")

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        """Evaluate at positive quantities (lsc value at breakpoints)."""
        xi = np.asarray(xi, dtype=float)
        idx = np.searchsorted(self.breaks, xi, side="left")
        value = self.intercepts[idx] + self.slopes[idx] * xi
        if self.breaks.size:
            capped = np.minimum(idx, self.breaks.size - 1)
            on_break = (idx < self.breaks.size) & (xi == self.breaks[capped])
            right = self.intercepts[np.minimum(idx + 1, self.breaks.size)] + (
                self.slopes[np.minimum(idx + 1, self.breaks.size)] * xi
            )
            value = np.where(on_break, np.minimum(value, right), value)
        return value

    def limit_at_zero(self) -> float:
        """Return c(0+)."""
        return float(self.intercepts[0])

    def final_slope(self) -> float:
        """Return the slope of the unbounded segment."""
        return float(self.slopes[-1])


@dataclass(frozen=True)
class OrderingCost:
    """Ordering cost c with its family metadata.

    ``func`` is only ever called on strictly positive quantities; ``c(0) = 0``
    is enforced by :func:`eval_cost`.
    """

    family: str
    func: ArrayFunc = field(compare=False)
    params: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)
    breakpoints: Tuple[float, ...] = ()
    closed_form_k: Optional[float] = None
    zero_limit: Optional[float] = None

    @property
    def c0_plus(self) -> float:
        """Return c(0+) from family metadata, evaluating the callable otherwise."""
        if self.zero_limit is not None:
            return self.zero_limit
        return float(self.func(np.asarray([MACHINE_SMALL_XI]))[0])


def setup_plus_linear(setup: float, rate: float) -> OrderingCost:
    """Build c(xi) = setup + rate * xi for xi > 0."""
    pieces = PiecewiseLinear([], [setup], [rate])
    return OrderingCost(
        family="setup-plus-linear",
        func=pieces,
        params={"setup": setup, "rate": rate},
        closed_form_k=float(rate),
        zero_limit=pieces.limit_at_zero(),
    )


def all_unit_discount(
    setup: float, breaks: Sequence[float], rates: Sequence[float]
) -> OrderingCost:
    """Build an all-unit discount: rate ``rates[i]`` applies to the whole order.

    Args:
        setup: Fixed cost of any positive order
        breaks: Quantity breakpoints; ``rates[i]`` applies at/above ``breaks[i-1]``
        rates: One rate per band, ``len(breaks) + 1`` values

    Returns:
        The ordering cost
    """
    pieces = PiecewiseLinear(breaks, [setup] * (len(breaks) + 1), rates)
    return OrderingCost(
        family="all-unit-discount",
        func=pieces,
        params={"setup": setup, "breaks": list(breaks), "rates": list(rates)},
        breakpoints=tuple(float(b) for b in breaks),
        closed_form_k=pieces.final_slope(),
        zero_limit=pieces.limit_at_zero(),
    )


def incremental_discount(
    setup: float, breaks: Sequence[float], rates: Sequence[float]
) -> OrderingCost:
    """Build an incremental discount: ``rates[i]`` applies to units in band i."""
    intercepts = [float(setup)]
    for i, b in enumerate(breaks):
        intercepts.append(intercepts[-1] + (rates[i] - rates[i + 1]) * b)
    pieces = PiecewiseLinear(breaks, intercepts, rates)
    return OrderingCost(
        family="incremental-discount",
        func=pieces,
        params={"setup": setup, "breaks": list(breaks), "rates": list(rates)},
        breakpoints=tuple(float(b) for b in breaks),
        closed_form_k=pieces.final_slope(),
        zero_limit=pieces.limit_at_zero(),
    )


def quantity_dependent_setup(
    rate: float, breaks: Sequence[float], setups: Sequence[float]
) -> OrderingCost:
    """Build c(xi) = setups[i] + rate * xi with the setup chosen by quantity band."""
    pieces = PiecewiseLinear(breaks, setups, [rate] * (len(breaks) + 1))
    return OrderingCost(
        family="quantity-dependent-setup",
        func=pieces,
        params={"rate": rate, "breaks": list(breaks), "setups": list(setups)},
        breakpoints=tuple(float(b) for b in breaks),
        closed_form_k=float(rate),
        zero_limit=pieces.limit_at_zero(),
    )


def table_cost(
    breaks: Sequence[float],
    intercepts: Sequence[float],
    slopes: Sequence[float],
) -> OrderingCost:
    """Build a tabulated piecewise-linear cost; k is found numerically."""
    pieces = PiecewiseLinear(breaks, intercepts, slopes)
    return OrderingCost(
        family="table",
        func=pieces,
        params={
            "breaks": list(breaks),
            "intercepts": list(intercepts),
            "slopes": list(slopes),
        },
        breakpoints=tuple(float(b) for b in breaks),
        zero_limit=pieces.limit_at_zero(),
    )


def power_cost(setup: float, coefficient: float, exponent: float) -> OrderingCost:
    """Build c(xi) = setup + coefficient * xi**exponent for 0 < exponent <= 1."""
    if not 0 < exponent <= 1:
        raise DomainError(f"Power cost exponent must be in (0, 1], got {exponent}")
    return OrderingCost(
        family="power",
        func=lambda xi: setup + coefficient * np.power(np.asarray(xi, float), exponent),
        params={"setup": setup, "coefficient": coefficient, "exponent": exponent},
        closed_form_k=float(coefficient) if exponent == 1 else 0.0,
        zero_limit=float(setup),
    )


def custom_cost(
    func: ArrayFunc,
    breakpoints: Sequence[float] = (),
    k: Optional[float] = None,
) -> OrderingCost:
    """Wrap a vectorised callable as an ordering cost."""
    return OrderingCost(
        family="custom",
        func=func,
        breakpoints=tuple(float(b) for b in breakpoints),
        closed_form_k=k,
    )


def eval_cost(c: OrderingCost, xi: Any) -> Any:
    """Evaluate c at nonnegative quantities.

    Args:
        c: Ordering cost
        xi: Scalar or array of quantities

    Returns:
        c(xi), a float for scalar input

    Raises:
        DomainError: If any quantity is negative
    """
    arr = np.asarray(xi, dtype=float)
    if np.any(arr < 0):
        raise DomainError(f"Order quantity must be nonnegative, got {np.min(arr)}")
    positive = arr > 0
    out = np.zeros_like(arr)
    if np.any(positive):
        out[positive] = np.asarray(c.func(arr[positive]), dtype=float)
    if out.ndim == 0:
        return float(out)
    return out


def validate_cost(
    c: OrderingCost, grid: Sequence[float], tol: float = DEFAULT_TOL
) -> ValidationReport:
    """Check subadditivity, lower semicontinuity and c(0+) > 0 on a grid.

    Args:
        c: Ordering cost
        grid: Positive sorted quantities
        tol: Absolute tolerance

    Returns:
        Validation report
    """
    report = ValidationReport(
        subject=f"ordering cost ({c.family})",
        checks=["subadditivity", "lower-semicontinuity", "positive-at-zero"],
    )
    xs = np.asarray(grid, dtype=float)
    if xs.size == 0 or np.any(xs <= 0):
        report.add("grid", None, "grid must be nonempty and positive")
        return report

    values = eval_cost(c, xs)
    sums = eval_cost(c, xs[:, None] + xs[None, :])
    excess = sums - (values[:, None] + values[None, :])
    bad = np.argwhere(excess > tol)
    for i, k in bad[:20]:
        report.add(
            "subadditivity",
            float(xs[i]),
            f"c({xs[i]:g}+{xs[k]:g})={sums[i, k]:.6g} exceeds "
            f"c({xs[i]:g})+c({xs[k]:g})={values[i] + values[k]:.6g}",
        )

    if isinstance(c.func, PiecewiseLinear):
        logger.debug(f"{c.family}: lsc envelope enforced at construction")
    else:
        for b in c.breakpoints:
            sides = eval_cost(
                c, np.array([np.nextafter(b, 0), np.nextafter(b, np.inf)])
            )
            at = eval_cost(c, b)
            if at > np.min(sides) + tol:
                report.add(
                    "lower-semicontinuity",
                    b,
                    f"c({b:g})={at:.6g} exceeds one-sided limit {np.min(sides):.6g}",
                )

    c_zero = c.c0_plus
    if not c_zero > tol:
        report.add("positive-at-zero", None, f"c(0+) = {c_zero:.3g} is not positive")

    if not report.passed:
        logger.warning(f"Ordering cost failed {len(report.violations)} check(s)")
    return report


@dataclass(frozen=True)
class CostDecomposition:
    """Split c(xi) = k * xi + K(xi) into proportional and setup parts."""

    k: float
    cost: OrderingCost = field(compare=False)
    k_estimate_xi: float = float("inf")

    def K(self, xi: Any) -> Any:
        """Return the setup part K(xi) = c(xi) - k * xi, with K(0) = 0."""
        return eval_cost(self.cost, xi) - self.k * np.asarray(xi, dtype=float)


def decompose(
    c: OrderingCost, xi_max: float = 1e6, points: int = 4001, tol: float = DEFAULT_TOL
) -> CostDecomposition:
    """Compute k = inf c(xi)/xi and the residual setup part K.

    Families with a closed-form limit use it; otherwise the infimum is taken
    over a geometric grid up to ``xi_max``.

    Args:
        c: Ordering cost
        xi_max: Largest quantity of the numeric grid
        points: Number of grid points
        tol: Tolerance for the tail monotonicity check

    Returns:
        The decomposition

    Raises:
        ResolutionError: If c(xi)/xi is not settling at the end of the grid
    """
    if c.closed_form_k is not None:
        return CostDecomposition(k=c.closed_form_k, cost=c)

    xs = np.geomspace(min(1e-6, xi_max / 10), xi_max, points)
    if c.breakpoints:
        xs = np.union1d(xs, [b for b in c.breakpoints if b <= xi_max])
    ratios = eval_cost(c, xs) / xs

    tail = ratios[-max(points // 10, 3) :]
    if np.any(np.diff(tail) > tol * max(1.0, float(np.max(np.abs(tail))))):
        raise ResolutionError(
            f"c(xi)/xi is not monotone near xi_max={xi_max:g}; "
            f"retry with a larger xi_max"
        )

    best = int(np.argmin(ratios))
    k = max(float(ratios[best]), 0.0)
    logger.debug(f"Numeric k={k:.10g} attained at xi={xs[best]:.6g}")
    return CostDecomposition(k=k, cost=c, k_estimate_xi=float(xs[best]))


def sup_K_over(
    c: OrderingCost,
    j: float,
    decomposition: Optional[CostDecomposition] = None,
    points: int = 4001,
) -> float:
    """Return sup of K over [0, j], exact at the family breakpoints.

    Args:
        c: Ordering cost
        j: Upper end of the range
        decomposition: Precomputed decomposition (optional)
        points: Density of the uniform grid

    Returns:
        The supremum
    """
    if j <= 0:
        raise DomainError(f"j must be positive, got {j}")
    dec = decomposition or decompose(c, xi_max=max(1e6, 10.0 * j))
    xs = np.linspace(0.0, j, points)
    extra = []
    for b in c.breakpoints:
        if b <= j:
            extra.extend([np.nextafter(b, 0), b, min(np.nextafter(b, np.inf), j)])
    if extra:
        xs = np.union1d(xs, extra)
    return float(np.max(dec.K(xs)))


@dataclass(frozen=True, eq=False)
class HoldingCost:
    """Holding/shortage cost rate h with derivative and growth metadata."""

    func: ArrayFunc = field(compare=False)
    deriv: ArrayFunc = field(compare=False)
    poly_degree: int = 1
    poly_coeff: float = 1.0
    family: str = "custom"
    kinks: Tuple[float, ...] = (0.0,)
    params: Dict[str, float] = field(default_factory=dict, compare=False, hash=False)

    def __call__(self, z: Any) -> np.ndarray:
        """Evaluate h at z."""
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(self.func(z), dtype=float), z.shape)

    def derivative(self, z: Any) -> np.ndarray:
        """Evaluate h' at z (one-sided values at kinks are implementation-defined)."""
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(self.deriv(z), dtype=float), z.shape)

    def growth_bound(self, z: Any) -> np.ndarray:
        """Return the declared polynomial envelope poly_coeff * (1 + |z|^n)."""
        z = np.asarray(z, dtype=float)
        return self.poly_coeff * (1.0 + np.abs(z) ** self.poly_degree)


def piecewise_linear_holding(holding: float, shortage: float) -> HoldingCost:
    """Build h(z) = holding * z+ + shortage * z-."""
    return HoldingCost(
        func=lambda z: holding * np.maximum(z, 0.0) + shortage * np.maximum(-z, 0.0),
        deriv=lambda z: np.where(z > 0, holding, np.where(z < 0, -shortage, 0.0)),
        poly_degree=1,
        poly_coeff=float(max(holding, shortage)),
        family="piecewise-linear",
        params={"holding": holding, "shortage": shortage},
    )


def power_holding(holding: float, shortage: float, degree: int) -> HoldingCost:
    """Build h(z) = holding * (z+)^n + shortage * (z-)^n."""
    if degree < 1:
        raise DomainError(f"Holding cost degree must be >= 1, got {degree}")
    n = int(degree)
    return HoldingCost(
        func=lambda z: holding * np.maximum(z, 0.0) ** n
        + shortage * np.maximum(-z, 0.0) ** n,
        deriv=lambda z: n * holding * np.maximum(z, 0.0) ** (n - 1) * (z > 0)
        - n * shortage * np.maximum(-z, 0.0) ** (n - 1) * (z < 0),
        poly_degree=n,
        poly_coeff=float(max(holding, shortage)),
        family="power",
        params={"holding": holding, "shortage": shortage, "degree": n},
    )


def zero_holding() -> HoldingCost:
    """Build h = 0; only meaningful for kernel quantities that ignore h."""
    return HoldingCost(
        func=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        deriv=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        poly_degree=0,
        poly_coeff=0.0,
        family="zero",
        kinks=(),
    )


def validate_holding(
    h: HoldingCost, grid: Sequence[float], tol: float = DEFAULT_TOL
) -> ValidationReport:
    """Check h(0)=0, sign of h', convexity and the polynomial envelope.

    Args:
        h: Holding cost
        grid: Sorted grid spanning negative and positive values
        tol: Absolute tolerance

    Returns:
        Validation report
    """
    report = ValidationReport(
        subject=f"holding cost ({h.family})",
        checks=["zero-at-origin", "nonnegative", "slope-sign", "convexity", "growth"],
    )
    zs = np.asarray(grid, dtype=float)
    if zs.size == 0 or zs.min() >= 0 or zs.max() <= 0:
        report.add("grid", None, "grid must span negative and positive values")
        return report

    h0 = float(h(0.0))
    if abs(h0) > tol:
        report.add("zero-at-origin", 0.0, f"h(0)={h0:.6g}")

    values = h(zs)
    for z in zs[values < -tol][:10]:
        report.add("nonnegative", float(z), f"h({z:g}) < 0")

    slopes = h.derivative(zs)
    wrong = ((zs > 0) & ~(slopes > 0)) | ((zs < 0) & ~(slopes < 0))
    for z, d in zip(zs[wrong][:10], slopes[wrong][:10]):
        report.add("slope-sign", float(z), f"h'({z:g})={d:.6g} has the wrong sign")

    left, right = np.meshgrid(zs, zs, indexing="ij")
    upper = np.triu_indices(zs.size, k=1)
    a, b = left[upper], right[upper]
    gap = h(0.5 * (a + b)) - 0.5 * (h(a) + h(b))
    for i in np.flatnonzero(gap > tol)[:10]:
        report.add(
            "convexity",
            float(0.5 * (a[i] + b[i])),
            f"midpoint value exceeds chord by {gap[i]:.3g}",
        )

    over = np.abs(values) > h.growth_bound(zs) + tol
    for z in zs[over][:10]:
        report.add("growth", float(z), "|h| exceeds the declared polynomial bound")

    if not report.passed:
        logger.warning(f"Holding cost failed {len(report.violations)} check(s)")
    return report
