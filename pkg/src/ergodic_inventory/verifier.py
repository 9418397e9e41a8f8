"""Optimality certificate for an (s, S) policy.

Builds the lower-bound function

    V(z) = int_{s_}^z (g(y v s_) - alpha* l(y v s_)) dy

for a level ``s_`` below which g' - alpha* l' < 0, and checks on dense grids
that

    A V + h - alpha* >= 0 everywhere (with equality above s_),
    V(z2) - V(z1) + c(z2 - z1) >= 0 for z1 < z2,
    V' is bounded on the negative half-line,

where ``A f = sigma^2/2 f'' - mu f'``. Above ``s_`` the second derivative of
V is taken from the g/l ODE identities and is never finite-differenced; below
``s_`` it is exactly zero.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ergodic_inventory.costs import HoldingCost, OrderingCost, eval_cost
from ergodic_inventory.errors import CertificateFailure, DomainError
from ergodic_inventory.kernel import DemandModel, KernelTable, kernel_table

logger = logging.getLogger(__name__)


@dataclass
class VerifierOptions:
    """Grid sizes and tolerances of the certificate checks."""

    cert_tol: float = 1e-7
    z_points: int = 4001
    pair_points: int = 201
    span_factor: float = 5.0
    scan_points: int = 400
    scan_depth_factor: float = 20.0
    underline_points: int = 121
    tail_factors: Tuple[float, ...] = (10.0, 20.0, 50.0)
    growth_points: int = 2001
    alpha_perturbation: float = 0.0

    def tolerance(self, alpha_star: float) -> float:
        """Return cert_tol scaled by max(1, |alpha*|)."""
        return self.cert_tol * max(1.0, abs(alpha_star))


@dataclass(frozen=True)
class UnderlineSearch:
    """Outcome of the search for the level s_ of the lower-bound function."""

    underline_s: float
    min_underline_gap: float
    checked_region: Tuple[float, float]
    candidates_tried: int

    def to_dict(self) -> Dict[str, Any]:
        """Return a JSON-ready dictionary."""
        return {
            "underline_s": self.underline_s,
            "min_underline_gap": self.min_underline_gap,
            "checked_region": list(self.checked_region),
            "candidates_tried": self.candidates_tried,
        }


def underline_alpha(
    table: KernelTable, c: OrderingCost, underline_s: float, s: Any, S: Any
) -> np.ndarray:
    """Return (int_s^S g(y v s_) dy + c(S - s)) / int_s^S l(y v s_) dy.

    Args:
        table: Kernel table of the (model, h) pair
        c: Ordering cost
        underline_s: Level s_
        s: Lower ends (array)
        S: Upper ends (array), S > s

    Returns:
        The cost rates, vectorised over (s, S)
    """
    s = np.asarray(s, dtype=float)
    S = np.asarray(S, dtype=float)
    lo = np.maximum(s, underline_s)
    hi = np.maximum(S, underline_s)
    flat = np.maximum(np.minimum(S, underline_s) - s, 0.0)
    g_ul = float(table.g(underline_s))
    ell_ul = float(table.ell(underline_s))
    cost = table.integral_g(lo, hi) + flat * g_ul
    time = table.integral_ell(lo, hi) + flat * ell_ul
    return (cost + eval_cost(c, S - s)) / time


def underline_s_search(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    alpha_star: float,
    s_star: float,
    S_star: Optional[float] = None,
    b1: Optional[float] = None,
    opts: Optional[VerifierOptions] = None,
) -> UnderlineSearch:
    """Search downward from s* for the level s_ of the lower-bound function.

    A candidate must have g' - alpha* l' < 0 on every scan point below it and
    keep the underline cost rate at or above alpha* on a verification grid
    over ``[s_ - span_factor * span, B1]^2`` plus tail spot checks.

    Args:
        model: Demand model
        h: Holding cost
        c: Ordering cost
        alpha_star: Optimal average cost
        s_star: Optimal reorder point
        S_star: Optimal order-up-to level (sets the span)
        b1: Upper end of the verification grid
        opts: Verifier options

    Returns:
        The search outcome

    Raises:
        CertificateFailure: If no candidate is found above the scan floor
    """
    opts = opts or VerifierOptions()
    table = kernel_table(model, h)
    span = max((S_star - s_star) if S_star is not None else 1.0, 1.0)
    upper = b1 if b1 is not None else (S_star if S_star is not None else s_star + span)
    upper = max(upper, s_star + span)
    tol = opts.tolerance(alpha_star)

    depth = opts.scan_depth_factor * span
    step = depth / opts.scan_points
    zs = s_star - step * np.arange(opts.scan_points + 1)
    slope = table.g_prime(zs) - alpha_star * table.ell_prime(zs)
    nonneg = np.flatnonzero(slope >= 0)
    start = 0 if nonneg.size == 0 else int(nonneg[-1]) + 1
    if start >= zs.size:
        raise CertificateFailure(
            f"g' - alpha* l' is not negative near the scan floor {zs[-1]:.6g}",
            offending=[float(z) for z in zs[nonneg][-10:]],
        )

    offending: List[float] = []
    for tried, idx in enumerate(range(start, zs.size), start=1):
        candidate = float(zs[idx])
        low = candidate - opts.span_factor * span
        axis = np.linspace(low, upper, opts.underline_points)
        ss, SS = np.meshgrid(axis, axis, indexing="ij")
        mask = ss < SS
        s_pairs, S_pairs = ss[mask], SS[mask]
        tails = []
        for factor in opts.tail_factors:
            tails.append((np.full_like(axis, candidate - factor * span), axis))
            tails.append((axis, np.full_like(axis, upper + factor * span)))
        s_pairs = np.concatenate([s_pairs, *(t[0] for t in tails)])
        S_pairs = np.concatenate([S_pairs, *(t[1] for t in tails)])
        gap = underline_alpha(table, c, candidate, s_pairs, S_pairs) - alpha_star
        worst = float(np.min(gap))
        if worst >= -tol:
            logger.info(
                f"Found s_={candidate:.9g} after {tried} candidate(s), "
                f"min underline gap {worst:.3e}"
            )
            return UnderlineSearch(
                underline_s=candidate,
                min_underline_gap=worst,
                checked_region=(low, upper),
                candidates_tried=tried,
            )
        i = int(np.argmin(gap))
        offending.append(float(s_pairs[i]))
        logger.debug(f"Candidate s_={candidate:.6g} rejected, gap {worst:.3e}")

    raise CertificateFailure(
        f"No level s_ found above the scan floor {zs[-1]:.6g}", offending=offending
    )


def find_underline_s(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    alpha_star: float,
    s_star: float,
    S_star: Optional[float] = None,
    b1: Optional[float] = None,
    opts: Optional[VerifierOptions] = None,
) -> float:
    """Return the level s_ <= s* of the lower-bound function."""
    return underline_s_search(
        model, h, c, alpha_star, s_star, S_star=S_star, b1=b1, opts=opts
    ).underline_s


class ValueFunction:
    """Lower-bound function V with its first two derivatives."""

    def __init__(
        self,
        model: DemandModel,
        h: HoldingCost,
        alpha_star: float,
        underline_s: float,
        table: Optional[KernelTable] = None,
    ):
        """Initialize V.

        Args:
            model: Demand model
            h: Holding cost
            alpha_star: Optimal average cost
            underline_s: Level s_ where V vanishes
            table: Kernel table; the shared memoised one by default
        """
        self.model = model
        self.h = h
        self.alpha_star = alpha_star
        self.underline_s = underline_s
        self.table = table or kernel_table(model, h)
        self.slope_below = float(
            self.table.g(underline_s) - alpha_star * self.table.ell(underline_s)
        )

    def value(self, z: Any) -> np.ndarray:
        """Return V(z)."""
        z = np.asarray(z, dtype=float)
        above = np.maximum(z, self.underline_s)
        integral = self.table.integral_g(self.underline_s, above) - (
            self.alpha_star * self.table.integral_ell(self.underline_s, above)
        )
        linear = self.slope_below * (z - self.underline_s)
        return np.where(z >= self.underline_s, integral, linear)

    def derivative(self, z: Any) -> np.ndarray:
        """Return V'(z), continuous at s_."""
        z = np.asarray(z, dtype=float)
        above = np.maximum(z, self.underline_s)
        inner = self.table.g(above) - self.alpha_star * self.table.ell(above)
        return np.where(z >= self.underline_s, inner, self.slope_below)

    def second_derivative(self, z: Any) -> np.ndarray:
        """Return V''(z) from the ODE identities above s_, zero below."""
        z = np.asarray(z, dtype=float)
        above = np.maximum(z, self.underline_s)
        inner = self.table.g_prime(above) - (
            self.alpha_star * self.table.ell_prime(above)
        )
        return np.where(z > self.underline_s, inner, 0.0)

    def generator_residual(self, z: Any, alpha: Optional[float] = None) -> np.ndarray:
        """Return A V(z) + h(z) - alpha."""
        z = np.asarray(z, dtype=float)
        alpha = self.alpha_star if alpha is None else alpha
        return (
            0.5 * self.model.variance(z) * self.second_derivative(z)
            - self.model.drift(z) * self.derivative(z)
            + self.h(z)
            - alpha
        )

    def growth_bounds(self, z_max: float, points: int = 2001) -> Dict[str, float]:
        """Fit polynomial envelopes |V| <= b1 (1 + |z|^n), |V'| <= b2 (1 + |z|^n).

        The degree n is the holding-cost degree plus one.
        """
        n = self.h.poly_degree + 1
        zs = np.linspace(-z_max, z_max, points)
        envelope = 1.0 + np.abs(zs) ** n
        return {
            "b1": float(np.max(np.abs(self.value(zs)) / envelope)),
            "b2": float(np.max(np.abs(self.derivative(zs)) / envelope)),
            "n": float(n),
            "z_max": float(z_max),
        }


def build_V(
    model: DemandModel, h: HoldingCost, alpha_star: float, underline_s: float
) -> ValueFunction:
    """Return the lower-bound function V built at level s_."""
    return ValueFunction(model, h, alpha_star, underline_s)


@dataclass(frozen=True)
class GridSpec:
    """Verification grids of the certificate."""

    z_lo: float
    z_hi: float
    z_points: int = 4001
    pair_points: int = 201

    @classmethod
    def around(
        cls,
        s_star: float,
        S_star: float,
        underline_s: float,
        opts: Optional[VerifierOptions] = None,
    ) -> "GridSpec":
        """Return grids covering [s_ - k span, S* + k span]."""
        opts = opts or VerifierOptions()
        span = S_star - s_star
        return cls(
            z_lo=underline_s - opts.span_factor * span,
            z_hi=S_star + opts.span_factor * span,
            z_points=opts.z_points,
            pair_points=opts.pair_points,
        )


@dataclass
class ValueCertificate:
    """Numerical outcome of the lower-bound checks."""

    underline_s: float
    alpha_star: float
    z_bar: Optional[float]
    hjb_min_residual: float
    hjb_max_abs_residual_above: float
    intervention_min_slack: float
    vprime_bound: float
    tolerance: float
    passed: bool
    growth: Dict[str, float] = field(default_factory=dict)
    underline: Optional[UnderlineSearch] = None
    alpha_checked: Optional[float] = None
    residual_z: Optional[np.ndarray] = field(default=None, repr=False)
    residual_values: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        """Return a JSON-ready dictionary (residual arrays excluded)."""
        return {
            "underline_s": self.underline_s,
            "alpha_star": self.alpha_star,
            "alpha_checked": self.alpha_checked,
            "z_bar": self.z_bar,
            "hjb_min_residual": self.hjb_min_residual,
            "hjb_max_abs_residual_above": self.hjb_max_abs_residual_above,
            "intervention_min_slack": self.intervention_min_slack,
            "vprime_bound": self.vprime_bound,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "growth": dict(self.growth),
            "underline": None if self.underline is None else self.underline.to_dict(),
        }


def check_certificate(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    alpha_star: float,
    V: ValueFunction,
    underline_s: float,
    grid_spec: GridSpec,
    opts: Optional[VerifierOptions] = None,
    z_bar: Optional[float] = None,
) -> ValueCertificate:
    """Evaluate the lower-bound conditions on the verification grids.

    Args:
        model: Demand model
        h: Holding cost
        c: Ordering cost
        alpha_star: Optimal average cost
        V: Lower-bound function
        underline_s: Level s_ of V
        grid_spec: Verification grids
        opts: Verifier options (tolerance and the alpha perturbation)
        z_bar: Growth witness from :func:`find_z_bar`

    Returns:
        The certificate; failures are reported through ``passed``
    """
    opts = opts or VerifierOptions()
    tol = opts.tolerance(alpha_star)
    alpha_checked = alpha_star * (1.0 + opts.alpha_perturbation)

    zs = np.linspace(grid_spec.z_lo, grid_spec.z_hi, grid_spec.z_points)
    zs = np.union1d(zs, [underline_s])
    residual = V.generator_residual(zs, alpha=alpha_checked)
    above = zs > underline_s
    hjb_min = float(np.min(residual))
    hjb_above = float(np.max(np.abs(residual[above]))) if np.any(above) else 0.0

    axis = np.linspace(grid_spec.z_lo, grid_spec.z_hi, grid_spec.pair_points)
    z1, z2 = np.meshgrid(axis, axis, indexing="ij")
    mask = z2 > z1
    first, second = z1[mask], z2[mask]
    for b in c.breakpoints:
        for offset in (np.nextafter(b, -np.inf), b, np.nextafter(b, np.inf)):
            if offset > 0:
                first = np.concatenate([first, axis])
                second = np.concatenate([second, axis + offset])
    slack = V.value(second) - V.value(first) + eval_cost(c, second - first)
    slack_min = float(np.min(slack))

    negative = np.linspace(min(underline_s, 0.0), 0.0, grid_spec.pair_points)
    vprime_bound = max(
        abs(V.slope_below), float(np.max(np.abs(V.derivative(negative))))
    )

    passed = (
        hjb_min >= -tol
        and hjb_above <= tol
        and slack_min >= -tol
        and bool(np.isfinite(vprime_bound))
    )
    certificate = ValueCertificate(
        underline_s=underline_s,
        alpha_star=alpha_star,
        alpha_checked=alpha_checked,
        z_bar=z_bar,
        hjb_min_residual=hjb_min,
        hjb_max_abs_residual_above=hjb_above,
        intervention_min_slack=slack_min,
        vprime_bound=vprime_bound,
        tolerance=tol,
        passed=passed,
        growth=V.growth_bounds(max(abs(grid_spec.z_lo), abs(grid_spec.z_hi))),
        residual_z=zs,
        residual_values=residual,
    )
    log = logger.info if passed else logger.warning
    log(
        f"Certificate {'passed' if passed else 'failed'}: hjb_min={hjb_min:.3e}, "
        f"hjb_above={hjb_above:.3e}, slack_min={slack_min:.3e}, tol={tol:.1e}"
    )
    return certificate


def find_z_bar(V: ValueFunction, scan_max: float, points: int = 2001) -> float:
    """Return the smallest grid z > 0 beyond which V > 0 and V' > 0.

    Args:
        V: Lower-bound function
        scan_max: Right end of the scan
        points: Number of scan points

    Returns:
        The growth witness z_bar

    Raises:
        DomainError: If scan_max is not positive
        CertificateFailure: If positivity fails at the end of the scan or at
            the spot check at 2 * scan_max
    """
    if scan_max <= 0:
        raise DomainError(f"scan_max must be positive, got {scan_max}")
    zs = np.linspace(scan_max / points, scan_max, points)
    positive = (V.value(zs) > 0) & (V.derivative(zs) > 0)
    spot = 2.0 * scan_max
    if not (float(V.value(spot)) > 0 and float(V.derivative(spot)) > 0):
        raise CertificateFailure(
            f"V or V' is not positive at the spot check z={spot:.6g}", offending=[spot]
        )
    bad = np.flatnonzero(~positive)
    if bad.size == 0:
        return float(zs[0])
    if bad[-1] == zs.size - 1:
        raise CertificateFailure(
            f"V and V' are not both positive up to scan_max={scan_max:.6g}",
            offending=[float(z) for z in zs[bad][-10:]],
        )
    z_bar = float(zs[bad[-1] + 1])
    logger.debug(f"Growth witness z_bar={z_bar:.6g}")
    return z_bar
