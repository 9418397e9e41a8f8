"""Optimizer for the (s, S) policy.

The search first brackets the region that can contain the minimiser of
alpha(s, S): a level B1 beyond which the holding-cost rate alone exceeds the
best average cost found inside, and a gap B2 below which the order cost makes
every policy worse. It then minimises over (s, delta = S - s) on a coarse grid
whose delta axis contains every breakpoint of c and its immediate neighbours,
followed by local refinement around the incumbent.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ergodic_inventory.costs import HoldingCost, OrderingCost
from ergodic_inventory.errors import BracketingFailure
from ergodic_inventory.kernel import DemandModel
from ergodic_inventory.policy import PolicyEvaluation, PolicyEvaluator

logger = logging.getLogger(__name__)


@dataclass
class OptimizerOptions:
    """Grid and bracketing settings of the optimizer."""

    pitch_tol: float = 1e-6
    coarse_points: int = 41
    refine_points: int = 21
    shell_points: int = 81
    b1_initial: float = 1.0
    b1_cap: float = 1e3
    b2_cap: float = 1e-6
    b2_confirm_levels: int = 3
    max_refinements: int = 200


@dataclass
class EvaluationTrace:
    """Every (s, S) pair evaluated by the optimizer, in evaluation order."""

    stages: List[str] = field(default_factory=list)
    s: List[np.ndarray] = field(default_factory=list)
    S: List[np.ndarray] = field(default_factory=list)
    values: List[np.ndarray] = field(default_factory=list)
    kinds: List[str] = field(default_factory=list)

    def record(
        self, stage: str, s: np.ndarray, S: np.ndarray, values: np.ndarray, kind: str
    ) -> None:
        """Append one batch of evaluations."""
        self.stages.append(stage)
        self.s.append(np.asarray(s, dtype=float).ravel())
        self.S.append(np.asarray(S, dtype=float).ravel())
        self.values.append(np.asarray(values, dtype=float).ravel())
        self.kinds.append(kind)

    def __len__(self) -> int:
        return int(sum(v.size for v in self.values))

    def rows(self) -> List[Tuple[str, str, float, float, float]]:
        """Return rows of (stage, objective, s, S, value)."""
        out = []
        for stage, kind, s, S, v in zip(
            self.stages, self.kinds, self.s, self.S, self.values
        ):
            out.extend((stage, kind, a, b, c) for a, b, c in zip(s, S, v))
        return out


@dataclass(frozen=True)
class Optimum:
    """Minimiser of alpha over the bracketed region."""

    s_star: float
    S_star: float
    alpha_star: float
    bracket: Tuple[float, float]
    grid_stats: Dict[str, int]
    evaluation: PolicyEvaluation

    def to_dict(self) -> Dict[str, Any]:
        """Return a JSON-ready dictionary."""
        return {
            "s_star": self.s_star,
            "S_star": self.S_star,
            "alpha_star": self.alpha_star,
            "bracket": {"B1": self.bracket[0], "B2": self.bracket[1]},
            "grid_stats": dict(self.grid_stats),
            "evaluation": self.evaluation.to_dict(),
        }


def _breakpoint_offsets(
    breakpoints: Tuple[float, ...], lower: float, upper: float
) -> np.ndarray:
    points = []
    for b in breakpoints:
        for x in (np.nextafter(b, -np.inf), b, np.nextafter(b, np.inf)):
            if lower <= x <= upper:
                points.append(x)
    return np.asarray(points, dtype=float)


def _interior_grid(
    b1: float, points: int, lower_delta: float, breakpoints: Tuple[float, ...] = ()
) -> Tuple[np.ndarray, np.ndarray]:
    """Return flattened (s, S) pairs of the grid with -B1 <= s < S <= B1."""
    s_axis = np.linspace(-b1, b1, points)
    d_axis = np.linspace(lower_delta, 2.0 * b1, points)
    extra = _breakpoint_offsets(breakpoints, lower_delta, 2.0 * b1)
    if extra.size:
        d_axis = np.union1d(d_axis, extra)
    s, d = np.meshgrid(s_axis, d_axis, indexing="ij")
    S = s + d
    keep = (d > 0) & (S <= b1)
    return s[keep], S[keep]


def _best_index(s: np.ndarray, S: np.ndarray, values: np.ndarray) -> int:
    """Return the index of the smallest value; ties by smaller delta, then |s|."""
    order = np.lexsort((np.abs(s), S - s, values))
    return int(order[0])


def bracket(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    opts: Optional[OptimizerOptions] = None,
    evaluator: Optional[PolicyEvaluator] = None,
    trace: Optional[EvaluationTrace] = None,
) -> Tuple[float, float]:
    """Find the search bracket (B1, B2).

    Args:
        model: Demand model
        h: Holding cost
        c: Ordering cost
        opts: Optimizer options
        evaluator: Evaluator to reuse
        trace: Trace receiving every evaluation

    Returns:
        Tuple (B1, B2)

    Raises:
        BracketingFailure: If a cap is reached first
    """
    opts = opts or OptimizerOptions()
    ev = evaluator or PolicyEvaluator(model, h, c)
    tried: Dict[str, List[Tuple[float, float]]] = {"B1": [], "B2": []}

    b1 = opts.b1_initial
    while True:
        if b1 > opts.b1_cap:
            raise BracketingFailure(
                f"B1 exceeded cap {opts.b1_cap:g} before bracketing succeeded",
                diagnostics=tried,
            )
        s, S = _interior_grid(b1, opts.coarse_points, 2.0 * b1 / opts.coarse_points)
        values = ev.alpha(s, S)
        if trace is not None:
            trace.record("bracket-interior", s, S, values, "alpha")
        i = _best_index(s, S, values)
        best, best_delta = float(values[i]), float(S[i] - s[i])

        axis = np.linspace(-2.0 * b1, 2.0 * b1, opts.shell_points)
        ss, SS = np.meshgrid(axis, axis, indexing="ij")
        shell = (ss < SS) & (np.maximum(np.abs(ss), np.abs(SS)) >= b1)
        shell_values = ev.gamma(ss[shell], SS[shell])
        if trace is not None:
            trace.record("bracket-shell", ss[shell], SS[shell], shell_values, "gamma")
        shell_min = float(np.min(shell_values))
        tried["B1"].append((b1, shell_min - best))
        logger.debug(
            f"B1={b1:g}: interior best alpha={best:.10g}, "
            f"shell min gamma={shell_min:.10g}"
        )
        if shell_min > best:
            break
        b1 *= 2.0

    s_axis = np.linspace(-b1, b1, opts.coarse_points)
    delta = best_delta / 2.0
    confirmed, b2 = 0, None
    while confirmed <= opts.b2_confirm_levels:
        if delta < opts.b2_cap:
            raise BracketingFailure(
                f"B2 fell below cap {opts.b2_cap:g} before bracketing succeeded",
                diagnostics=tried,
            )
        eta = ev.alpha(s_axis, s_axis + delta)
        if trace is not None:
            trace.record("bracket-gap", s_axis, s_axis + delta, eta, "alpha")
        margin = float(np.min(eta)) - best
        tried["B2"].append((delta, margin))
        if margin > 0:
            if b2 is None:
                b2 = delta
            confirmed += 1
        else:
            b2, confirmed = None, 0
        delta /= 2.0

    assert b2 is not None
    logger.info(f"Bracket found: B1={b1:g}, B2={b2:.6g}")
    return b1, b2


def optimize(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    opts: Optional[OptimizerOptions] = None,
    trace: Optional[EvaluationTrace] = None,
) -> Optimum:
    """Minimise alpha(s, S) over the bracket.

    Args:
        model: Demand model
        h: Holding cost
        c: Ordering cost
        opts: Optimizer options
        trace: Trace receiving every evaluation

    Returns:
        The optimum, with alpha re-evaluated at the returned pair
    """
    opts = opts or OptimizerOptions()
    ev = PolicyEvaluator(model, h, c)
    b1, b2 = bracket(model, h, c, opts, evaluator=ev, trace=trace)

    s, S = _interior_grid(b1, opts.coarse_points, b2, c.breakpoints)
    values = ev.alpha(s, S)
    if trace is not None:
        trace.record("coarse", s, S, values, "alpha")
    i = _best_index(s, S, values)
    inc_s, inc_d, inc_v = float(s[i]), float(S[i] - s[i]), float(values[i])

    pitch_s = 2.0 * b1 / (opts.coarse_points - 1)
    pitch_d = (2.0 * b1 - b2) / (opts.coarse_points - 1)
    depth = 0
    while max(pitch_s, pitch_d) >= opts.pitch_tol and depth < opts.max_refinements:
        depth += 1
        s_axis = np.linspace(
            inc_s - 2 * pitch_s, inc_s + 2 * pitch_s, opts.refine_points
        )
        d_axis = np.linspace(
            inc_d - 2 * pitch_d, inc_d + 2 * pitch_d, opts.refine_points
        )
        d_lo, d_hi = d_axis[0], d_axis[-1]
        extra = _breakpoint_offsets(c.breakpoints, d_lo, d_hi)
        if extra.size:
            d_axis = np.union1d(d_axis, extra)
        s_axis = s_axis[(s_axis >= -b1) & (s_axis <= b1)]
        d_axis = d_axis[(d_axis >= b2) & (d_axis <= 2.0 * b1)]
        ss, dd = np.meshgrid(s_axis, d_axis, indexing="ij")
        keep = ss + dd <= b1
        rs, rS = ss[keep], ss[keep] + dd[keep]
        rv = ev.alpha(rs, rS)
        if trace is not None:
            trace.record(f"refine-{depth}", rs, rS, rv, "alpha")

        cand_s = np.append(rs, inc_s)
        cand_S = np.append(rS, inc_s + inc_d)
        cand_v = np.append(rv, inc_v)
        i = _best_index(cand_s, cand_S, cand_v)
        inc_s, inc_v = float(cand_s[i]), float(cand_v[i])
        inc_d = float(cand_S[i] - cand_s[i])
        pitch_s = 4.0 * pitch_s / (opts.refine_points - 1)
        pitch_d = 4.0 * pitch_d / (opts.refine_points - 1)
        logger.debug(
            f"Refinement {depth}: alpha={inc_v:.12g} at s={inc_s:.9g}, "
            f"delta={inc_d:.9g}, pitch={max(pitch_s, pitch_d):.3g}"
        )

    evaluation = PolicyEvaluator(model, h, c, table=ev.table).evaluate(
        inc_s, inc_s + inc_d
    )
    optimum = Optimum(
        s_star=evaluation.s,
        S_star=evaluation.S,
        alpha_star=evaluation.alpha,
        bracket=(b1, b2),
        grid_stats={
            "evaluations": ev.evaluations,
            "refinement_depth": depth,
            "coarse_points": opts.coarse_points,
        },
        evaluation=evaluation,
    )
    logger.info(
        f"Optimum: s*={optimum.s_star:.9g}, S*={optimum.S_star:.9g}, "
        f"alpha*={optimum.alpha_star:.12g}"
    )
    return optimum
