"""Policy evaluation for (s, S) policies.

Expected cycle cost and cycle time from S down to s collapse to single
integrals of g and l over [s, S]; the long-run average cost is their
regenerative ratio with the order cost c(S - s) added to the numerator.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ergodic_inventory.costs import HoldingCost, OrderingCost, eval_cost
from ergodic_inventory.errors import DomainError
from ergodic_inventory.kernel import DemandModel, KernelTable, eval_g_ell, kernel_table
from ergodic_inventory.numerics import adaptive_quad

logger = logging.getLogger(__name__)

# Tolerance of the outer layer of the nested quadrature route
QUADRATURE_REL_TOL = 1e-9


@dataclass(frozen=True)
class PolicyEvaluation:
    """Cycle functionals and cost rates of one (s, S) policy."""

    s: float
    S: float
    cycle_cost: float
    cycle_time: float
    order_cost: float
    alpha: float
    gamma: float

    def to_dict(self) -> Dict[str, float]:
        """Return a JSON-ready dictionary."""
        return asdict(self)


def _check_pair(s: Any, S: Any) -> None:
    if np.any(np.asarray(s) >= np.asarray(S)):
        raise DomainError(f"An (s, S) policy needs s < S, got s={s}, S={S}")


class PolicyEvaluator:
    """Evaluates (s, S) policies against a shared kernel table.

    All methods are vectorised over arrays of s and S.
    """

    def __init__(
        self,
        model: DemandModel,
        h: HoldingCost,
        c: Optional[OrderingCost] = None,
        table: Optional[KernelTable] = None,
    ):
        """Initialize the evaluator.

        Args:
            model: Demand model
            h: Holding cost
            c: Ordering cost (needed for alpha only)
            table: Kernel table; the shared memoised one by default
        """
        self.model = model
        self.h = h
        self.c = c
        self.table = table or kernel_table(model, h)
        self.evaluations = 0

    def cycle_stats(self, s: Any, S: Any) -> Tuple[np.ndarray, np.ndarray]:
        """Return (expected cycle cost, expected cycle time) from S to s."""
        _check_pair(s, S)
        self.evaluations += int(np.size(s))
        return self.table.integral_g(s, S), self.table.integral_ell(s, S)

    def gamma(self, s: Any, S: Any) -> np.ndarray:
        """Return the holding-cost rate cycle_cost / cycle_time."""
        cost, time = self.cycle_stats(s, S)
        return cost / time

    def alpha(self, s: Any, S: Any) -> np.ndarray:
        """Return the long-run average cost of the (s, S) policy."""
        if self.c is None:
            raise DomainError("An ordering cost is needed to evaluate alpha")
        cost, time = self.cycle_stats(s, S)
        delta = np.asarray(S, dtype=float) - np.asarray(s, dtype=float)
        return (cost + eval_cost(self.c, delta)) / time

    def evaluate(self, s: float, S: float) -> PolicyEvaluation:
        """Evaluate one policy and assemble its record."""
        if self.c is None:
            raise DomainError("An ordering cost is needed to evaluate alpha")
        cost, time = (float(v) for v in self.cycle_stats(s, S))
        order_cost = float(eval_cost(self.c, S - s))
        return PolicyEvaluation(
            s=float(s),
            S=float(S),
            cycle_cost=cost,
            cycle_time=time,
            order_cost=order_cost,
            alpha=(cost + order_cost) / time,
            gamma=cost / time,
        )


def cycle_stats(
    model: DemandModel,
    h: HoldingCost,
    s: float,
    S: float,
    method: str = "table",
) -> Tuple[float, float]:
    """Return (expected cycle cost, expected cycle time) of an (s, S) cycle.

    Args:
        model: Demand model
        h: Holding cost
        s: Reorder point
        S: Order-up-to level
        method: ``table`` (memoised kernel table) or ``quadrature``
            (adaptive quadrature of g and l evaluated by quadrature)

    Returns:
        Tuple of (cycle_cost, cycle_time)

    Raises:
        DomainError: If s >= S or the method is unknown
        NumericFailure: If a quadrature fails
    """
    _check_pair(s, S)
    if method == "table":
        cost, time = PolicyEvaluator(model, h).cycle_stats(s, S)
        return float(cost), float(time)
    if method == "quadrature":
        cost, _ = adaptive_quad(
            lambda x: eval_g_ell(model, h, x).g, s, S, rel_tol=QUADRATURE_REL_TOL
        )
        time, _ = adaptive_quad(
            lambda x: eval_g_ell(model, h, x).ell, s, S, rel_tol=QUADRATURE_REL_TOL
        )
        return cost, time
    raise DomainError(f"Unknown cycle_stats method: {method}")


def alpha(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    s: float,
    S: float,
) -> PolicyEvaluation:
    """Return the evaluation record of the (s, S) policy."""
    return PolicyEvaluator(model, h, c).evaluate(s, S)


def gamma(model: DemandModel, h: HoldingCost, s: float, S: float) -> float:
    """Return cycle_cost / cycle_time, the cost rate without ordering."""
    return float(PolicyEvaluator(model, h).gamma(s, S))
