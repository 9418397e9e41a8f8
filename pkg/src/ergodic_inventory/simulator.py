"""Euler–Maruyama simulation of the controlled inventory process.

Replications advance together as numpy vectors; each replication draws its
Gaussian increments from its own counter-based stream keyed by
``(seed, replication)``, so results do not depend on how many replications run
alongside it. Between orders the state follows

    z <- z - mu(z) dt - sigma(z) sqrt(dt) N(0, 1),

and the policy is consulted on the post-step (left-limit) value each step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ergodic_inventory.costs import HoldingCost, OrderingCost, eval_cost, sup_K_over
from ergodic_inventory.errors import (
    CouplingFailure,
    DomainError,
    InsufficientData,
    SimulationFailure,
)
from ergodic_inventory.kernel import DemandModel, stationary_cdf

logger = logging.getLogger(__name__)

OVERFLOW_LEVEL = 1e12
CI_LEVEL = 0.95
# Euler-scale overshoot, in units of sigma_hi sqrt(dt), tolerated as coalescence
COUPLING_SLACK = 6.0
COEFFICIENT_SPAN = 10.0


@dataclass(frozen=True)
class SimConfig:
    """Discretisation and replication settings."""

    dt: float = 1e-3
    horizon: float = 1000.0
    replications: int = 8
    seed: int = 20240601
    batch_count: int = 20
    chunk_steps: int = 2048
    record_every: int = 0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.horizon > self.dt:
            raise DomainError(
                f"horizon must exceed dt, got horizon={self.horizon}, dt={self.dt}"
            )
        if self.replications < 1:
            raise DomainError(f"replications must be >= 1, got {self.replications}")
        if self.batch_count < 10:
            raise DomainError(f"batch_count must be >= 10, got {self.batch_count}")
        if self.n_steps < self.batch_count:
            raise DomainError("horizon / dt must be at least batch_count steps")

    @property
    def n_steps(self) -> int:
        """Number of Euler steps covering the horizon."""
        return int(round(self.horizon / self.dt))


def make_streams(seed: int, count: int) -> List[np.random.Generator]:
    """Return one independent Philox stream per replication."""
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, rep])))
        for rep in range(count)
    ]


def _noise_chunks(
    streams: Sequence[np.random.Generator], n_steps: int, chunk: int
) -> Iterator[np.ndarray]:
    done = 0
    while done < n_steps:
        size = min(chunk, n_steps - done)
        yield np.stack([rng.standard_normal(size) for rng in streams])
        done += size


def _euler(
    model: DemandModel, z: np.ndarray, noise: np.ndarray, dt: float
) -> np.ndarray:
    return z - model.drift(z) * dt - model.volatility(z) * math.sqrt(dt) * noise


def _check_state(z: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(z)) or np.any(np.abs(z) > OVERFLOW_LEVEL):
        raise SimulationFailure(
            f"State left the finite range at step {step}", step=step
        )


def _warn_on_step_size(model: DemandModel, cfg: SimConfig) -> None:
    threshold = 0.1 * model.sigma_lo**2 / model.mu_hi**2
    if cfg.dt >= threshold:
        logger.warning(
            f"dt={cfg.dt:g} is at or above the stability threshold {threshold:.3g}; "
            f"drift dominates the noise within a step"
        )


def _constant_coefficients(model: DemandModel) -> Optional[Tuple[float, float]]:
    """Return (mu, sigma) when both coefficients are constant, else None."""
    if model.mu_lo != model.mu_hi or model.sigma_lo != model.sigma_hi:
        return None
    grid = np.linspace(-COEFFICIENT_SPAN, COEFFICIENT_SPAN, 41)
    if np.all(model.drift(grid) == model.mu_lo) and np.all(
        model.volatility(grid) == model.sigma_lo
    ):
        return model.mu_lo, model.sigma_lo
    return None


def _check_block(z: np.ndarray, step0: int) -> None:
    bad = ~np.isfinite(z) | (np.abs(z) > OVERFLOW_LEVEL)
    if np.any(bad):
        step = step0 + 1 + int(np.min(np.nonzero(bad)[1]))
        raise SimulationFailure(
            f"State left the finite range at step {step}", step=step
        )


def _threshold_block(
    z0: np.ndarray, increments: np.ndarray, s: float, S: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Run one chunk of state-independent increments under an (s, S) rule.

    Between orders the left limits are z0 plus the running sum of increments.
    An order at step k restarts the running sum from S.

    Args:
        z0: States at the start of the chunk, one per replication
        increments: Euler increments, shape (replications, steps)
        s: Reorder level
        S: Order-up-to level

    Returns:
        Tuple of (left-limit states, order flags), both shaped like increments
    """
    R, m = increments.shape
    running = np.cumsum(increments, axis=1)
    cols = np.arange(m)
    level = np.array(z0, dtype=float)
    ref = np.zeros(R)
    start = np.zeros(R, dtype=int)
    left = np.empty_like(running)
    ordered = np.zeros((R, m), dtype=bool)
    active = np.arange(R)
    while active.size:
        seg = level[active, None] + (running[active] - ref[active, None])
        tail = cols[None, :] >= start[active, None]
        left[active] = np.where(tail, seg, left[active])
        hits = tail & (seg <= s)
        hit_any = hits.any(axis=1)
        again = active[hit_any]
        k = np.argmax(hits[hit_any], axis=1)
        ordered[again, k] = True
        level[again] = S
        ref[again] = running[again, k]
        start[again] = k + 1
        active = again[start[again] < m]
    return left, ordered


def _reflect_block(
    z0: np.ndarray, increments: np.ndarray, z_b: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Run one chunk of state-independent increments reflected upward at z_b.

    The projected recursion z <- max(z + dz, z_b) is the running sum plus the
    running maximum of its shortfall below the barrier.

    Returns:
        Tuple of (states, cumulative push since the chunk start)
    """
    free = z0[:, None] + np.cumsum(increments, axis=1)
    push = np.maximum(np.maximum.accumulate(z_b - free, axis=1), 0.0)
    return np.maximum(free + push, z_b), push


def _reflected_chunk(
    model: DemandModel,
    z: np.ndarray,
    noise: np.ndarray,
    dt: float,
    z_b: float,
    coefficients: Optional[Tuple[float, float]],
) -> Tuple[np.ndarray, np.ndarray]:
    if coefficients is not None:
        mu, sigma = coefficients
        return _reflect_block(z, -mu * dt - sigma * math.sqrt(dt) * noise, z_b)
    states = np.empty_like(noise)
    push = np.empty_like(noise)
    total = np.zeros_like(z)
    for k in range(noise.shape[1]):
        free = _euler(model, z, noise[:, k], dt)
        z = np.maximum(free, z_b)
        total = total + (z - free)
        states[:, k] = z
        push[:, k] = total
    return states, push


def _coalesce(
    z_left: np.ndarray, zj: np.ndarray, tol: np.ndarray, step: int
) -> Tuple[np.ndarray, int]:
    """Merge truncated states that overshoot the base state by at most ``tol``.

    Returns:
        Tuple of (truncated states, number of merged replications)

    Raises:
        CouplingFailure: If an overshoot exceeds ``tol``
    """
    over = zj - z_left
    if np.any(over > tol):
        raise CouplingFailure(
            f"Truncated state overshot the base state by {float(np.max(over)):.3g} "
            f"at step {step}",
            step=step,
        )
    merged = over > 0
    return np.where(merged, z_left, zj), int(np.count_nonzero(merged))


@dataclass(frozen=True)
class JumpContext:
    """What a policy may see besides its own left-limit state.

    Attributes:
        base_order: Order placed by the base policy at this instant
        base_state: Base state after that order
        crossed_zero: Whether the policy's own state crossed to <= 0 in this step
    """

    base_order: Optional[np.ndarray] = None
    base_state: Optional[np.ndarray] = None
    crossed_zero: Optional[np.ndarray] = None


Decide = Callable[[float, np.ndarray, JumpContext], Any]


@dataclass(frozen=True)
class ImpulsePolicy:
    """State-feedback impulse policy evaluated on left limits.

    Attributes:
        decide: Callback returning order quantities for left-limit states
        label: Display name
        levels: (s, S) when the policy is the plain rule "order up to S once
            z <= s"; such policies run on whole noise chunks at once
    """

    decide: Decide
    label: str
    levels: Optional[Tuple[float, float]] = None

    def orders(
        self, t: float, z: np.ndarray, context: Optional[JumpContext] = None
    ) -> np.ndarray:
        """Return the order quantities at time t for left-limit states z."""
        z = np.asarray(z, dtype=float)
        q = np.broadcast_to(
            np.asarray(self.decide(t, z, context or JumpContext()), dtype=float),
            z.shape,
        )
        if np.any(q < 0):
            raise DomainError(f"Policy {self.label} returned a negative order")
        return q


def make_ss_policy(s: float, S: float) -> ImpulsePolicy:
    """Return the (s, S) policy: order up to S whenever z <= s.

    Raises:
        DomainError: If s >= S
    """
    if s >= S:
        raise DomainError(f"An (s, S) policy needs s < S, got s={s}, S={S}")
    return ImpulsePolicy(
        decide=lambda t, z, ctx: np.where(z <= s, S - z, 0.0),
        label=f"(s,S)=({s:g},{S:g})",
        levels=(s, S),
    )


def order_up_to_policy(s: float, level: float) -> ImpulsePolicy:
    """Return the policy ordering up to ``level`` whenever z <= s."""
    policy = make_ss_policy(s, level)
    return ImpulsePolicy(
        decide=policy.decide,
        label=f"order-up-to {level:g} at {s:g}",
        levels=(s, level),
    )


def never_order_policy() -> ImpulsePolicy:
    """Return the policy that never orders."""
    return ImpulsePolicy(
        decide=lambda t, z, ctx: np.zeros_like(z),
        label="never",
        levels=(-math.inf, math.inf),
    )


def truncate_policy(base: ImpulsePolicy, j: float) -> ImpulsePolicy:
    """Return the level-j truncation of ``base``.

    The truncated process only ever orders when the base process orders or
    when it reaches zero:

    * a base order is dropped while the truncated state is above j/2,
    * it is passed through while the result stays at or below j,
    * otherwise it is clipped so that the truncated state lands on j,
    * on reaching zero the truncated state is lifted to max(min(Z, j), 0),
      where Z is the base state. This rule takes precedence.

    Raises:
        DomainError: If j is not positive
    """
    if j <= 0:
        raise DomainError(f"Truncation level must be positive, got {j}")

    def decide(t: float, zj: np.ndarray, ctx: JumpContext) -> np.ndarray:
        zeros = np.zeros_like(zj)
        dq = zeros if ctx.base_order is None else np.asarray(ctx.base_order, float)
        active = dq > 0
        low = zj <= j / 2
        out = np.where(active & low & (zj + dq <= j), dq, 0.0)
        out = np.where(active & low & (zj + dq > j), j - zj, out)

        crossed = zj <= 0 if ctx.crossed_zero is None else ctx.crossed_zero
        if ctx.base_state is not None:
            target = np.minimum(np.asarray(ctx.base_state, float), j)
            lifted = np.maximum(target - zj, 0.0)
            out = np.where(crossed, lifted, out)
        return out

    return ImpulsePolicy(decide=decide, label=f"truncated[{base.label}] j={j:g}")


@dataclass(frozen=True)
class OrderEvent:
    """One order placed in one replication."""

    replication: int
    time: float
    quantity: float
    cost: float


@dataclass
class CostTrace:
    """Cost accounting of a simulated policy, pooled over replications."""

    label: str
    horizon: float
    holding_cost_integral: float
    order_cost_total: float
    order_events: List[OrderEvent]
    average_cost: float
    ci_halfwidth: float
    standard_error: float
    final_state: float
    final_states: np.ndarray = field(repr=False)
    replication_costs: np.ndarray = field(repr=False)
    batch_means: np.ndarray = field(repr=False)
    path: Optional[np.ndarray] = field(default=None, repr=False)

    def summary(self) -> Dict[str, Any]:
        """Return a JSON-ready summary."""
        return {
            "label": self.label,
            "horizon": self.horizon,
            "replications": int(self.replication_costs.size),
            "holding_cost_integral": self.holding_cost_integral,
            "order_cost_total": self.order_cost_total,
            "order_count": len(self.order_events),
            "average_cost": self.average_cost,
            "standard_error": self.standard_error,
            "ci_halfwidth": self.ci_halfwidth,
            "final_state": self.final_state,
        }


def batch_interval(values: np.ndarray) -> Tuple[float, float, float]:
    """Return (mean, standard error, CI half-width) of pooled batch means."""
    flat = np.asarray(values, dtype=float).ravel()
    n = flat.size
    mean = float(np.mean(flat))
    if n < 2:
        return mean, math.nan, math.nan
    se = float(np.std(flat, ddof=1) / math.sqrt(n))
    half = float(stats.t.ppf(0.5 + CI_LEVEL / 2, n - 1) * se)
    return mean, se, half


class _Ledger:
    """Per-replication cost accounting of one simulated process."""

    def __init__(self, cfg: SimConfig):
        R = cfg.replications
        self.cfg = cfg
        self.holding = np.zeros(R)
        self.order_cost = np.zeros(R)
        self.cum_order = np.zeros(R)
        self.batch_cost = np.zeros((R, cfg.batch_count))
        self.events: List[OrderEvent] = []
        self.path: List[Tuple[float, float, float, float]] = []

    def add_holding(self, h_prev: np.ndarray, h_now: np.ndarray, batch: int) -> None:
        piece = 0.5 * (h_prev + h_now) * self.cfg.dt
        self.holding += piece
        self.batch_cost[:, batch] += piece

    def add_orders(
        self, t: float, q: np.ndarray, c: OrderingCost, batch: int
    ) -> None:
        placed = np.flatnonzero(q > 0)
        if placed.size == 0:
            return
        cost = eval_cost(c, q[placed])
        self.order_cost[placed] += cost
        self.cum_order[placed] += q[placed]
        self.batch_cost[placed, batch] += cost
        self.events.extend(
            OrderEvent(int(r), t, float(x), float(k))
            for r, x, k in zip(placed, q[placed], cost)
        )

    def add_block(
        self,
        step0: int,
        pieces: np.ndarray,
        post: np.ndarray,
        quantities: np.ndarray,
        c: OrderingCost,
        batch_index: np.ndarray,
    ) -> None:
        """Account for a chunk of steps starting after step ``step0``.

        Args:
            step0: Steps completed before the chunk
            pieces: Trapezoid holding cost of every step, (replications, steps)
            post: Post-order states, same shape
            quantities: Order quantities, zero where nothing was ordered
            c: Ordering cost
            batch_index: Batch of every step of the whole run
        """
        dt = self.cfg.dt
        m = pieces.shape[1]
        batches = batch_index[step0:step0 + m]
        held_before = self.holding[0]
        self.holding += pieces.sum(axis=1)
        for b in np.unique(batches):
            self.batch_cost[:, b] += pieces[:, batches == b].sum(axis=1)

        order_costs = np.zeros(m)
        order_sizes = np.zeros(m)
        cost_before = self.order_cost[0]
        placed_before = self.cum_order[0]
        rows, cols = np.nonzero(quantities > 0)
        if rows.size:
            # events in step order, replications ascending within a step
            order = np.lexsort((rows, cols))
            rows, cols = rows[order], cols[order]
            q = quantities[rows, cols]
            cost = np.asarray(eval_cost(c, q), dtype=float)
            np.add.at(self.order_cost, rows, cost)
            np.add.at(self.cum_order, rows, q)
            np.add.at(self.batch_cost, (rows, batches[cols]), cost)
            self.events.extend(
                OrderEvent(int(r), (step0 + int(k) + 1) * dt, float(x), float(y))
                for r, k, x, y in zip(rows, cols, q, cost)
            )
            first = rows == 0
            order_costs[cols[first]] = cost[first]
            order_sizes[cols[first]] = q[first]

        every = self.cfg.record_every
        if not every:
            return
        steps = step0 + 1 + np.arange(m)
        due = np.flatnonzero(steps % every == 0)
        held = held_before + np.cumsum(pieces[0])
        spent = cost_before + np.cumsum(order_costs)
        placed = placed_before + np.cumsum(order_sizes)
        for k in due:
            self.path.append(
                (int(steps[k]) * dt, float(post[0, k]), float(placed[k]),
                 float(held[k] + spent[k]))
            )

    def record(self, t: float, z: np.ndarray) -> None:
        self.path.append(
            (t, float(z[0]), float(self.cum_order[0]),
             float(self.holding[0] + self.order_cost[0]))
        )

    def to_trace(
        self, label: str, z: np.ndarray, batch_steps: np.ndarray
    ) -> CostTrace:
        horizon = self.cfg.n_steps * self.cfg.dt
        batch_means = self.batch_cost / (batch_steps[None, :] * self.cfg.dt)
        _, se, half = batch_interval(batch_means)
        replication_costs = (self.holding + self.order_cost) / horizon
        return CostTrace(
            label=label,
            horizon=horizon,
            holding_cost_integral=float(np.mean(self.holding)),
            order_cost_total=float(np.mean(self.order_cost)),
            order_events=self.events,
            average_cost=float(np.mean(replication_costs)),
            ci_halfwidth=half,
            standard_error=se,
            final_state=float(z[0]),
            final_states=z.copy(),
            replication_costs=replication_costs,
            batch_means=batch_means,
            path=np.asarray(self.path) if self.path else None,
        )


def _batch_layout(cfg: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Return the batch index of every step and the number of steps per batch."""
    steps = np.arange(cfg.n_steps)
    index = np.minimum(steps * cfg.batch_count // cfg.n_steps, cfg.batch_count - 1)
    return index, np.bincount(index, minlength=cfg.batch_count).astype(float)


def _run(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    base: ImpulsePolicy,
    cfg: SimConfig,
    x0: float,
    truncated: Optional[ImpulsePolicy] = None,
) -> Tuple[CostTrace, Optional[CostTrace]]:
    _warn_on_step_size(model, cfg)
    R, dt = cfg.replications, cfg.dt
    batch_index, batch_steps = _batch_layout(cfg)
    streams = make_streams(cfg.seed, R)
    coupled = truncated is not None
    slack_scale = model.sigma_hi * math.sqrt(dt)

    z = np.full(R, float(x0))
    main = _Ledger(cfg)
    q = base.orders(0.0, z)
    z = z + q
    main.add_orders(0.0, q, c, 0)

    zj = np.full(R, float(x0))
    pair = _Ledger(cfg) if coupled else None
    if truncated is not None and pair is not None:
        ctx = JumpContext(base_order=q, base_state=z, crossed_zero=np.zeros(R, bool))
        qj = truncated.orders(0.0, zj, ctx)
        zj = zj + qj
        pair.add_orders(0.0, qj, c, 0)
        hj_prev = h(zj)

    h_prev = h(z)
    if cfg.record_every:
        main.record(0.0, z)
        if pair is not None:
            pair.record(0.0, zj)

    merges = 0
    step = 0
    for noise in _noise_chunks(streams, cfg.n_steps, cfg.chunk_steps):
        for k in range(noise.shape[1]):
            batch = int(batch_index[step])
            step += 1
            t = step * dt
            z_left = _euler(model, z, noise[:, k], dt)
            _check_state(z_left, step)
            h_now = h(z_left)
            main.add_holding(h_prev, h_now, batch)
            q = base.orders(t, z_left)
            z = z_left
            if np.any(q > 0):
                z = z_left + q
                main.add_orders(t, q, c, batch)
                h_now = h(z)
            h_prev = h_now

            if truncated is not None and pair is not None:
                positive_before = zj > 0
                zj = _euler(model, zj, noise[:, k], dt)
                _check_state(zj, step)
                # paths that cross under the same noise coalesce
                tol = COUPLING_SLACK * slack_scale * np.maximum(1.0, np.abs(z_left))
                zj, merged = _coalesce(z_left, zj, tol, step)
                merges += merged
                hj_now = h(zj)
                pair.add_holding(hj_prev, hj_now, batch)
                ctx = JumpContext(
                    base_order=q,
                    base_state=z,
                    crossed_zero=positive_before & (zj <= 0),
                )
                qj = truncated.orders(t, zj, ctx)
                if np.any(qj > 0):
                    zj = zj + qj
                    pair.add_orders(t, qj, c, batch)
                    hj_now = h(zj)
                hj_prev = hj_now
                _check_coupling(z, zj, step)

            if cfg.record_every and step % cfg.record_every == 0:
                main.record(t, z)
                if pair is not None:
                    pair.record(t, zj)

    if merges:
        logger.debug(f"Coupled paths coalesced {merges} time(s)")
    trace = main.to_trace(base.label, z, batch_steps)
    logger.info(
        f"Simulated {base.label}: average cost {trace.average_cost:.6g} "
        f"+/- {trace.ci_halfwidth:.3g} over {R} replication(s)"
    )
    if truncated is None or pair is None:
        return trace, None
    return trace, pair.to_trace(truncated.label, zj, batch_steps)


def _run_threshold(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    policy: ImpulsePolicy,
    cfg: SimConfig,
    x0: float,
    coefficients: Tuple[float, float],
) -> CostTrace:
    """Simulate an (s, S) rule on a constant-coefficient model chunk by chunk."""
    _warn_on_step_size(model, cfg)
    assert policy.levels is not None
    s, S = policy.levels
    mu, sigma = coefficients
    R, dt = cfg.replications, cfg.dt
    batch_index, batch_steps = _batch_layout(cfg)
    streams = make_streams(cfg.seed, R)

    z = np.full(R, float(x0))
    ledger = _Ledger(cfg)
    q = policy.orders(0.0, z)
    z = z + q
    ledger.add_orders(0.0, q, c, 0)
    h_prev = h(z)
    if cfg.record_every:
        ledger.record(0.0, z)

    step = 0
    for noise in _noise_chunks(streams, cfg.n_steps, cfg.chunk_steps):
        increments = -mu * dt - sigma * math.sqrt(dt) * noise
        left, ordered = _threshold_block(z, increments, s, S)
        _check_block(left, step)
        post = np.where(ordered, S, left)
        h_left = h(left)
        h_post = np.where(ordered, h(post), h_left)
        before = np.concatenate([h_prev[:, None], h_post[:, :-1]], axis=1)
        pieces = 0.5 * (before + h_left) * dt
        quantities = np.where(ordered, S - left, 0.0)
        ledger.add_block(step, pieces, post, quantities, c, batch_index)
        z = post[:, -1].copy()
        h_prev = h_post[:, -1].copy()
        step += noise.shape[1]

    trace = ledger.to_trace(policy.label, z, batch_steps)
    logger.info(
        f"Simulated {policy.label}: average cost {trace.average_cost:.6g} "
        f"+/- {trace.ci_halfwidth:.3g} over {R} replication(s)"
    )
    return trace


def _check_coupling(z: np.ndarray, zj: np.ndarray, step: int) -> None:
    tol = 1e-9 * np.maximum(1.0, np.abs(z))
    above = (zj >= 0) & (zj > z + tol)
    apart = (zj < 0) & (np.abs(zj - z) > tol)
    if np.any(above | apart):
        raise CouplingFailure(
            f"Truncated state left the coupling order at step {step}", step=step
        )


def simulate(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    policy: ImpulsePolicy,
    cfg: SimConfig,
    x0: float,
) -> CostTrace:
    """Simulate the inventory process under ``policy``.

    Args:
        model: Demand model
        h: Holding cost
        c: Ordering cost
        policy: Impulse policy
        cfg: Simulation settings
        x0: Initial inventory level (before any time-zero order)

    Returns:
        Pooled cost trace

    Threshold policies on constant-coefficient models advance a whole noise
    chunk at once; every other combination steps through time.

    Raises:
        SimulationFailure: If the state becomes non-finite
    """
    coefficients = _constant_coefficients(model)
    if policy.levels is not None and coefficients is not None:
        return _run_threshold(model, h, c, policy, cfg, x0, coefficients)
    trace, _ = _run(model, h, c, policy, cfg, x0)
    return trace


def simulate_coupled(
    model: DemandModel,
    h: HoldingCost,
    c: OrderingCost,
    base: ImpulsePolicy,
    j: float,
    cfg: SimConfig,
    x0: float,
) -> Tuple[CostTrace, CostTrace]:
    """Simulate ``base`` and its level-j truncation on the same noise.

    Returns:
        Tuple of (base trace, truncated trace)

    Raises:
        CouplingFailure: If the truncated state leaves the coupling order
    """
    trace, truncated = _run(
        model, h, c, base, cfg, x0, truncated=truncate_policy(base, j)
    )
    assert truncated is not None
    return trace, truncated


def cycle_time_lower_bound(model: DemandModel, j: float) -> float:
    """Return a lower bound on the expected time for the state to fall by j/2."""
    return model.sigma_lo**2 * j / (2.0 * model.mu_hi * model.sigma_hi**2)


def truncation_gap_bound(model: DemandModel, c: OrderingCost, j: float) -> float:
    """Return the bound on the extra average cost of the level-j truncation."""
    factor = 4.0 * model.mu_hi * model.sigma_hi**2 / model.sigma_lo**2
    return factor * sup_K_over(c, j) / j


@dataclass
class ReflectedResult:
    """Time-average occupation of the process reflected at a lower barrier."""

    z_b: float
    bin_edges: np.ndarray
    mass: np.ndarray
    overflow_mass: float
    mean: float
    mean_se: float
    mean_ci_halfwidth: float
    ks_distance: float
    path: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def density(self) -> np.ndarray:
        """Histogram mass divided by bin width."""
        return self.mass / np.diff(self.bin_edges)

    def summary(self) -> Dict[str, Any]:
        """Return a JSON-ready summary."""
        return {
            "z_b": self.z_b,
            "bins": int(self.mass.size),
            "overflow_mass": self.overflow_mass,
            "mean": self.mean,
            "standard_error": self.mean_se,
            "ci_halfwidth": self.mean_ci_halfwidth,
            "ks_distance": self.ks_distance,
        }


def simulate_reflected(
    model: DemandModel,
    z_b: float,
    cfg: SimConfig,
    x0: float,
    span: Optional[float] = None,
    bins: int = 400,
) -> ReflectedResult:
    """Simulate the uncontrolled process reflected upward at ``z_b``.

    Args:
        model: Demand model
        z_b: Lower barrier
        cfg: Simulation settings
        x0: Initial level, at or above the barrier
        span: Width of the histogram range (default 20 sigma_hi^2 / (2 mu_lo))
        bins: Number of histogram bins

    Returns:
        Occupation histogram, mean estimate and KS distance to the
        stationary distribution

    Raises:
        DomainError: If x0 < z_b
    """
    if x0 < z_b:
        raise DomainError(f"x0={x0} lies below the barrier z_b={z_b}")
    _warn_on_step_size(model, cfg)
    span = span or 20.0 * model.sigma_hi**2 / (2.0 * model.mu_lo)
    width = span / bins
    R, dt = cfg.replications, cfg.dt
    batch_index, batch_steps = _batch_layout(cfg)
    streams = make_streams(cfg.seed, R)

    coefficients = _constant_coefficients(model)
    z = np.full(R, float(x0))
    counts = np.zeros(bins + 1)
    batch_sum = np.zeros((R, cfg.batch_count))
    pushed = 0.0
    path: List[Tuple[float, float, float, float]] = []
    if cfg.record_every:
        path.append((0.0, float(z[0]), 0.0, 0.0))

    step = 0
    for noise in _noise_chunks(streams, cfg.n_steps, cfg.chunk_steps):
        m = noise.shape[1]
        states, push = _reflected_chunk(model, z, noise, dt, z_b, coefficients)
        _check_block(states, step)
        idx = np.minimum(((states - z_b) / width).astype(int), bins)
        counts += np.bincount(idx.ravel(), minlength=bins + 1)
        batches = batch_index[step:step + m]
        for b in np.unique(batches):
            batch_sum[:, b] += states[:, batches == b].sum(axis=1)
        if cfg.record_every:
            steps = step + 1 + np.arange(m)
            for k in np.flatnonzero(steps % cfg.record_every == 0):
                path.append(
                    (int(steps[k]) * dt, float(states[0, k]),
                     pushed + float(push[0, k]), 0.0)
                )
        pushed += float(push[0, -1])
        z = states[:, -1].copy()
        step += m

    total = counts.sum()
    mass = counts[:bins] / total
    edges = z_b + width * np.arange(bins + 1)
    empirical = np.cumsum(mass)
    analytic = stationary_cdf(model, z_b, edges[1:])
    ks = float(np.max(np.abs(empirical - analytic)))
    mean, se, half = batch_interval(batch_sum / batch_steps[None, :])
    logger.info(
        f"Reflected at {z_b:g}: mean {mean:.6g} +/- {half:.3g}, KS distance {ks:.4f}"
    )
    return ReflectedResult(
        z_b=z_b,
        bin_edges=edges,
        mass=mass,
        overflow_mass=float(counts[bins] / total),
        mean=mean,
        mean_se=se,
        mean_ci_halfwidth=half,
        ks_distance=ks,
        path=np.asarray(path) if path else None,
    )


@dataclass(frozen=True)
class CycleStats:
    """Regenerative estimates of one (s, S) cycle."""

    mean_cost: float
    mean_time: float
    cost_se: float
    time_se: float
    cost_ci: float
    time_ci: float
    cycles: int

    def to_dict(self) -> Dict[str, float]:
        """Return a JSON-ready dictionary."""
        return {
            "mean_cost": self.mean_cost,
            "mean_time": self.mean_time,
            "cost_se": self.cost_se,
            "time_se": self.time_se,
            "cost_ci": self.cost_ci,
            "time_ci": self.time_ci,
            "cycles": self.cycles,
        }


def regenerative_cycle_stats(
    model: DemandModel, h: HoldingCost, s: float, S: float, cfg: SimConfig
) -> CycleStats:
    """Estimate the expected holding cost and duration of a cycle from S to s.

    Cycles still running when the horizon ends are discarded; the number of
    steps dropped this way is logged at debug level.

    Args:
        model: Demand model
        h: Holding cost
        s: Reorder point
        S: Order-up-to level
        cfg: Simulation settings

    Returns:
        Cycle estimates with Student-t intervals

    Raises:
        DomainError: If s >= S
        InsufficientData: If fewer than batch_count cycles complete
    """
    if s >= S:
        raise DomainError(f"An (s, S) policy needs s < S, got s={s}, S={S}")
    R, dt = cfg.replications, cfg.dt
    streams = make_streams(cfg.seed, R)
    z = np.full(R, float(S))
    cost = np.zeros(R)
    time = np.zeros(R)
    costs: List[np.ndarray] = []
    times: List[np.ndarray] = []

    h_prev = h(z)
    step = 0
    for noise in _noise_chunks(streams, cfg.n_steps, cfg.chunk_steps):
        for k in range(noise.shape[1]):
            step += 1
            z = _euler(model, z, noise[:, k], dt)
            _check_state(z, step)
            h_now = h(z)
            cost += 0.5 * (h_prev + h_now) * dt
            time += dt
            done = z <= s
            if np.any(done):
                costs.append(cost[done].copy())
                times.append(time[done].copy())
                z = np.where(done, S, z)
                cost[done] = 0.0
                time[done] = 0.0
                h_now = h(z)
            h_prev = h_now

    unfinished = int(round(float(time.sum()) / dt))
    logger.debug(
        f"Dropped {unfinished} step(s) of {int(np.count_nonzero(time))} unfinished "
        f"cycle(s) at the horizon"
    )
    n = int(sum(x.size for x in costs))
    if n < cfg.batch_count:
        raise InsufficientData(
            f"Only {n} cycle(s) completed, fewer than batch_count={cfg.batch_count}",
            step=step,
        )
    all_costs = np.concatenate(costs)
    all_times = np.concatenate(times)
    quantile = stats.t.ppf(0.5 + CI_LEVEL / 2, n - 1)
    cost_se = float(np.std(all_costs, ddof=1) / math.sqrt(n))
    time_se = float(np.std(all_times, ddof=1) / math.sqrt(n))
    result = CycleStats(
        mean_cost=float(np.mean(all_costs)),
        mean_time=float(np.mean(all_times)),
        cost_se=cost_se,
        time_se=time_se,
        cost_ci=float(quantile * cost_se),
        time_ci=float(quantile * time_se),
        cycles=n,
    )
    logger.info(
        f"{n} cycles of ({s:g},{S:g}): cost {result.mean_cost:.6g}, "
        f"time {result.mean_time:.6g}"
    )
    return result
