"""Regenerative stopping model for shipping consolidation.

Units are fixed throughout the package: kg for mass, days for time and USD for
cost.  A state is the held truck load and item count, plus the accumulated
delay of held orders and the clock (both bookkeeping only).  ``stop`` ships
everything and regenerates to the empty truck ``s0``.

The decision at step ``j`` happens right after arrival ``j`` (step 0 is the
empty truck at time 0).  Its cost covers the interval until arrival ``j + 1``:

    stop: f(load) + c_wait(s0) * tau      wait: alpha * n * tau

and the next state is ``delta(s0, x)`` or ``delta(s, x)`` respectively.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class Action(enum.IntEnum):
    WAIT = 0
    STOP = 1

    def __str__(self) -> str:
        return self.name.lower()


class SystemState(NamedTuple):
    load: float = 0.0
    item_count: int = 0
    total_delay: float = 0.0
    clock: float = 0.0

    @property
    def is_empty(self) -> bool:
        return self.item_count == 0


S0 = SystemState()


class TimedDataPoint(NamedTuple):
    weight: float
    inter_arrival: float


@dataclass(frozen=True)
class FeeCurve:
    """Piecewise-linear, nondecreasing, concave shipping fee.

    ``breakpoints`` is a sequence of ``(load_kg, fee_usd)`` pairs starting at
    load 0.  The fee is flat (the full-truck rate) beyond the last breakpoint.
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.breakpoints)
        object.__setattr__(self, "breakpoints", pts)
        if len(pts) < 1:
            raise ValueError("fee curve needs at least one breakpoint")
        if pts[0][0] != 0.0:
            raise ValueError("first fee breakpoint must be at load 0")
        loads = np.array([p[0] for p in pts])
        fees = np.array([p[1] for p in pts])
        if not np.all(np.isfinite(fees)) or fees[0] < 0:
            raise ValueError("fees must be finite and nonnegative")
        if np.any(np.diff(loads) <= 0):
            raise ValueError("fee breakpoints must have strictly increasing loads")
        slopes = np.diff(fees) / np.diff(loads) if len(pts) > 1 else np.zeros(0)
        scale = max(1.0, float(np.max(np.abs(slopes)))) if slopes.size else 1.0
        if np.any(slopes < -1e-12 * scale):
            raise ValueError("fee curve must be nondecreasing")
        if np.any(np.diff(slopes) > 1e-12 * scale):
            raise ValueError("fee curve must be concave (slopes nonincreasing)")
        object.__setattr__(self, "_loads", loads)
        object.__setattr__(self, "_fees", fees)

    @classmethod
    def constant(cls, fee: float) -> FeeCurve:
        return cls(((0.0, fee),))

    @property
    def full_truck_fee(self) -> float:
        return self.breakpoints[-1][1]

    def __call__(self, load):
        return np.interp(load, self._loads, self._fees)

    def fee(self, load: float) -> float:
        return float(np.interp(load, self._loads, self._fees))

    def to_text(self) -> str:
        return ";".join(f"{x!r}:{y!r}" for x, y in self.breakpoints)

    @classmethod
    def from_text(cls, text: str) -> FeeCurve:
        pts = []
        for item in text.split(";"):
            x, y = item.split(":")
            pts.append((float(x), float(y)))
        return cls(tuple(pts))


@dataclass(frozen=True)
class CostModel:
    alpha: float
    fee_curve: FeeCurve
    capacity: float = 22_000.0
    max_items: int = 200

    def __post_init__(self) -> None:
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.capacity > 0:
            raise ValueError(f"capacity must be > 0, got {self.capacity}")
        if self.max_items < 1:
            raise ValueError("max_items must be positive")

    @property
    def max_fee(self) -> float:
        """f(L), the fee of a full truck."""
        return self.fee_curve.fee(self.capacity)

    def with_alpha(self, alpha: float) -> CostModel:
        return CostModel(alpha, self.fee_curve, self.capacity, self.max_items)


def available_actions(s: SystemState, cm: CostModel) -> tuple[Action, ...]:
    if s.item_count == 0:
        return (Action.WAIT,)
    if s.load >= cm.capacity:
        return (Action.STOP,)
    return (Action.WAIT, Action.STOP)


def forced_action(s: SystemState, cm: CostModel) -> Action | None:
    """The only legal action in ``s``, or None when both are allowed."""
    if s.item_count == 0:
        return Action.WAIT
    if s.load >= cm.capacity:
        return Action.STOP
    return None


def _check_action(s: SystemState, a: Action, cm: CostModel | None) -> None:
    if a == Action.STOP and s.item_count == 0:
        raise ValueError("stop is not available in the empty state s0")
    if a == Action.WAIT and cm is not None and s.load >= cm.capacity:
        raise ValueError(f"wait is not available at load {s.load} >= capacity {cm.capacity}")


def transition(
    s: SystemState, x: TimedDataPoint, a: Action, cm: CostModel | None = None
) -> SystemState:
    """Apply action ``a`` in ``s`` and absorb the next arrival ``x``."""
    _check_action(s, a, cm)
    if not x.weight > 0:
        raise ValueError(f"order weight must be positive, got {x.weight}")
    if a == Action.STOP:
        return SystemState(x.weight, 1, 0.0, s.clock + x.inter_arrival)
    return SystemState(
        s.load + x.weight,
        s.item_count + 1,
        s.total_delay + s.item_count * x.inter_arrival,
        s.clock + x.inter_arrival,
    )


def wait_cost_rate(s: SystemState, cm: CostModel) -> float:
    return cm.alpha * s.item_count


def stop_cost(s: SystemState, cm: CostModel) -> float:
    if s.item_count == 0:
        raise ValueError("stop is not available in the empty state s0")
    return cm.fee_curve.fee(s.load)


def step_cost(s: SystemState, a: Action, t: float, cm: CostModel) -> float:
    if t < 0:
        raise ValueError("duration must be nonnegative")
    _check_action(s, a, cm)
    if a == Action.STOP:
        return stop_cost(s, cm) + wait_cost_rate(S0, cm) * t
    return wait_cost_rate(s, cm) * t


# --------------------------------------------------------------------------
# policies and simulation


@dataclass
class EpisodeStats:
    """Running means of inter-arrival times and weights since episode start.

    ``prior_tau`` and ``prior_weight`` stand in until the first arrival.
    """

    prior_tau: float = 1.0
    prior_weight: float = 1000.0
    count: int = 0
    sum_tau: float = 0.0
    sum_weight: float = 0.0

    def update(self, point: TimedDataPoint) -> None:
        self.count += 1
        self.sum_tau += point.inter_arrival
        self.sum_weight += point.weight

    @property
    def mean_tau(self) -> float:
        return self.sum_tau / self.count if self.count else self.prior_tau

    @property
    def mean_weight(self) -> float:
        return self.sum_weight / self.count if self.count else self.prior_weight

    def reset(self) -> None:
        self.count = 0
        self.sum_tau = 0.0
        self.sum_weight = 0.0


@dataclass(frozen=True)
class EpisodeContext:
    cost_model: CostModel
    horizon: float
    destination_id: str = ""
    max_fee: float | None = None

    @property
    def fee_at_capacity(self) -> float:
        return self.max_fee if self.max_fee is not None else self.cost_model.max_fee


class Policy:
    """Stopping policy queried once per arrival.

    Subclasses override :meth:`stop_probability`; online policies may also
    use :meth:`reset` and :meth:`observe` to track the arrival stream.
    """

    name = "policy"

    def reset(self, context: EpisodeContext) -> None:
        pass

    def observe(self, point: TimedDataPoint, clock: float) -> None:
        pass

    def stop_probability(self, state: SystemState, stats: EpisodeStats) -> float:
        raise NotImplementedError


class BaselinePolicy(Policy):
    """Ship as soon as an order is held."""

    name = "baseline"

    def stop_probability(self, state, stats):
        return 1.0


class NeverStopPolicy(Policy):
    name = "never-stop"

    def stop_probability(self, state, stats):
        return 0.0


class ThresholdPolicy(Policy):
    """Stop once the load or the item count reaches a threshold."""

    def __init__(self, load: float = math.inf, items: float = math.inf):
        self.load = load
        self.items = items
        self.name = f"threshold(load={load},items={items})"

    def stop_probability(self, state, stats):
        return 1.0 if state.load >= self.load or state.item_count >= self.items else 0.0


class ScriptedPolicy(Policy):
    """Replays a fixed action string indexed by step (used by oracles)."""

    name = "scripted"

    def __init__(self, actions: Sequence[Action]):
        self.actions = list(actions)
        self._step = 0

    def reset(self, context):
        self._step = 0

    def observe(self, point, clock):
        self._step += 1

    def stop_probability(self, state, stats):
        return 1.0 if self.actions[self._step] == Action.STOP else 0.0


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, p_stop: float = 0.5):
        self.p_stop = p_stop

    def stop_probability(self, state, stats):
        return self.p_stop


@dataclass
class CostBreakdown:
    shipping_cost: float = 0.0
    delay_cost: float = 0.0
    shipments: int = 0
    delay_days: float = 0.0
    orders: int = 0

    @property
    def total_cost(self) -> float:
        return self.shipping_cost + self.delay_cost

    @property
    def delay_per_order(self) -> float:
        return self.delay_days / self.orders if self.orders else 0.0

    def __add__(self, other: CostBreakdown) -> CostBreakdown:
        return CostBreakdown(
            self.shipping_cost + other.shipping_cost,
            self.delay_cost + other.delay_cost,
            self.shipments + other.shipments,
            self.delay_days + other.delay_days,
            self.orders + other.orders,
        )

    def to_row(self, policy: str, alpha: float) -> dict:
        return {
            "policy": policy,
            "alpha": alpha,
            "total_cost": self.total_cost,
            "shipping_cost": self.shipping_cost,
            "delay_cost": self.delay_cost,
            "shipments": self.shipments,
            "delay_per_order_days": self.delay_per_order,
        }


BREAKDOWN_COLUMNS = (
    "policy",
    "alpha",
    "total_cost",
    "shipping_cost",
    "delay_cost",
    "shipments",
    "delay_per_order_days",
)


def write_breakdowns_csv(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BREAKDOWN_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in BREAKDOWN_COLUMNS})


class StepRecord(NamedTuple):
    step: int
    state: SystemState
    action: Action
    duration: float
    cost: float


@dataclass
class SimulationResult:
    breakdown: CostBreakdown
    final_state: SystemState
    trajectory: list[StepRecord] = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return self.breakdown.total_cost


def simulate(
    policy: Policy,
    sequence,
    horizon: float | None = None,
    cm: CostModel | None = None,
    seed=None,
    *,
    tail: str = "accrue",
    start: SystemState = S0,
    stats: EpisodeStats | None = None,
    record: bool = False,
) -> SimulationResult:
    """Replay an arrival sequence under ``policy`` and account all costs.

    ``sequence`` is an :class:`~regenstop.arrival.OrderSequence` or any object
    with ``weights`` and ``inter_arrivals`` arrays.  With ``tail="accrue"`` a
    last decision is taken after the final arrival and charged over the
    residual window ``horizon - t_m``; ``tail="truncate"`` stops accounting at
    the last arrival (the episodic convention of the RL environment).

    Legal-action masking overrides the policy: wait is forced in ``s0`` and
    stop is forced once the load reaches capacity.
    """
    if cm is None:
        raise ValueError("a cost model is required")
    if tail not in ("accrue", "truncate"):
        raise ValueError(f"unknown tail mode {tail!r}")
    weights = np.asarray(sequence.weights, dtype=float)
    taus = np.asarray(sequence.inter_arrivals, dtype=float)
    m = len(weights)
    if horizon is None:
        horizon = getattr(sequence, "window", None)
        if horizon is None:
            horizon = float(taus.sum())
    rng = np.random.default_rng(seed)
    if stats is None:
        stats = EpisodeStats()
    policy.reset(
        EpisodeContext(
            cm,
            horizon,
            getattr(sequence, "destination_id", ""),
            getattr(sequence, "max_fee", None),
        )
    )

    alpha = cm.alpha
    capacity = cm.capacity
    fee = cm.fee_curve.fee
    out = CostBreakdown(orders=m)
    trajectory: list[StepRecord] = []
    s = start
    last_clock = start.clock + float(taus.sum())
    if tail == "accrue" and horizon < last_clock - 1e-9 * max(1.0, horizon):
        raise ValueError(f"arrivals end at {last_clock} beyond horizon {horizon}")
    n_steps = m + 1 if tail == "accrue" else m

    for j in range(n_steps):
        if s.item_count == 0:
            a = Action.WAIT
        elif s.load >= capacity:
            a = Action.STOP
        else:
            p = policy.stop_probability(s, stats)
            if p >= 1.0:
                a = Action.STOP
            elif p <= 0.0:
                a = Action.WAIT
            else:
                a = Action.STOP if rng.random() < p else Action.WAIT
        dur = float(taus[j]) if j < m else max(horizon - s.clock, 0.0)
        if a == Action.STOP:
            ship = fee(s.load)
            cost = ship
            out.shipping_cost += ship
            out.shipments += 1
        else:
            cost = alpha * s.item_count * dur
            out.delay_cost += cost
            out.delay_days += s.item_count * dur
        if record:
            trajectory.append(StepRecord(j, s, a, dur, cost))
        if j < m:
            x = float(weights[j])
            if a == Action.STOP:
                s = SystemState(x, 1, 0.0, s.clock + dur)
            else:
                s = SystemState(
                    s.load + x, s.item_count + 1, s.total_delay + s.item_count * dur, s.clock + dur
                )
            point = TimedDataPoint(x, dur)
            stats.update(point)
            policy.observe(point, s.clock)
        elif a == Action.STOP:
            s = SystemState(0.0, 0, 0.0, s.clock)
        else:
            s = SystemState(s.load, s.item_count, s.total_delay + s.item_count * dur, s.clock + dur)
    return SimulationResult(out, s, trajectory)
