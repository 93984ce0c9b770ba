"""Average-cost solver for the regenerative stopping MDP.

The long-run average cost of a stopping rule is its expected cycle cost over
its expected cycle length.  For a penalty rate ``nu`` the relaxed single-cycle
problem ``J(nu) = min_pi E[c(0, T_stop) - nu * T_stop]`` is solved exactly by
backward induction on the item count (every wait adds one item, so the chain
is acyclic), and the optimal average cost is the root of ``J``.

Loads live on a lattice of step ``load_step`` (half the narrowest bin width by
default) so that sums of bin-center weights are represented exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .arrival import ArrivalModel, OrderSequence, estimate, windowed_estimate
from .core import Action, CostModel, EpisodeContext, Policy, SystemState, TimedDataPoint


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Lattice:
    step: float
    units: np.ndarray  # lattice units per weight bin center
    probs: np.ndarray
    n_free: int  # levels 0..n_free-1 lie below capacity
    fees: np.ndarray  # fee per level, 0..n_free-1+max(units)
    mean_tau: float

    @classmethod
    def build(cls, model: ArrivalModel, cm: CostModel, load_step: float | None = None) -> Lattice:
        if load_step is None:
            load_step = float(np.min(np.diff(model.weight_grid))) / 2.0
        units = np.rint(model.centers / load_step).astype(np.int64)
        units = np.maximum(units, 1)
        n_free = int(math.ceil(cm.capacity / load_step - 1e-9))
        size = n_free + int(units.max())
        fees = cm.fee_curve(np.arange(size) * load_step)
        return cls(load_step, units, model.weight_probs.copy(), n_free, fees, model.mean_inter_arrival)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        keep = self.probs > 0
        return self.units[keep], self.probs[keep]

    def level(self, load: float) -> int:
        return int(min(max(round(load / self.step), 0), self.n_free - 1))


@dataclass(frozen=True)
class GridPolicy(Policy):
    """Tabular stopping rule over (item count, load level).

    ``stop_table[i, k]`` is True when the rule ships ``i`` held items at load
    ``k * load_step``.  Row 0 is never consulted (the empty truck must wait);
    loads at or above capacity and ``i >= max_items`` always stop.
    """

    stop_table: np.ndarray
    load_step: float
    capacity: float
    max_items: int
    grid: np.ndarray

    name = "model-based"

    def action(self, load: float, item_count: int) -> Action:
        if item_count == 0:
            return Action.WAIT
        if load >= self.capacity or item_count >= self.max_items:
            return Action.STOP
        k = int(min(max(round(load / self.load_step), 0), self.stop_table.shape[1] - 1))
        return Action.STOP if self.stop_table[item_count, k] else Action.WAIT

    def stop_probability(self, state, stats):
        return 1.0 if self.action(state.load, state.item_count) == Action.STOP else 0.0

    def stop_region(self) -> np.ndarray:
        """Boolean (item count, weight bin) grid evaluated at bin centers."""
        centers = 0.5 * (self.grid[:-1] + self.grid[1:])
        out = np.zeros((self.max_items + 1, len(centers)), dtype=bool)
        for i in range(1, self.max_items + 1):
            for g, c in enumerate(centers):
                out[i, g] = self.action(c, i) == Action.STOP
        return out

    def to_text(self, max_rows: int | None = None) -> str:
        """Rows are item counts, columns weight bins, cells W or S."""
        region = self.stop_region()
        rows = range(1, (max_rows or self.max_items) + 1)
        return "\n".join("".join("S" if region[i, g] else "W" for g in range(region.shape[1])) for i in rows)

    def heatmap_rows(self, max_rows: int | None = None) -> list[dict]:
        region = self.stop_region()
        centers = 0.5 * (self.grid[:-1] + self.grid[1:])
        rows = []
        for i in range(1, (max_rows or self.max_items) + 1):
            for g, c in enumerate(centers):
                rows.append({"item_count": i, "load_kg": float(c), "action": "stop" if region[i, g] else "wait"})
        return rows

    def __eq__(self, other):
        return isinstance(other, GridPolicy) and np.array_equal(self.stop_table, other.stop_table)

    __hash__ = None


@dataclass(frozen=True)
class RelaxedDPResult:
    nu: float
    value: float
    policy: GridPolicy
    values_table: np.ndarray
    truncation_binding: bool = False


@dataclass(frozen=True)
class MdpSolution:
    nu_star: float
    policy: GridPolicy
    iterations: int
    bracket: tuple[float, float]
    value_at_root: float


def relaxed_stopping(
    nu: float,
    model: ArrivalModel,
    cm: CostModel,
    *,
    lattice: Lattice | None = None,
) -> RelaxedDPResult:
    """Backward induction for ``min_pi E[cycle cost - nu * cycle length]``.

    Waiting with ``i`` items costs ``(alpha * i - nu) * E[tau]``; stopping
    costs ``f(load)``; ties go to stop.
    """
    if nu < 0:
        raise ValueError("penalty rate must be nonnegative")
    lat = lattice or Lattice.build(model, cm)
    units, probs = lat.support()
    n_free, fees, et = lat.n_free, lat.fees, lat.mean_tau
    I = cm.max_items
    gather = np.arange(n_free)[:, None] + units[None, :]
    stop_fee = fees[:n_free]

    values = np.empty((I + 1, len(fees)))
    stop = np.zeros((I + 1, n_free), dtype=bool)
    values[I] = fees
    stop[I] = True
    v = fees
    for i in range(I - 1, 0, -1):
        cont = (cm.alpha * i - nu) * et + v[gather] @ probs
        s = stop_fee <= cont
        v = fees.copy()
        v[:n_free] = np.where(s, stop_fee, cont)
        values[i] = v
        stop[i] = s
    values[0] = np.nan
    value = -nu * et + float(values[1][units] @ probs)

    binding = False
    if I >= 2:
        lo = (I - 1) * int(units.min())
        if lo < n_free and not stop[I - 1, lo:].all():
            binding = True
    policy = GridPolicy(stop, lat.step, cm.capacity, I, model.weight_grid)
    return RelaxedDPResult(nu, value, policy, values, binding)


def evaluate_policy(
    stop_rule: Callable[[int, int], bool] | GridPolicy,
    model: ArrivalModel,
    cm: CostModel,
    *,
    lattice: Lattice | None = None,
) -> tuple[float, float]:
    """Expected cycle cost and cycle length of a stopping rule (floats).

    ``stop_rule(i, k)`` decides at ``i`` items and load level ``k``; masking
    and truncation are applied on top.
    """
    lat = lattice or Lattice.build(model, cm)
    units, probs = lat.support()
    n_free, fees, et = lat.n_free, lat.fees, lat.mean_tau
    I = cm.max_items
    if isinstance(stop_rule, GridPolicy):
        table = stop_rule.stop_table
    else:
        table = np.array([[bool(stop_rule(i, k)) for k in range(n_free)] for i in range(I + 1)])
    gather = np.arange(n_free)[:, None] + units[None, :]
    cost = fees.copy()
    time = np.zeros(len(fees))
    for i in range(I - 1, 0, -1):
        s = table[i]
        wait_cost = cm.alpha * i * et + cost[gather] @ probs
        wait_time = et + time[gather] @ probs
        new_cost = fees.copy()
        new_time = np.zeros(len(fees))
        new_cost[:n_free] = np.where(s, fees[:n_free], wait_cost)
        new_time[:n_free] = np.where(s, 0.0, wait_time)
        cost, time = new_cost, new_time
    return float(cost[units] @ probs), et + float(time[units] @ probs)


def renewal_ratio(stop_rule, model: ArrivalModel, cm: CostModel, **kw) -> float:
    c, t = evaluate_policy(stop_rule, model, cm, **kw)
    return c / t


def exact_renewal_ratio(
    stop_rule: Callable[[int, int], bool] | GridPolicy,
    model: ArrivalModel,
    cm: CostModel,
    *,
    lattice: Lattice | None = None,
) -> Fraction:
    """Renewal ratio in rational arithmetic over the reachable chain.

    Inputs (probabilities, fees, alpha, mean gap) are converted exactly from
    their binary floating-point values, so no rounding enters the comparison.
    Intended for small instances.
    """
    lat = lattice or Lattice.build(model, cm)
    units, probs = lat.support()
    units = [int(u) for u in units]
    probs = [Fraction(float(p)) for p in probs]
    fees = [Fraction(float(f)) for f in lat.fees]
    et = Fraction(lat.mean_tau)
    alpha = Fraction(cm.alpha)
    n_free, I = lat.n_free, cm.max_items
    if isinstance(stop_rule, GridPolicy):
        table = stop_rule.stop_table
        rule = lambda i, k: bool(table[i, k])  # noqa: E731
    else:
        rule = stop_rule
    memo: dict[tuple[int, int], tuple[Fraction, Fraction]] = {}

    def go(i: int, k: int) -> tuple[Fraction, Fraction]:
        if k >= n_free or i >= I or rule(i, k):
            return fees[k], Fraction(0)
        key = (i, k)
        if key not in memo:
            c = alpha * i * et
            t = et
            for u, p in zip(units, probs):
                cc, tt = go(i + 1, k + u)
                c += p * cc
                t += p * tt
            memo[key] = (c, t)
        return memo[key]

    c0, t0 = Fraction(0), et
    for u, p in zip(units, probs):
        cc, tt = go(1, u)
        c0 += p * cc
        t0 += p * tt
    return c0 / t0


def solve(
    model: ArrivalModel,
    cm: CostModel,
    tol: float | None = None,
    *,
    nu_hint: float | None = None,
    ceiling: float = 1e12,
    load_step: float | None = None,
    polish: bool = True,
) -> MdpSolution:
    """Root of ``J`` by bisection, then exact ratio polishing of the policy.

    The initial upper end is the ship-immediately ratio ``E[f(x)] / E[tau]``
    (or ``2 * nu_hint``), doubled until ``J`` turns negative.
    """
    lat = Lattice.build(model, cm, load_step)
    J = lambda nu: relaxed_stopping(nu, model, cm, lattice=lat)  # noqa: E731
    probes: list[RelaxedDPResult] = []

    lo = 0.0
    r0 = J(0.0)
    probes.append(r0)
    if r0.value < 0:
        raise SolverError(f"J(0) = {r0.value} < 0: costs must be nonnegative")
    units, probs = lat.support()
    baseline = float(lat.fees[units] @ probs) / lat.mean_tau
    hi = 2.0 * nu_hint if nu_hint else baseline
    hi = max(hi, 1e-12)
    if tol is None:
        tol = 1e-6 * hi
    if nu_hint:
        r = J(nu_hint / 2.0)
        probes.append(r)
        if r.value >= 0:
            lo = nu_hint / 2.0
    r_hi = J(hi)
    probes.append(r_hi)
    iterations = 0
    while r_hi.value >= 0:
        lo = hi
        hi *= 2.0
        iterations += 1
        if hi > ceiling:
            raise SolverError(f"no sign change of J below ceiling {ceiling}")
        r_hi = J(hi)
        probes.append(r_hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        r = J(mid)
        probes.append(r)
        iterations += 1
        if r.value >= 0:
            lo = mid
        else:
            hi, r_hi = mid, r
    policy = r_hi.policy
    nu_star = hi
    root_value = r_hi.value
    if polish:
        # Dinkelbach steps: the bracketing policy's own ratio lies in [nu*, hi)
        nu_star = renewal_ratio(policy, model, cm, lattice=lat)
        for _ in range(50):
            r = J(nu_star)
            probes.append(r)
            iterations += 1
            root_value = r.value
            if r.policy == policy:
                break
            ratio = renewal_ratio(r.policy, model, cm, lattice=lat)
            if ratio >= nu_star:
                break
            policy, nu_star = r.policy, ratio
    if any(p.truncation_binding for p in probes):
        warnings.warn(
            f"optimal policy waits at item count {cm.max_items - 1}; truncation at "
            f"max_items={cm.max_items} may bind",
            RuntimeWarning,
            stacklevel=2,
        )
    return MdpSolution(nu_star, policy, iterations, (min(lo, nu_star), max(hi, nu_star)), root_value)


class ModelBasedController(Policy):
    """Online estimate-then-solve control.

    Keeps a history of observed orders (optionally seeded with training
    sequences), re-estimates the arrival model every ``resolve_every`` arrivals
    and re-solves the MDP.  With ``lookback`` set, only the recent window feeds
    the estimate.  Until enough data exists it ships immediately.
    """

    name = "model-based"

    def __init__(
        self,
        cm: CostModel,
        grid,
        *,
        resolve_every: int = 1,
        lookback: float | None = None,
        min_count: int = 10,
        history: list[OrderSequence] | None = None,
        min_history: int = 1,
        tol_rel: float = 1e-6,
    ):
        if resolve_every < 1:
            raise ValueError("resolve_every must be >= 1")
        self.cm = cm
        self.grid = np.asarray(grid, float)
        self.resolve_every = resolve_every
        self.lookback = lookback
        self.min_count = min_count
        self.min_history = min_history
        self.tol_rel = tol_rel
        self._weights: list[float] = []
        self._times: list[float] = []
        offset = 0.0
        for seq in history or ():
            self._weights.extend(seq.weights.tolist())
            self._times.extend((offset + seq.arrival_times).tolist())
            offset += seq.window
        self._history_len = len(self._weights)
        self._history_end = offset
        self._offset = offset
        self.policy: GridPolicy | None = None
        self.nu_star: float | None = None
        self.solves = 0
        self._since = 0

    def reset(self, context: EpisodeContext) -> None:
        self.cm = context.cost_model
        del self._weights[self._history_len :]
        del self._times[self._history_len :]
        self._offset = self._history_end
        self.policy = None
        self.nu_star = None
        self._since = 0
        if self._history_len >= self.min_history:
            self._resolve(self._offset)

    def observe(self, point: TimedDataPoint, clock: float) -> None:
        self._weights.append(point.weight)
        self._times.append(self._offset + clock)
        self._since += 1
        if len(self._weights) >= self.min_history and (self.policy is None or self._since >= self.resolve_every):
            self._resolve(self._offset + clock)

    def current_model(self, now: float) -> ArrivalModel:
        times = np.array(self._times)
        seq = OrderSequence(np.array(self._weights), np.diff(times, prepend=0.0), math.inf)
        if self.lookback is None:
            return estimate([seq], self.grid)
        return windowed_estimate(seq, now, self.lookback, self.grid, self.min_count)

    def _resolve(self, now: float) -> None:
        model = self.current_model(now)
        hint = self.nu_star
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = solve(model, self.cm, nu_hint=hint, tol=None if hint is None else self.tol_rel * hint)
        self.policy = sol.policy
        self.nu_star = sol.nu_star
        self.solves += 1
        self._since = 0

    def stop_probability(self, state: SystemState, stats) -> float:
        if self.policy is None:
            return 1.0
        return self.policy.stop_probability(state, stats)
