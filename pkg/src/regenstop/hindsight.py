"""Hindsight-optimal consolidation for a fully known arrival sequence.

At step ``j`` (right after arrival ``j``) the state is determined by the step
``k`` of the last stop: the truck holds arrivals ``k+1..j``.  So step ``j`` has
at most ``j + 1`` states and the backward recursion

    Q_m(s, a) = c_step(s, a, T_d - t_m)
    Q_j(s, a) = c_step(s, a, tau_{j+1}) + V_{j+1}(delta(s, x_{j+1}, a))

costs O(m^2) in total.  All states reachable at a step are tabulated, so
labels for states off the optimal path are plain lookups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    S0,
    Action,
    CostModel,
    ScriptedPolicy,
    SystemState,
    TimedDataPoint,
    forced_action,
    simulate,
    transition,
    wait_cost_rate,
)


@dataclass
class HindsightResult:
    optimal_actions: list[Action]
    optimal_cost: float
    q_wait: list[np.ndarray]
    q_stop: list[np.ndarray]
    loads: list[np.ndarray]
    evaluations: int

    @property
    def steps(self) -> int:
        return len(self.q_wait)

    def _index(self, j: int, s: SystemState) -> int:
        if not 0 <= j < self.steps:
            raise IndexError(f"step {j} outside 0..{self.steps - 1}")
        if j == 0:
            if s.item_count != 0:
                raise ValueError("only the empty state exists at step 0")
            return 0
        k = j - s.item_count
        if s.item_count < 1 or k < 0:
            raise ValueError(f"{s.item_count} items cannot be held at step {j}")
        expected = self.loads[j][k]
        if abs(s.load - expected) > 1e-6 * max(1.0, abs(expected)):
            raise ValueError(
                f"load {s.load} with {s.item_count} items is not reachable at step {j} (expected {expected})"
            )
        return k

    def q_values(self, j: int, s: SystemState) -> tuple[float, float]:
        """``(Q_j(s, wait), Q_j(s, stop))``; infeasible actions are +inf."""
        k = self._index(j, s)
        return float(self.q_wait[j][k]), float(self.q_stop[j][k])

    def value(self, j: int, s: SystemState) -> float:
        return min(self.q_values(j, s))

    def table(self, j: int) -> dict[SystemState, tuple[float, float]]:
        out = {}
        for k in range(len(self.q_wait[j])):
            n = j - k if j else 0
            out[SystemState(float(self.loads[j][k]), n)] = (float(self.q_wait[j][k]), float(self.q_stop[j][k]))
        return out

    def dump(self) -> str:
        lines = ["step item_count load q_wait q_stop"]
        for j in range(self.steps):
            for k in range(len(self.q_wait[j])):
                n = j - k if j else 0
                lines.append(f"{j} {n} {self.loads[j][k]!r} {self.q_wait[j][k]!r} {self.q_stop[j][k]!r}")
        return "\n".join(lines)


def _loads_by_step(weights: np.ndarray) -> list[np.ndarray]:
    # left-to-right sums, bit-identical to the simulator's load updates
    loads = [np.zeros(1)]
    prev = np.zeros(0)
    for j, x in enumerate(weights, start=1):
        cur = np.empty(j)
        cur[: j - 1] = prev + x
        cur[j - 1] = x
        loads.append(cur)
        prev = cur
    return loads


def hindsight(sequence, horizon: float | None, cm: CostModel) -> HindsightResult:
    """Optimal action string and per-step Q tables for a known sequence."""
    weights = np.asarray(sequence.weights, float)
    taus = np.asarray(sequence.inter_arrivals, float)
    m = len(weights)
    times = np.concatenate([[0.0], np.cumsum(taus)])
    if horizon is None:
        horizon = getattr(sequence, "window", None) or float(times[-1])
    if times[-1] > horizon * (1 + 1e-12) + 1e-12:
        raise ValueError("arrivals extend beyond the horizon")
    alpha, cap = cm.alpha, cm.capacity
    loads = _loads_by_step(weights)

    q_wait: list[np.ndarray] = [None] * (m + 1)  # type: ignore[list-item]
    q_stop: list[np.ndarray] = [None] * (m + 1)  # type: ignore[list-item]
    evaluations = 0
    v_next = None
    for j in range(m, -1, -1):
        load = loads[j]
        n = (j - np.arange(len(load))) if j else np.zeros(1, dtype=int)
        dur = max(horizon - times[m], 0.0) if j == m else taus[j]
        qw = alpha * n * dur
        qs = cm.fee_curve(load) + wait_cost_rate(S0, cm) * dur
        if j < m:
            qw = qw + v_next[: len(load)]
            qs = qs + v_next[j]
        qw = np.where(load >= cap, np.inf, qw)
        qs = np.where(n == 0, np.inf, qs)
        q_wait[j], q_stop[j] = qw, qs
        evaluations += len(load)
        v_next = np.minimum(qw, qs)

    actions: list[Action] = []
    k = 0
    for j in range(m + 1):
        if q_stop[j][k] <= q_wait[j][k]:
            actions.append(Action.STOP)
            k = j
        else:
            actions.append(Action.WAIT)
    return HindsightResult(actions, float(v_next[0]), q_wait, q_stop, loads, evaluations)


def expert_action(result: HindsightResult, j: int, s: SystemState) -> Action:
    """Hindsight-optimal action in state ``s`` at step ``j``; ties go to stop."""
    qw, qs = result.q_values(j, s)
    return Action.STOP if qs <= qw else Action.WAIT


def brute_force_hindsight(sequence, horizon: float | None, cm: CostModel, max_steps: int = 20):
    """Exhaustive minimum over all feasible action strings (test oracle).

    Every string is scored with :func:`regenstop.core.simulate`.  Near-ties are
    broken towards the lexicographically earliest stop.
    """
    weights = np.asarray(sequence.weights, float)
    taus = np.asarray(sequence.inter_arrivals, float)
    m = len(weights)
    if m > max_steps:
        raise ValueError(f"brute force refuses {m} > {max_steps} arrivals")
    if horizon is None:
        horizon = getattr(sequence, "window", None) or float(taus.sum())

    strings: list[list[Action]] = []

    def extend(j: int, s: SystemState, prefix: list[Action]) -> None:
        forced = forced_action(s, cm)
        options = (forced,) if forced is not None else (Action.STOP, Action.WAIT)
        for a in options:
            if j == m:
                strings.append(prefix + [a])
            else:
                nxt = transition(s, TimedDataPoint(weights[j], taus[j]), a, cm)
                extend(j + 1, nxt, prefix + [a])

    extend(0, S0, [])
    best_cost, best = np.inf, None
    for actions in strings:
        cost = simulate(ScriptedPolicy(actions), sequence, horizon, cm).total_cost
        if best is None or cost < best_cost - 1e-12 * max(1.0, abs(best_cost)):
            best_cost, best = cost, actions
    return best, float(best_cost)

