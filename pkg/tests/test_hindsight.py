import numpy as np
import pytest
from _support import random_instance

from regenstop.arrival import OrderSequence
from regenstop.core import (
    S0,
    Action,
    BaselinePolicy,
    CostModel,
    FeeCurve,
    RandomPolicy,
    ScriptedPolicy,
    SystemState,
    ThresholdPolicy,
    TimedDataPoint,
    simulate,
    step_cost,
    transition,
)
from regenstop.hindsight import brute_force_hindsight, expert_action, hindsight


def test_empty_sequence():
    cm = CostModel(2.0, FeeCurve.constant(10.0))
    res = hindsight(OrderSequence([], [], 5.0), 5.0, cm)
    assert res.optimal_cost == 0.0
    assert res.optimal_actions == [Action.WAIT]


def test_free_waiting_never_stops():
    seq = OrderSequence([100.0, 200.0, 300.0], [1.0, 1.0, 1.0], 4.0)
    cm = CostModel(0.0, FeeCurve.constant(50.0))
    res = hindsight(seq, 4.0, cm)
    assert res.optimal_cost == 0.0
    assert all(a == Action.WAIT for a in res.optimal_actions)


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(60):
        seq, cm = random_instance(rng)
        res = hindsight(seq, seq.window, cm)
        _, best = brute_force_hindsight(seq, seq.window, cm)
        assert res.optimal_cost == pytest.approx(best, rel=1e-9, abs=1e-9)
        m = len(seq)
        assert res.evaluations <= (m + 1) * (m + 2) // 2


def test_optimal_actions_replay_to_optimal_cost():
    rng = np.random.default_rng(1)
    for _ in range(30):
        seq, cm = random_instance(rng)
        res = hindsight(seq, seq.window, cm)
        sim = simulate(ScriptedPolicy(res.optimal_actions), seq, seq.window, cm)
        assert sim.total_cost == pytest.approx(res.optimal_cost, rel=1e-12, abs=1e-9)


def test_dominates_online_policies():
    rng = np.random.default_rng(2)
    for _ in range(30):
        seq, cm = random_instance(rng, m_max=40)
        opt = hindsight(seq, seq.window, cm).optimal_cost
        for pol in (BaselinePolicy(), ThresholdPolicy(load=3000), ThresholdPolicy(items=3), RandomPolicy(0.4)):
            cost = simulate(pol, seq, seq.window, cm, seed=0).total_cost
            assert opt <= cost + 1e-9 * max(1.0, cost)


def test_single_arrival_compares_two_strings():
    seq = OrderSequence([500.0], [1.0], 3.0)
    cm = CostModel(1.0, FeeCurve.constant(1.5))
    actions, cost = brute_force_hindsight(seq, 3.0, cm)
    assert actions == [Action.WAIT, Action.STOP]
    assert cost == 1.5
    cm2 = CostModel(1.0, FeeCurve.constant(2.5))
    actions, cost = brute_force_hindsight(seq, 3.0, cm2)
    assert actions == [Action.WAIT, Action.WAIT] and cost == 2.0


def test_masked_heavy_first_order_forces_stop():
    seq = OrderSequence([5000.0, 100.0], [1.0, 1.0], 3.0)
    cm = CostModel(0.0, FeeCurve.constant(1.0), capacity=4000.0)
    actions, _ = brute_force_hindsight(seq, 3.0, cm)
    assert actions[1] == Action.STOP
    res = hindsight(seq, 3.0, cm)
    assert res.optimal_actions[1] == Action.STOP
    assert res.q_wait[1][0] == np.inf


def test_brute_force_refuses_long_sequences():
    seq = OrderSequence(np.ones(21), np.full(21, 0.1), 3.0)
    with pytest.raises(ValueError):
        brute_force_hindsight(seq, 3.0, CostModel(1.0, FeeCurve.constant(1.0)))


def test_expert_agrees_with_path():
    rng = np.random.default_rng(3)
    for _ in range(20):
        seq, cm = random_instance(rng, m_max=15)
        res = hindsight(seq, seq.window, cm)
        s = S0
        for j, a in enumerate(res.optimal_actions):
            if j:
                pass
            assert expert_action(res, j, s) == a
            if j < len(seq):
                s = transition(s, TimedDataPoint(seq.weights[j], seq.inter_arrivals[j]), a)


def test_terminal_base_case():
    seq = OrderSequence([100.0, 200.0], [1.0, 1.0], 10.0)
    cm = CostModel(1.0, FeeCurve(((0, 5), (1000, 105))))
    res = hindsight(seq, 10.0, cm)
    for n, load in ((1, 200.0), (2, 300.0)):
        s = SystemState(load, n)
        expect = Action.STOP if cm.fee_curve.fee(load) <= cm.alpha * n * 8.0 else Action.WAIT
        assert expert_action(res, 2, s) == expect


def test_off_path_states_match_brute_force_suffix():
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 50:
        seq, cm = random_instance(rng, m_max=10)
        m = len(seq)
        if m < 2:
            continue
        res = hindsight(seq, seq.window, cm)
        j = int(rng.integers(1, m + 1))
        n = int(rng.integers(1, j + 1))
        load = float(np.sum(seq.weights[j - n : j]))
        s = SystemState(load, n, 0.0, float(np.sum(seq.inter_arrivals[:j])))
        # brute force over the suffix from (j, s)
        suffix = OrderSequence(seq.weights[j:], seq.inter_arrivals[j:], seq.window - s.clock)
        best = np.inf
        for first in (Action.WAIT, Action.STOP):
            if (first == Action.WAIT and load >= cm.capacity) or (first == Action.STOP and n == 0):
                continue
            if m == j:
                cost = step_cost(s, first, seq.window - s.clock, cm)
            else:
                dur = float(seq.inter_arrivals[j])
                nxt = transition(s, TimedDataPoint(seq.weights[j], dur), first, cm)
                rest = OrderSequence(seq.weights[j + 1 :], seq.inter_arrivals[j + 1 :], seq.window - nxt.clock)
                _, tail = _suffix_min(rest, nxt, cm)
                cost = step_cost(s, first, dur, cm) + tail
            best = min(best, cost)
        assert res.value(j, s) == pytest.approx(best, rel=1e-9, abs=1e-9)
        assert suffix.window >= 0
        checked += 1


def _suffix_min(seq, start, cm):
    best = (None, np.inf)

    def go(j, s, acc):
        nonlocal best
        opts = [Action.WAIT, Action.STOP]
        if s.item_count == 0:
            opts = [Action.WAIT]
        elif s.load >= cm.capacity:
            opts = [Action.STOP]
        for a in opts:
            if j == len(seq):
                total = acc + step_cost(s, a, seq.window - (s.clock - start.clock), cm)
                if total < best[1]:
                    best = (a, total)
            else:
                dur = float(seq.inter_arrivals[j])
                nxt = transition(s, TimedDataPoint(seq.weights[j], dur), a, cm)
                go(j + 1, nxt, acc + step_cost(s, a, dur, cm))

    go(0, start, 0.0)
    return best


def test_unreachable_state_is_rejected():
    seq = OrderSequence([100.0, 200.0], [1.0, 1.0], 3.0)
    res = hindsight(seq, 3.0, CostModel(1.0, FeeCurve.constant(1.0)))
    with pytest.raises(ValueError):
        expert_action(res, 2, SystemState(250.0, 2))
    with pytest.raises(ValueError):
        expert_action(res, 1, SystemState(100.0, 2))
    with pytest.raises(IndexError):
        expert_action(res, 5, SystemState(100.0, 1))


def test_value_consistency():
    rng = np.random.default_rng(5)
    seq, cm = random_instance(rng, m_max=12)
    while len(seq) < 5:
        seq, cm = random_instance(rng, m_max=12)
    res = hindsight(seq, seq.window, cm)
    for j in range(len(seq)):
        x = TimedDataPoint(seq.weights[j], seq.inter_arrivals[j])
        for k in range(len(res.q_wait[j])):
            n = j - k if j else 0
            s = SystemState(float(res.loads[j][k]), n)
            for a, q in ((Action.WAIT, res.q_wait[j][k]), (Action.STOP, res.q_stop[j][k])):
                if not np.isfinite(q):
                    continue
                nxt = transition(s, x, a)
                expect = step_cost(s, a, x.inter_arrival, cm) + res.value(j + 1, nxt)
                assert q == pytest.approx(expect, rel=1e-9, abs=1e-9)


def test_dump_lists_every_state():
    seq = OrderSequence([100.0, 200.0], [1.0, 1.0], 3.0)
    res = hindsight(seq, 3.0, CostModel(1.0, FeeCurve.constant(1.0)))
    lines = res.dump().splitlines()
    assert lines[0].startswith("step")
    assert len(lines) == 1 + 1 + 1 + 2
    assert len(res.table(2)) == 2
