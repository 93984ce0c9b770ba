import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regenstop.arrival import OrderSequence
from regenstop.core import (
    S0,
    Action,
    BaselinePolicy,
    CostBreakdown,
    CostModel,
    EpisodeStats,
    FeeCurve,
    NeverStopPolicy,
    RandomPolicy,
    ScriptedPolicy,
    SystemState,
    ThresholdPolicy,
    TimedDataPoint,
    available_actions,
    simulate,
    step_cost,
    stop_cost,
    transition,
    wait_cost_rate,
    write_breakdowns_csv,
)

CURVE = FeeCurve(((0, 0), (10000, 800), (22000, 1000)))


def cm(alpha=1.0, curve=CURVE, capacity=22000.0):
    return CostModel(alpha, curve, capacity)


def random_sequence(rng, m, window=None, wmax=3000.0):
    w = rng.uniform(50, wmax, m)
    t = rng.exponential(1.0, m)
    return OrderSequence(w, t, window if window is not None else float(t.sum()) + rng.uniform(0, 2))


# ---- transition


def test_transition_from_s0():
    s = transition(S0, TimedDataPoint(100, 1), Action.WAIT)
    assert (s.load, s.item_count) == (100, 1)


def test_transition_stop_regenerates():
    s = transition(SystemState(500, 2, 4.0, 3.0), TimedDataPoint(100, 1), Action.STOP)
    assert (s.load, s.item_count, s.total_delay) == (100, 1, 0.0)
    assert s.clock == 4.0


def test_transition_wait_accrues_delay():
    s = transition(SystemState(500, 2, 1.0, 0.0), TimedDataPoint(100, 3), Action.WAIT)
    assert (s.load, s.item_count) == (600, 3)
    assert s.total_delay == pytest.approx(1.0 + 6.0)


def test_transition_rejects_illegal_actions():
    with pytest.raises(ValueError):
        transition(S0, TimedDataPoint(100, 1), Action.STOP)
    with pytest.raises(ValueError):
        transition(SystemState(22000, 3), TimedDataPoint(100, 1), Action.WAIT, cm())
    with pytest.raises(ValueError):
        transition(SystemState(10, 1), TimedDataPoint(0.0, 1), Action.WAIT)


def test_available_actions():
    c = cm()
    assert available_actions(S0, c) == (Action.WAIT,)
    assert available_actions(SystemState(22000, 4), c) == (Action.STOP,)
    assert set(available_actions(SystemState(100, 1), c)) == {Action.WAIT, Action.STOP}


# ---- costs


def test_wait_cost_rate():
    assert wait_cost_rate(SystemState(1000, 3), cm(2.0)) == 6
    assert wait_cost_rate(S0, cm(5.0)) == 0
    assert wait_cost_rate(SystemState(1000, 3), cm(0.0)) == 0


def test_stop_cost_on_curve():
    c = cm()
    assert stop_cost(SystemState(22000, 5), c) == 1000
    assert stop_cost(SystemState(5000, 1), c) == pytest.approx(400)
    assert stop_cost(SystemState(30000, 9), c) == c.fee_curve.full_truck_fee
    with pytest.raises(ValueError):
        stop_cost(S0, c)


def test_step_cost():
    c = cm(1.0)
    s = SystemState(1000, 2)
    assert step_cost(s, Action.WAIT, 3, c) == 6
    assert step_cost(s, Action.STOP, 3, c) == pytest.approx(CURVE.fee(1000))
    assert step_cost(s, Action.STOP, 0, c) == pytest.approx(CURVE.fee(1000))


def test_fee_curve_validation():
    with pytest.raises(ValueError):
        FeeCurve(((0, 100), (1000, 50)))  # decreasing
    with pytest.raises(ValueError):
        FeeCurve(((0, 0), (1000, 10), (2000, 100)))  # convex kink
    with pytest.raises(ValueError):
        FeeCurve(((100, 0), (1000, 10)))
    f = FeeCurve(((0, 50), (1000, 150)))
    assert f.fee(0) == 50 and f.fee(5000) == 150
    assert FeeCurve.from_text(f.to_text()) == f


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(-1.0, CURVE)
    with pytest.raises(ValueError):
        CostModel(1.0, CURVE, capacity=0)


# ---- simulate


def test_baseline_has_no_delay():
    rng = np.random.default_rng(3)
    seq = random_sequence(rng, 30)
    res = simulate(BaselinePolicy(), seq, seq.window, cm(3.0))
    assert res.breakdown.delay_cost == 0.0
    assert res.breakdown.delay_per_order == 0.0
    assert res.breakdown.shipping_cost == pytest.approx(sum(CURVE.fee(x) for x in seq.weights), rel=1e-12)
    assert res.breakdown.shipments == len(seq)


def test_never_stop_free_without_alpha():
    seq = OrderSequence([100.0] * 5, [1.0] * 5, 10.0)
    res = simulate(NeverStopPolicy(), seq, 10.0, cm(0.0))
    assert res.total_cost == 0.0


def _naive_cost(actions, seq, horizon, c):
    """Independent event loop: per-order holding times plus fees."""
    held: list[tuple[float, float]] = []  # (arrival time, weight)
    t, cost = 0.0, 0.0
    times = np.cumsum(seq.inter_arrivals)
    for j, a in enumerate(actions):
        now = times[j - 1] if j else 0.0
        if a == Action.STOP:
            cost += c.fee_curve.fee(sum(w for _, w in held))
            for arr, _ in held:
                cost += c.alpha * (now - arr)
            held = []
        nxt = times[j] if j < len(seq) else horizon
        if j < len(seq):
            held.append((times[j], seq.weights[j]))
        t = nxt
    for arr, _ in held:
        cost += c.alpha * (t - arr)
    return cost


def test_threshold_matches_naive_loop():
    rng = np.random.default_rng(11)
    c = cm(2.5)
    for _ in range(20):
        seq = random_sequence(rng, 8)
        res = simulate(ThresholdPolicy(load=4000), seq, seq.window, c, record=True)
        actions = [r.action for r in res.trajectory]
        assert res.total_cost == pytest.approx(_naive_cost(actions, seq, seq.window, c), rel=1e-9)


def test_simulate_is_deterministic_for_seeded_random_policy():
    rng = np.random.default_rng(0)
    seq = random_sequence(rng, 40)
    a = simulate(RandomPolicy(0.3), seq, seq.window, cm(), seed=7)
    b = simulate(RandomPolicy(0.3), seq, seq.window, cm(), seed=7)
    assert a.breakdown == b.breakdown


def test_simulate_rejects_overlong_sequence():
    seq = OrderSequence([1.0, 1.0], [1.0, 1.0], 2.0)
    with pytest.raises(ValueError):
        simulate(BaselinePolicy(), seq, 1.0, cm())


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    m=st.integers(2, 25),
    split=st.floats(0.05, 0.95),
    p=st.floats(0.0, 1.0),
)
def test_cost_additivity(seed, m, split, p):
    rng = np.random.default_rng(seed)
    seq = random_sequence(rng, m)
    c = cm(1.7, capacity=6000.0)
    full = simulate(RandomPolicy(p), seq, seq.window, c, seed=seed, record=True)
    actions = [r.action for r in full.trajectory]
    k = max(1, min(m - 1, int(split * m)))  # split right after arrival k
    t1 = float(np.cumsum(seq.inter_arrivals)[k - 1])
    head = OrderSequence(seq.weights[:k], seq.inter_arrivals[:k], t1)
    tail = OrderSequence(seq.weights[k:], seq.inter_arrivals[k:], seq.window - t1)
    first = simulate(ScriptedPolicy(actions[:k]), head, t1, c, tail="truncate")
    second = simulate(ScriptedPolicy(actions[k:]), tail, seq.window, c, start=first.final_state)
    total = first.total_cost + second.total_cost
    assert total == pytest.approx(full.total_cost, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), p=st.floats(0.0, 1.0))
def test_masking_and_regeneration(seed, p):
    rng = np.random.default_rng(seed)
    seq = random_sequence(rng, 30, wmax=8000.0)
    c = cm(1.0, capacity=15000.0)
    res = simulate(RandomPolicy(p), seq, seq.window, c, seed=seed, record=True)
    traj = res.trajectory
    for r in traj:
        assert not (r.state.item_count == 0 and r.action == Action.STOP)
        assert not (r.state.load >= c.capacity and r.action == Action.WAIT)
        if r.state.item_count == 0:
            assert r.state.load == 0 and r.state.total_delay == 0
    for prev, nxt in zip(traj, traj[1:]):
        if prev.action == Action.STOP:
            assert nxt.state.item_count == 1 and nxt.state.total_delay == 0.0


def test_delay_identity_per_cycle():
    rng = np.random.default_rng(5)
    seq = random_sequence(rng, 50)
    c = cm(0.8)
    res = simulate(ThresholdPolicy(items=4), seq, seq.window, c, record=True)
    times = np.concatenate([[0.0], np.cumsum(seq.inter_arrivals)])
    cycle_delay, held = 0.0, []
    for r in res.trajectory:
        if r.action == Action.STOP:
            ship_time = times[r.step]
            assert cycle_delay == pytest.approx(c.alpha * sum(ship_time - times[i] for i in held), rel=1e-9)
            cycle_delay, held = 0.0, []
        else:
            cycle_delay += r.cost
        if r.step < len(seq):
            held.append(r.step + 1)


def test_total_delay_feature_tracks_holding_time():
    seq = OrderSequence([10.0, 10.0, 10.0], [1.0, 2.0, 0.5], 5.0)
    res = simulate(NeverStopPolicy(), seq, 5.0, cm(), tail="truncate")
    # orders at t=1, 3, 3.5 -> at t=3.5: 2.5 + 0.5 + 0
    assert res.final_state.total_delay == pytest.approx(3.0)
    assert res.final_state.clock == pytest.approx(3.5)


def test_episode_stats_priors():
    st_ = EpisodeStats(2.0, 500.0)
    assert (st_.mean_tau, st_.mean_weight) == (2.0, 500.0)
    st_.update(TimedDataPoint(100.0, 1.0))
    assert (st_.mean_tau, st_.mean_weight) == (1.0, 100.0)


def test_breakdown_csv(tmp_path):
    b = CostBreakdown(10.0, 5.0, 2, 3.0, 4)
    assert b.total_cost == 15.0 and b.delay_per_order == 0.75
    assert (b + b).shipments == 4
    path = tmp_path / "b.csv"
    write_breakdowns_csv([b.to_row("baseline", 1.0)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "policy,alpha,total_cost,shipping_cost,delay_cost,shipments,delay_per_order_days"
    assert lines[1].startswith("baseline,1.0,15.0")


def test_horizon_tail_accrues_delay():
    seq = OrderSequence([10.0], [1.0], 4.0)
    res = simulate(NeverStopPolicy(), seq, 4.0, cm(2.0))
    assert res.breakdown.delay_cost == pytest.approx(2.0 * 1 * 3.0)
    trunc = simulate(NeverStopPolicy(), seq, 4.0, cm(2.0), tail="truncate")
    assert trunc.total_cost == 0.0
    assert math.isclose(res.final_state.clock, 4.0)
