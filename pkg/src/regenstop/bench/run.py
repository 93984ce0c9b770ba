"""Benchmark building blocks shared by the CLI and the acceptance suite."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..arrival import OrderSequence, estimate, generate, uniform_grid
from ..core import BaselinePolicy, CostBreakdown, CostModel, Policy, ScriptedPolicy, simulate
from ..env import EnvConfig, PGConfig, train_policy_gradient
from ..hindsight import hindsight
from ..imitation import ImitationConfig, dataset_priors, imitate_expert
from ..mdp import GridPolicy, ModelBasedController, solve
from ..nn import NeuralPolicy, SupervisedConfig
from .config import BenchmarkConfig

APPROACHES = ("baseline", "model-based", "model-based-windowed", "imitation", "policy-gradient", "hindsight")
LEARNED = ("imitation", "policy-gradient")


@dataclass
class CityData:
    name: str
    full: OrderSequence
    train: OrderSequence
    test: OrderSequence


def generate_city(cfg: BenchmarkConfig, city: str, seed_index: int) -> OrderSequence:
    spec = cfg.cities[city]
    ci = list(cfg.cities).index(city)
    return generate(
        spec.generator,
        cfg.days,
        seed=[cfg.seed, seed_index, ci],
        destination_id=city,
        max_fee=spec.fee_curve.full_truck_fee,
    )


def split_city(cfg: BenchmarkConfig, full: OrderSequence) -> CityData:
    cut = cfg.split_time
    return CityData(full.destination_id, full, full.slice_time(0.0, cut), full.slice_time(cut, cfg.days))


def city_data(cfg: BenchmarkConfig, seed_index: int) -> dict[str, CityData]:
    return {c: split_city(cfg, generate_city(cfg, c, seed_index)) for c in cfg.cities}


# --------------------------------------------------------------------------
# policies


def model_based_policy(cfg: BenchmarkConfig, data: CityData, cm: CostModel, *, windowed: bool = False):
    mb = cfg.model_based
    lookback = mb["window_lookback"] if windowed else mb.get("lookback")
    return ModelBasedController(
        cm,
        uniform_grid(cfg.capacity, int(mb["bins"])),
        resolve_every=int(mb["resolve_every"]),
        lookback=lookback,
        history=[data.train],
    )


def static_mdp_policy(cfg: BenchmarkConfig, data: CityData, cm: CostModel) -> GridPolicy:
    """MDP policy solved once on the city's training split."""
    model = estimate([data.train], uniform_grid(cfg.capacity, int(cfg.model_based["bins"])))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve(model, cm).policy


def imitation_config(cfg: BenchmarkConfig, seed: int, **overrides) -> ImitationConfig:
    il = {**cfg.imitation, **overrides}
    sup = SupervisedConfig(
        learning_rate=float(il["learning_rate"]),
        l2=float(il["l2"]),
        epochs=int(il["epochs"]),
        batch_size=int(il["batch_size"]),
        seed=seed,
        balance_classes=bool(il["balance_classes"]),
    )
    return ImitationConfig(
        outer_iterations=int(il["outer_iterations"]),
        sequences_per_iteration=int(il["sequences_per_iteration"]),
        episode_window=float(il["episode_window"]),
        supervised=sup,
        seed=seed,
        validation_windows=int(il["validation_windows"]),
    )


def train_imitation(cfg: BenchmarkConfig, datas: dict[str, CityData], alpha: float, seed: int, **overrides):
    train = [d.train for d in datas.values()]
    if not any(len(s) for s in train):
        raise ValueError("training split has no arrivals")
    t0 = time.perf_counter()
    result = imitate_expert(train, imitation_config(cfg, seed, **overrides), cfg.cost_models(alpha))
    report = {
        "approach": "imitation",
        "alpha": alpha,
        "seed": seed,
        "wall_clock_s": time.perf_counter() - t0,
        "iterations": [r.__dict__ for r in result.reports],
        "final_validation_cost": result.reports[-1].validation_cost,
    }
    return result.policy, report


def train_pg(cfg: BenchmarkConfig, datas: dict[str, CityData], alpha: float, seed: int):
    train = [d.train for d in datas.values()]
    if not any(len(s) for s in train):
        raise ValueError("training split has no arrivals")
    pg = cfg.policy_gradient
    env = EnvConfig(float(pg["episode_window"]), train, cfg.cost_models(alpha), seed=seed)
    policy = NeuralPolicy(seed=[seed, 2], priors=dataset_priors(train))
    t0 = time.perf_counter()
    conf = PGConfig(updates=int(pg["updates"]), batch=int(pg["batch"]), step_size=float(pg["step_size"]), seed=seed)
    policy, trace = train_policy_gradient(env, policy, conf)
    policy.greedy = True
    report = {
        "approach": "policy-gradient",
        "alpha": alpha,
        "seed": seed,
        "wall_clock_s": time.perf_counter() - t0,
        "final_mean_return": trace[-1] if trace else None,
    }
    return policy, report


def hindsight_policy(data: CityData, cm: CostModel) -> ScriptedPolicy:
    return ScriptedPolicy(hindsight(data.test, data.test.window, cm).optimal_actions)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Evaluation:
    approach: str
    alpha: float
    city: str
    seed: int
    breakdown: CostBreakdown
    decisions: int
    seconds: float
    post_switch_cost: float | None = None

    @property
    def latency_us(self) -> float:
        return 1e6 * self.seconds / max(self.decisions, 1)

    def row(self) -> dict:
        b = self.breakdown
        return {
            "approach": self.approach,
            "alpha": self.alpha,
            "city": self.city,
            "seed": self.seed,
            "total_cost": b.total_cost,
            "shipping_cost": b.shipping_cost,
            "delay_cost": b.delay_cost,
            "shipments": b.shipments,
            "delay_per_order": b.delay_per_order,
        }


def run_policy(
    policy: Policy,
    data: CityData,
    cm: CostModel,
    *,
    approach: str,
    alpha: float,
    seed: int,
    switch_time: float | None = None,
) -> Evaluation:
    """Simulate ``policy`` on the test split, timing decisions."""
    record = switch_time is not None
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = simulate(policy, data.test, data.test.window, cm, seed=seed, record=record)
    seconds = time.perf_counter() - t0
    post = None
    if record:
        local = switch_time - (data.full.window - data.test.window)
        post = float(sum(r.cost for r in res.trajectory if r.state.clock >= local))
    return Evaluation(approach, alpha, data.name, seed, res.breakdown, len(data.test) + 1, seconds, post)


def make_policy(approach: str, cfg: BenchmarkConfig, data: CityData, cm: CostModel, learned=None) -> Policy:
    if approach == "baseline":
        return BaselinePolicy()
    if approach == "model-based":
        return model_based_policy(cfg, data, cm)
    if approach == "model-based-windowed":
        return model_based_policy(cfg, data, cm, windowed=True)
    if approach == "hindsight":
        return hindsight_policy(data, cm)
    if approach in LEARNED:
        if learned is None:
            raise FileNotFoundError(f"no trained {approach} policy supplied")
        return learned
    raise ValueError(f"unknown approach {approach!r}")


def evaluate_seed(
    cfg: BenchmarkConfig,
    seed: int,
    approaches,
    alphas=None,
    learned: dict | None = None,
    datas: dict[str, CityData] | None = None,
) -> list[Evaluation]:
    """All (approach, alpha, city) evaluations for one data seed.

    ``learned`` maps ``(approach, alpha)`` to a trained policy.
    """
    datas = datas or city_data(cfg, seed)
    out = []
    for alpha in alphas or cfg.alphas:
        cms = cfg.cost_models(alpha)
        for approach in approaches:
            for name, data in datas.items():
                cm = cms[name]
                pol = make_policy(approach, cfg, data, cm, (learned or {}).get((approach, alpha)))
                out.append(
                    run_policy(
                        pol,
                        data,
                        cm,
                        approach=approach,
                        alpha=alpha,
                        seed=seed,
                        switch_time=cfg.cities[name].switch_time,
                    )
                )
    return out


def aggregate_rows(evals: list[Evaluation]) -> list[dict]:
    """Per-city rows plus an all-cities sum per (approach, alpha, seed), sorted."""
    rows = [e.row() for e in evals]
    groups: dict[tuple, CostBreakdown] = {}
    for e in evals:
        key = (e.approach, e.alpha, e.seed)
        groups[key] = groups[key] + e.breakdown if key in groups else e.breakdown
    for (approach, alpha, seed), b in groups.items():
        r = Evaluation(approach, alpha, "all", seed, b, 0, 0.0).row()
        rows.append(r)
    rows.sort(key=lambda r: (r["approach"], r["alpha"], r["city"], r["seed"]))
    return rows


def latency_rows(evals: list[Evaluation]) -> list[dict]:
    acc: dict[str, list[float]] = {}
    for e in evals:
        s = acc.setdefault(e.approach, [0.0, 0])
        s[0] += e.seconds
        s[1] += e.decisions
    return [
        {"approach": a, "decisions": int(n), "seconds": t, "latency_us": 1e6 * t / max(n, 1)}
        for a, (t, n) in sorted(acc.items())
    ]


# --------------------------------------------------------------------------
# policy grids


@dataclass
class GridContext:
    """Inputs held fixed while sweeping load and item count."""

    total_delay: float
    max_fee: float
    mean_tau: float
    mean_weight: float
    bins: int = 50
    max_items: int = 50
    capacity: float = 22000.0
    loads: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.loads is None:
            edges = uniform_grid(self.capacity, self.bins)
            self.loads = 0.5 * (edges[:-1] + edges[1:])


def grid_context(cfg: BenchmarkConfig, data: CityData, *, max_items: int = 50, bins: int = 50) -> GridContext:
    test = data.test
    tau = float(test.inter_arrivals.mean()) if len(test) else 1.0
    w = float(test.weights.mean()) if len(test) else 1000.0
    return GridContext(0.0, cfg.cities[data.name].fee_curve.full_truck_fee, tau, w, bins, max_items, cfg.capacity)


def neural_grid(policy: NeuralPolicy, ctx: GridContext) -> np.ndarray:
    """Boolean stop map over (item_count 0..max_items, load bin)."""
    items = np.arange(ctx.max_items + 1)
    L, N = np.meshgrid(ctx.loads, items)
    feats = np.column_stack(
        [
            L.ravel(),
            N.ravel(),
            np.full(L.size, ctx.total_delay),
            np.full(L.size, ctx.max_fee),
            np.full(L.size, ctx.mean_tau),
            np.full(L.size, ctx.mean_weight),
        ]
    )
    logits = policy.logits(feats)
    stop = (logits[:, 1] > logits[:, 0]).reshape(L.shape)
    stop[:, ctx.loads >= ctx.capacity] = True
    stop[0, :] = False
    return stop


def mdp_grid(policy: GridPolicy, ctx: GridContext) -> np.ndarray:
    out = np.zeros((ctx.max_items + 1, len(ctx.loads)), dtype=bool)
    for n in range(1, ctx.max_items + 1):
        for k, load in enumerate(ctx.loads):
            out[n, k] = policy.action(load, n) == 1
    return out


def grid_rows(stop: np.ndarray, ctx: GridContext) -> list[dict]:
    rows = []
    for n in range(stop.shape[0]):
        for k, load in enumerate(ctx.loads):
            rows.append({"item_count": n, "load_kg": float(load), "action": "stop" if stop[n, k] else "wait"})
    return rows


def stop_fraction(stop: np.ndarray) -> float:
    return float(stop[1:].mean())

