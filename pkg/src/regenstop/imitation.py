"""DAgger-style imitation of the hindsight oracle."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .arrival import OrderSequence
from .core import Action, CostModel, EpisodeStats, SystemState, TimedDataPoint, available_actions, simulate, transition
from .env import resolve_cost_model, sample_window
from .hindsight import expert_action, hindsight
from .nn import (
    FeatureScaling,
    LabeledDataset,
    NeuralPolicy,
    SupervisedConfig,
    accuracy,
    act,
    featurize,
    train_supervised,
)


@dataclass(frozen=True)
class ImitationConfig:
    outer_iterations: int = 5
    sequences_per_iteration: int = 50
    episode_window: float = 30.0
    supervised: SupervisedConfig = field(default_factory=SupervisedConfig)
    seed: int = 0
    validation_windows: int = 20
    scaling: FeatureScaling = field(default_factory=FeatureScaling)
    activation: str = "relu"

    def __post_init__(self):
        if self.outer_iterations < 1 or self.sequences_per_iteration < 1:
            raise ValueError("need at least one iteration and one sequence per iteration")
        if not self.episode_window > 0:
            raise ValueError("episode window must be positive")


class Visit(NamedTuple):
    iteration: int
    window: int
    step: int
    state: SystemState
    label: Action
    taken: Action | None  # action used to move on (None at the last step)


@dataclass
class IterationReport:
    iteration: int
    omega_size: int
    windows: int
    empty_windows: int
    agreement: float  # pre-update policy vs expert on this iteration's visits
    train_accuracy: float
    validation_cost: float


@dataclass
class ImitationResult:
    policy: NeuralPolicy  # best on validation windows
    final_policy: NeuralPolicy
    omega: LabeledDataset
    reports: list[IterationReport]
    windows: list[OrderSequence] = field(default_factory=list)
    visits: list[Visit] = field(default_factory=list)
    snapshots: list[NeuralPolicy] = field(default_factory=list)  # policy used for rollouts per iteration


def dataset_priors(dataset: Sequence[OrderSequence]) -> tuple[float, float]:
    w = np.concatenate([s.weights for s in dataset]) if dataset else np.zeros(0)
    t = np.concatenate([s.inter_arrivals for s in dataset]) if dataset else np.zeros(0)
    if len(w) == 0:
        raise ValueError("dataset has no arrivals")
    return float(t.mean()), float(w.mean())


def evaluate_windows(policy, windows: Sequence[OrderSequence], cost_models) -> float:
    total = 0.0
    for w in windows:
        cm = resolve_cost_model(cost_models, w.destination_id)
        total += simulate(policy, w, w.window, cm).total_cost
    return total


def imitate_expert(
    dataset: Sequence[OrderSequence],
    cfg: ImitationConfig,
    cost_models: CostModel | Mapping[str, CostModel],
    *,
    policy: NeuralPolicy | None = None,
    keep_trace: bool = False,
) -> ImitationResult:
    """Aggregate hindsight labels on states visited by the expert (first pass)
    and then by the learner, retraining on everything collected so far."""
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    val_rng = np.random.default_rng([cfg.seed, 1])
    priors = dataset_priors(dataset)
    if policy is None:
        policy = NeuralPolicy(seed=[cfg.seed, 2], activation=cfg.activation, scaling=cfg.scaling, priors=priors)
    validation = [sample_window(dataset, cfg.episode_window, val_rng) for _ in range(cfg.validation_windows)]

    omega = LabeledDataset()
    reports: list[IterationReport] = []
    visits: list[Visit] = []
    windows: list[OrderSequence] = []
    snapshots: list[NeuralPolicy] = []
    best, best_cost = None, np.inf

    for it in range(1, cfg.outer_iterations + 1):
        rollout_policy = policy.copy()
        if keep_trace:
            snapshots.append(rollout_policy)
        agree = n_new = empty = 0
        for _ in range(cfg.sequences_per_iteration):
            window = sample_window(dataset, cfg.episode_window, rng)
            cm = resolve_cost_model(cost_models, window.destination_id)
            max_fee = window.max_fee if window.max_fee is not None else cm.max_fee
            wid = len(windows)
            windows.append(window)
            if len(window) == 0:
                empty += 1
            h = hindsight(window, window.window, cm)
            stats = EpisodeStats()
            s = SystemState()
            m = len(window)
            for j in range(m + 1):
                label = expert_action(h, j, s)
                feats = featurize(s, stats, max_fee, priors)
                omega.add(feats, label)
                mask = available_actions(s, cm)
                guess = act(rollout_policy, feats, mask, greedy=True)
                agree += guess == label
                n_new += 1
                if j == m:
                    taken = None
                elif it == 1:
                    taken = label
                else:
                    taken = act(rollout_policy, feats, mask, rng)
                if keep_trace:
                    visits.append(Visit(it, wid, j, s, label, taken))
                if taken is None:
                    break
                point = TimedDataPoint(float(window.weights[j]), float(window.inter_arrivals[j]))
                s = transition(s, point, taken, cm)
                stats.update(point)

        sup = replace(cfg.supervised, seed=cfg.supervised.seed + it)
        policy, _ = train_supervised(policy, omega, sup)
        val_cost = evaluate_windows(policy, validation, cost_models) if validation else float("nan")
        reports.append(
            IterationReport(
                it,
                len(omega),
                cfg.sequences_per_iteration,
                empty,
                agree / n_new if n_new else float("nan"),
                accuracy(policy, omega),
                val_cost,
            )
        )
        if validation and val_cost < best_cost:
            best, best_cost = policy.copy(), val_cost

    return ImitationResult(
        best if best is not None else policy.copy(),
        policy,
        omega,
        reports,
        windows,
        visits,
        snapshots,
    )


def audit_labels(result: ImitationResult, cost_models) -> int:
    """Recompute every traced label from a fresh oracle; returns the mismatch count."""
    if not result.visits:
        raise ValueError("imitation was run without keep_trace")
    cache: dict[int, object] = {}
    bad = 0
    for v in result.visits:
        window = result.windows[v.window]
        if v.window not in cache:
            cm = resolve_cost_model(cost_models, window.destination_id)
            cache[v.window] = hindsight(window, window.window, cm)
        if expert_action(cache[v.window], v.step, v.state) != v.label:
            bad += 1
    return bad
