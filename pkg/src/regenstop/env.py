"""Discrete-time episodic environment and a REINFORCE-style trainer.

An episode replays a random time window of a recorded sequence from the empty
truck.  Each arrival is one transition ``((s, t), a, r, (s', t'))`` with

    wait: r = -c_wait(s) * tau          stop: r = -c_wait(s0) * tau - c_stop(s)

so the undiscounted return equals minus the simulator cost of the window when
accounting stops at the last arrival.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .arrival import OrderSequence
from .core import (
    S0,
    Action,
    CostModel,
    EpisodeContext,
    EpisodeStats,
    Policy,
    SystemState,
    TimedDataPoint,
    stop_cost,
    wait_cost_rate,
)
from .nn import NeuralPolicy, PolicyFeatures, TrainingDivergedError


class EpisodeTransition(NamedTuple):
    state: SystemState
    action: Action
    reward: float
    next_state: SystemState
    forced: bool = False
    features: PolicyFeatures | None = None


def resolve_cost_model(cost_models, destination_id: str) -> CostModel:
    if isinstance(cost_models, CostModel):
        return cost_models
    try:
        return cost_models[destination_id]
    except KeyError:
        raise KeyError(f"no cost model for destination {destination_id!r}") from None


@dataclass
class EnvConfig:
    episode_window: float
    dataset: Sequence[OrderSequence]
    cost_models: CostModel | Mapping[str, CostModel]
    seed: int | None = None
    gamma: float = 1.0

    def __post_init__(self):
        if not self.episode_window > 0:
            raise ValueError("episode window must be positive")
        if not any(s.window >= self.episode_window for s in self.dataset):
            raise ValueError(f"no sequence is long enough for a {self.episode_window}-day window")


def sample_window(dataset: Sequence[OrderSequence], window: float, rng) -> OrderSequence:
    """Uniform sequence, uniform start time, contiguous slice of length ``window``."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    eligible = [s for s in dataset if s.window >= window]
    if not eligible:
        raise ValueError(f"no sequence is long enough for a {window}-day window")
    seq = eligible[int(rng.integers(len(eligible)))]
    start = float(rng.uniform(0.0, seq.window - window)) if seq.window > window else 0.0
    return seq.slice_time(start, start + window)


def get_episode(
    policy: Policy,
    window: OrderSequence,
    cm: CostModel,
    rng=None,
    *,
    stats: EpisodeStats | None = None,
    record_features: bool = False,
) -> list[EpisodeTransition]:
    """Roll ``policy`` through one window, one transition per arrival."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    stats = stats if stats is not None else EpisodeStats()
    policy.reset(EpisodeContext(cm, window.window, window.destination_id, window.max_fee))
    want_features = record_features and hasattr(policy, "features")
    ep: list[EpisodeTransition] = []
    s = S0
    for x, tau in zip(window.weights.tolist(), window.inter_arrivals.tolist()):
        forced = s.item_count == 0 or s.load >= cm.capacity
        feats = policy.features(s, stats) if want_features and not forced else None
        if s.item_count == 0:
            a = Action.WAIT
        elif s.load >= cm.capacity:
            a = Action.STOP
        else:
            p = policy.stop_probability(s, stats)
            if p >= 1.0:
                a = Action.STOP
            elif p <= 0.0:
                a = Action.WAIT
            else:
                a = Action.STOP if rng.random() < p else Action.WAIT
        if a == Action.WAIT:
            r = -wait_cost_rate(s, cm) * tau
            nxt = SystemState(s.load + x, s.item_count + 1, s.total_delay + s.item_count * tau, s.clock + tau)
        else:
            r = -wait_cost_rate(S0, cm) * tau - stop_cost(s, cm)
            nxt = SystemState(x, 1, 0.0, s.clock + tau)
        ep.append(EpisodeTransition(s, a, r, nxt, forced, feats))
        point = TimedDataPoint(x, tau)
        stats.update(point)
        policy.observe(point, nxt.clock)
        s = nxt
    return ep


def sample_episode(policy: Policy, cfg: EnvConfig, rng, **kw) -> tuple[OrderSequence, list[EpisodeTransition]]:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    window = sample_window(cfg.dataset, cfg.episode_window, rng)
    cm = resolve_cost_model(cfg.cost_models, window.destination_id)
    return window, get_episode(policy, window, cm, rng, **kw)


def episode_return(episode: Sequence[EpisodeTransition], gamma: float = 1.0) -> float:
    if gamma == 1.0:
        return float(sum(t.reward for t in episode))
    return float(sum(gamma**i * t.reward for i, t in enumerate(episode)))


def write_transition_log(
    episodes: Sequence[Sequence[EpisodeTransition]], path: str | Path, cfg: EnvConfig | None = None
) -> None:
    """One JSON header line, then ``load n d t action reward load' n' d' t'`` per transition.

    Episodes are separated by blank lines.
    """
    header = {"format": "regenstop-transitions", "version": 1}
    if cfg is not None:
        header.update(episode_window=cfg.episode_window, gamma=cfg.gamma, seed=cfg.seed, sequences=len(cfg.dataset))
    lines = [json.dumps(header)]
    for ep in episodes:
        for t in ep:
            s, n = t.state, t.next_state
            lines.append(
                f"{s.load!r} {s.item_count} {s.total_delay!r} {s.clock!r} {t.action} {t.reward!r} "
                f"{n.load!r} {n.item_count} {n.total_delay!r} {n.clock!r}"
            )
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n")


def read_transition_log(path: str | Path) -> tuple[dict, list[list[EpisodeTransition]]]:
    text = Path(path).read_text().split("\n")
    header = json.loads(text[0])
    episodes: list[list[EpisodeTransition]] = []
    cur: list[EpisodeTransition] = []
    for line in text[1:]:
        if not line.strip():
            if cur:
                episodes.append(cur)
                cur = []
            continue
        f = line.split()
        s = SystemState(float(f[0]), int(f[1]), float(f[2]), float(f[3]))
        n = SystemState(float(f[6]), int(f[7]), float(f[8]), float(f[9]))
        cur.append(EpisodeTransition(s, Action.STOP if f[4] == "stop" else Action.WAIT, float(f[5]), n))
    if cur:
        episodes.append(cur)
    return header, episodes


# --------------------------------------------------------------------------
# policy gradient


@dataclass(frozen=True)
class PGConfig:
    updates: int = 300
    batch: int = 16
    step_size: float = 0.01
    seed: int = 0
    normalize: bool = True
    reward_to_go: bool = True


def policy_gradient_estimate(
    policy: NeuralPolicy,
    episodes: Sequence[Sequence[EpisodeTransition]],
    normalize: bool = False,
    reward_to_go: bool = False,
) -> list[np.ndarray]:
    """Likelihood-ratio gradient of the expected return.

    Each episode's return is centred on the mean return of the *other*
    episodes in the batch, which keeps the estimate unbiased.  With
    ``reward_to_go`` every step is scored by the rewards from that step on,
    centred on the leave-one-out mean reward-to-go at the same step index.
    """
    n = len(episodes)
    if n < 2:
        raise ValueError("need at least two episodes for the mean-return baseline")
    if reward_to_go:
        horizon = max(len(ep) for ep in episodes)
        togo = np.zeros((n, horizon))
        for i, ep in enumerate(episodes):
            if ep:
                togo[i, : len(ep)] = np.cumsum([t.reward for t in ep][::-1])[::-1]
        baseline = (togo.sum(axis=0)[None, :] - togo) / (n - 1)
        adv = togo - baseline
    else:
        returns = np.array([episode_return(ep) for ep in episodes])
        adv = (returns - (returns.sum() - returns) / (n - 1))[:, None]
    if normalize:
        sd = adv.std()
        adv = adv / sd if sd > 0 else np.zeros_like(adv)
    feats, acts, weights = [], [], []
    for i, ep in enumerate(episodes):
        for j, t in enumerate(ep):
            if t.forced:
                continue
            feats.append(t.features)
            acts.append(int(t.action))
            weights.append(adv[i, j if reward_to_go else 0] / n)
    if not feats:
        return [np.zeros_like(p) for p in policy.params]
    return policy.log_prob_gradients(np.array(feats, float), acts, weights)


def train_policy_gradient(
    cfg: EnvConfig, policy: NeuralPolicy, config: PGConfig = PGConfig()
) -> tuple[NeuralPolicy, list[float]]:
    """Episodic REINFORCE with a mean-return baseline; updates ``policy`` in place.

    Returns the per-update mean training return.
    """
    rng = np.random.default_rng(config.seed)
    greedy = policy.greedy
    policy.greedy = False
    trace: list[float] = []
    try:
        for update in range(config.updates):
            episodes = [
                sample_episode(policy, cfg, rng, record_features=True)[1] for _ in range(config.batch)
            ]
            trace.append(float(np.mean([episode_return(ep) for ep in episodes])))
            grads = policy_gradient_estimate(policy, episodes, config.normalize, config.reward_to_go)
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(
                    f"non-finite policy gradient at update {update}; mean return {trace[-1]}"
                )
            if config.step_size:
                for p, g in zip(policy.params, grads):
                    p += config.step_size * g
    finally:
        policy.greedy = greedy
    return policy, trace
