"""Small feed-forward stopping policy (6 -> 32 -> 32 -> 2) written in numpy.

Inputs are the augmented state ``(load, n, delay, f(L), mean_tau, mean_weight)``
divided by fixed scale constants.  The two output logits are ``(wait, stop)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, astuple, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import Action, EpisodeContext, EpisodeStats, Policy, SystemState

FORMAT_VERSION = 1
LAYER_SIZES = (6, 32, 32, 2)


class TrainingDivergedError(FloatingPointError):
    pass


class PolicyFeatures(NamedTuple):
    load: float
    item_count: float
    total_delay: float
    max_fee: float
    mean_tau: float
    mean_weight: float


FEATURE_NAMES = PolicyFeatures._fields


@dataclass(frozen=True)
class FeatureScaling:
    load: float = 22_000.0
    item_count: float = 50.0
    total_delay: float = 100.0
    max_fee: float = 2_000.0
    mean_tau: float = 1.0
    mean_weight: float = 1_000.0

    def vector(self) -> np.ndarray:
        return np.array(astuple(self))


def featurize(
    state: SystemState,
    stats: EpisodeStats,
    max_fee: float,
    priors: tuple[float, float] | None = None,
) -> PolicyFeatures:
    """Augmented features; the running means fall back to ``priors`` before any arrival."""
    if stats.count:
        tau, weight = stats.sum_tau / stats.count, stats.sum_weight / stats.count
    elif priors is not None:
        tau, weight = priors
    else:
        tau, weight = stats.prior_tau, stats.prior_weight
    return PolicyFeatures(
        float(state.load), float(state.item_count), float(state.total_delay), float(max_fee), tau, weight
    )


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(float)


def _tanh_grad(z, a):
    return 1.0 - a * a


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class NeuralPolicy(Policy):
    """MLP stopping policy; also usable directly as a simulator policy.

    ``greedy`` switches :meth:`stop_probability` between sampling and argmax.
    """

    name = "neural"

    def __init__(
        self,
        params: list[np.ndarray] | None = None,
        *,
        activation: str = "relu",
        scaling: FeatureScaling | None = None,
        priors: tuple[float, float] = (1.0, 1000.0),
        seed=None,
        greedy: bool = True,
    ):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.scaling = scaling or FeatureScaling()
        self.priors = (float(priors[0]), float(priors[1]))
        self.greedy = greedy
        self.params = params if params is not None else init_params(seed)
        self._max_fee = 0.0

    # ---- parameters

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, theta: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = theta[i : i + p.size].reshape(p.shape)
            i += p.size

    def copy(self) -> NeuralPolicy:
        return NeuralPolicy(
            [p.copy() for p in self.params],
            activation=self.activation,
            scaling=self.scaling,
            priors=self.priors,
            greedy=self.greedy,
        )

    # ---- inference

    def normalize(self, features) -> np.ndarray:
        return np.atleast_2d(np.asarray(features, float)) / self.scaling.vector()

    def _forward(self, x: np.ndarray):
        act, _ = _ACTIVATIONS[self.activation]
        W1, b1, W2, b2, W3, b3 = self.params
        z1 = x @ W1 + b1
        a1 = act(z1)
        z2 = a1 @ W2 + b2
        a2 = act(z2)
        return a2 @ W3 + b3, (x, z1, a1, z2, a2)

    def logits(self, features) -> np.ndarray:
        return self._forward(self.normalize(features))[0]

    def probabilities(self, features) -> np.ndarray:
        return softmax(self.logits(features))

    def _backward(self, cache, dlogits: np.ndarray) -> list[np.ndarray]:
        _, dact = _ACTIVATIONS[self.activation]
        x, z1, a1, z2, a2 = cache
        W1, b1, W2, b2, W3, b3 = self.params
        gW3 = a2.T @ dlogits
        gb3 = dlogits.sum(axis=0)
        d2 = (dlogits @ W3.T) * dact(z2, a2)
        gW2 = a1.T @ d2
        gb2 = d2.sum(axis=0)
        d1 = (d2 @ W2.T) * dact(z1, a1)
        gW1 = x.T @ d1
        gb1 = d1.sum(axis=0)
        return [gW1, gb1, gW2, gb2, gW3, gb3]

    def loss_and_gradients(
        self,
        features,
        labels,
        l2: float = 0.0,
        sample_weight: np.ndarray | None = None,
    ) -> tuple[float, list[np.ndarray]]:
        """Mean (optionally weighted) cross-entropy plus ``l2 * sum(W**2)``.

        Biases are not regularised.
        """
        x = self.normalize(features)
        y = np.asarray(labels, dtype=int)
        n = len(y)
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
        logits, cache = self._forward(x)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        ce = -(w * logp[np.arange(n), y]).sum() / n
        reg = l2 * sum(float((W * W).sum()) for W in self.params[0::2])
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), y] = 1.0
        dlogits = (probs - onehot) * w[:, None] / n
        grads = self._backward(cache, dlogits)
        for k in (0, 2, 4):
            grads[k] = grads[k] + 2.0 * l2 * self.params[k]
        return ce + reg, grads

    def loss(self, features, labels, l2: float = 0.0, sample_weight: np.ndarray | None = None) -> float:
        """Objective of :meth:`loss_and_gradients` without the backward pass."""
        y = np.asarray(labels, dtype=int)
        n = len(y)
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
        logits = self._forward(self.normalize(features))[0]
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        ce = -(w * logp[np.arange(n), y]).sum() / n
        return ce + l2 * sum(float((W * W).sum()) for W in self.params[0::2])

    def log_prob_gradients(self, features, actions, weights) -> list[np.ndarray]:
        """Gradient of ``sum_t weights[t] * log pi(actions[t] | features[t])``."""
        x = self.normalize(features)
        y = np.asarray(actions, dtype=int)
        n = len(y)
        logits, cache = self._forward(x)
        probs = softmax(logits)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), y] = 1.0
        dlogits = (onehot - probs) * np.asarray(weights, float)[:, None]
        return self._backward(cache, dlogits)

    # ---- Policy protocol

    def reset(self, context: EpisodeContext) -> None:
        self._max_fee = context.fee_at_capacity

    def features(self, state: SystemState, stats: EpisodeStats) -> PolicyFeatures:
        return featurize(state, stats, self._max_fee, self.priors)

    def stop_probability(self, state: SystemState, stats: EpisodeStats) -> float:
        logits = self.logits(self.features(state, stats))[0]
        if self.greedy:
            return 1.0 if logits[1] > logits[0] else 0.0
        return float(softmax(logits)[1])

    # ---- serialization

    def to_dict(self) -> dict:
        return {
            "format": "regenstop-policy",
            "version": FORMAT_VERSION,
            "layer_sizes": list(LAYER_SIZES),
            "activation": self.activation,
            "scaling": asdict(self.scaling),
            "priors": list(self.priors),
            "params": [p.tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NeuralPolicy:
        if d.get("format") != "regenstop-policy" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 regenstop policy file")
        if tuple(d["layer_sizes"]) != LAYER_SIZES:
            raise ValueError(f"unsupported layer sizes {d['layer_sizes']}")
        params = [np.array(p, dtype=np.float64) for p in d["params"]]
        return cls(
            params,
            activation=d["activation"],
            scaling=FeatureScaling(**d["scaling"]),
            priors=tuple(d["priors"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> NeuralPolicy:
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(seed=None, sizes: Sequence[int] = LAYER_SIZES, output_gain: float = 0.01) -> list[np.ndarray]:
    """Fan-in scaled uniform weights, zero biases.

    The output layer is shrunk by ``output_gain`` so a fresh policy starts
    close to a fair coin in every state.
    """
    rng = np.random.default_rng(seed)
    params = []
    last = len(sizes) - 2
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / fan_in) * (output_gain if layer == last else 1.0)
        params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def gradients(policy: NeuralPolicy, features, labels, l2: float = 0.0) -> list[np.ndarray]:
    return policy.loss_and_gradients(features, labels, l2)[1]


def act(
    policy: NeuralPolicy,
    features,
    mask: Sequence[Action] | None = None,
    rng=None,
    greedy: bool = False,
) -> Action:
    """Sample (or argmax) an action among those allowed by ``mask``."""
    probs = policy.probabilities(features)[0]
    allowed = np.ones(2, dtype=bool)
    if mask is not None:
        allowed[:] = False
        for a in mask:
            allowed[int(a)] = True
    if allowed.sum() == 1:
        return Action(int(np.flatnonzero(allowed)[0]))
    if greedy:
        return Action.STOP if probs[1] > probs[0] else Action.WAIT
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return Action.STOP if rng.random() < probs[1] else Action.WAIT


# --------------------------------------------------------------------------
# supervised training


@dataclass
class LabeledDataset:
    """Aggregated (features, expert action) pairs; append-only."""

    features: list[PolicyFeatures] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def add(self, features: PolicyFeatures, label: Action) -> None:
        self.features.append(features)
        self.labels.append(int(label))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.features, dtype=float).reshape(-1, 6), np.array(self.labels, dtype=int)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*FEATURE_NAMES, "action"])
            for f, y in zip(self.features, self.labels):
                w.writerow([*(repr(float(v)) for v in f), str(Action(y))])

    @classmethod
    def from_csv(cls, path: str | Path) -> LabeledDataset:
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.add(
                    PolicyFeatures(*(float(row[k]) for k in FEATURE_NAMES)),
                    Action.STOP if row["action"] == "stop" else Action.WAIT,
                )
        return out


@dataclass(frozen=True)
class SupervisedConfig:
    learning_rate: float = 0.05
    l2: float = 1e-4
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    balance_classes: bool = False


def train_supervised(
    policy: NeuralPolicy,
    data: LabeledDataset | tuple[np.ndarray, np.ndarray],
    config: SupervisedConfig = SupervisedConfig(),
) -> tuple[NeuralPolicy, list[float]]:
    """Mini-batch gradient descent on cross-entropy + l2, in place.

    Returns the policy and the full-data objective after every epoch.
    """
    X, y = data.arrays() if isinstance(data, LabeledDataset) else (np.asarray(data[0], float), np.asarray(data[1]))
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    weights = None
    if config.balance_classes:
        counts = np.bincount(y, minlength=2).astype(float)
        per_class = np.where(counts > 0, len(y) / (2.0 * np.maximum(counts, 1.0)), 0.0)
        weights = per_class[y]
    trace: list[float] = []
    n = len(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = policy.loss_and_gradients(
                X[idx], y[idx], config.l2, None if weights is None else weights[idx]
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss {loss} at epoch {epoch}, batch {start // config.batch_size}; "
                    f"learning_rate={config.learning_rate}, l2={config.l2}"
                )
            for p, g in zip(policy.params, grads):
                p -= config.learning_rate * g
        full, _ = policy.loss_and_gradients(X, y, config.l2, weights)
        if not np.isfinite(full):
            raise TrainingDivergedError(f"loss {full} after epoch {epoch}; learning_rate={config.learning_rate}")
        trace.append(float(full))
    return policy, trace


def accuracy(policy: NeuralPolicy, data: LabeledDataset) -> float:
    X, y = data.arrays()
    if len(y) == 0:
        return float("nan")
    pred = policy.logits(X).argmax(axis=1)
    return float((pred == y).mean())
