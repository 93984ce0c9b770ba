"""Helpers shared by several test modules."""

import numpy as np

from regenstop.arrival import ArrivalModel, OrderSequence, uniform_grid
from regenstop.core import Action, CostModel, FeeCurve, simulate
from regenstop.nn import FeatureScaling, NeuralPolicy


def random_batch(rng, size=64):
    X = np.column_stack(
        [
            rng.uniform(0, 22000, size),
            rng.integers(0, 50, size),
            rng.uniform(0, 100, size),
            rng.uniform(500, 2500, size),
            rng.uniform(0.1, 2.0, size),
            rng.uniform(200, 4000, size),
        ]
    )
    return X, rng.integers(0, 2, size)


def _stacked_losses(policy: NeuralPolicy, x, y, l2, thetas):
    """Loss and hidden sign patterns for each row of ``thetas`` in one batched pass."""
    shapes = [p.shape for p in policy.params]
    parts, at = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        parts.append(thetas[:, at : at + size].reshape((len(thetas),) + shape))
        at += size
    W1, b1, W2, b2, W3, b3 = parts
    act = (lambda z: np.maximum(z, 0.0)) if policy.activation == "relu" else np.tanh
    z1 = np.matmul(x[None], W1) + b1[:, None, :]
    z2 = np.matmul(act(z1), W2) + b2[:, None, :]
    logits = np.matmul(act(z2), W3) + b3[:, None, :]
    z = logits - logits.max(axis=2, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=2, keepdims=True))
    data = -logp[:, np.arange(len(y)), y].mean(axis=1)
    reg = l2 * sum((W * W).sum(axis=(1, 2)) for W in (W1, W2, W3))
    return data + reg, (z1 > 0, z2 > 0)


def gradient_check(policy: NeuralPolicy, X, y, l2=1e-3, h=1e-5, floor=1e-6, chunk=256):
    """Central differences over every parameter.

    Returns ``(max relative error, kink_crossed)``; ``kink_crossed`` flags a
    perturbation that flipped a relu activation, where differences are invalid.
    """
    _, grads = policy.loss_and_gradients(X, y, l2)
    analytic = np.concatenate([g.ravel() for g in grads])
    theta = policy.flat()
    x = policy.normalize(X)
    y = np.asarray(y, int)
    _, (p1, p2) = _stacked_losses(policy, x, y, l2, theta[None])
    numeric = np.empty_like(theta)
    crossed = False
    for lo in range(0, theta.size, chunk):
        idx = np.arange(lo, min(lo + chunk, theta.size))
        step = np.zeros((len(idx), theta.size))
        step[np.arange(len(idx)), idx] = h
        plus, (q1, q2) = _stacked_losses(policy, x, y, l2, theta + step)
        minus, (r1, r2) = _stacked_losses(policy, x, y, l2, theta - step)
        if policy.activation == "relu":
            crossed |= any(np.any(a != b) for a, b in ((q1, p1), (r1, p1), (q2, p2), (r2, p2)))
        numeric[idx] = (plus - minus) / (2 * h)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(rel.max()), crossed


def pair_instance(days=400):
    """Unit orders once a day where shipping every second order is optimal."""
    cm = CostModel(5.0, FeeCurve(((0, 10), (100, 110))), capacity=100.0, max_items=50)
    seq = OrderSequence(np.ones(days), np.ones(days), float(days), "d")
    scaling = FeatureScaling(load=3, item_count=3, total_delay=3, max_fee=100, mean_tau=1, mean_weight=1)
    return seq, cm, scaling


def pair_fraction(policy, seq, cm, days=100):
    """Share of shipments in a replay that leave with exactly two orders."""
    res = simulate(policy, seq.slice_time(0, days), None, cm, record=True)
    sizes = [r.state.item_count for r in res.trajectory if r.action == Action.STOP]
    return float(np.mean(np.array(sizes) == 2)) if sizes else 0.0


def random_instance(rng, m_max=9):
    m = int(rng.integers(0, m_max + 1))
    w = rng.uniform(100, 6000, m)
    t = rng.exponential(1.0, m)
    seq = OrderSequence(w, t, float(t.sum()) + float(rng.uniform(0, 3)))
    b1, b2 = np.sort(rng.uniform(0, 10000, 2))
    s = np.sort(rng.uniform(0, 0.2, 3))[::-1]
    f0 = float(rng.uniform(10, 300))
    pts = [(0.0, f0), (b1, f0 + s[0] * b1), (b2, f0 + s[0] * b1 + s[1] * (b2 - b1))]
    pts.append((10000.0, pts[-1][1] + s[2] * (10000.0 - b2)))
    alpha = float(rng.choice([0.0, 0.1, 1.0, 10.0]))
    return seq, CostModel(alpha, FeeCurve(tuple(pts)), capacity=float(rng.uniform(4000, 12000)))


def random_model(rng, bins=8, capacity=1000.0):
    grid = uniform_grid(capacity, bins)
    p = rng.dirichlet(np.ones(bins) * 0.7)
    p[np.argmax(p)] += 1.0 - p.sum()
    return ArrivalModel(grid, p, float(rng.uniform(0.2, 2.0)))


def random_curve(rng, capacity=1000.0):
    xs = np.sort(rng.uniform(0, capacity, 2))
    slopes = np.sort(rng.uniform(0.0, 1.0, 3))[::-1]
    pts = [(0.0, float(rng.uniform(5, 50)))]
    for x, s in zip(list(xs) + [capacity], slopes):
        pts.append((float(x), pts[-1][1] + s * (float(x) - pts[-1][0])))
    return FeeCurve(tuple(pts))
