"""Order arrival streams: synthetic generators, grid estimation and file I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import TimedDataPoint


@dataclass
class OrderSequence:
    """A timed order stream for one destination over a window of ``window`` days.

    ``inter_arrivals[j]`` is the gap before order ``j``; the first gap is
    measured from the window start.
    """

    weights: np.ndarray
    inter_arrivals: np.ndarray
    window: float
    destination_id: str = ""
    max_fee: float | None = None
    fee_ref: str = ""

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.inter_arrivals = np.asarray(self.inter_arrivals, dtype=float).reshape(-1)
        if self.weights.shape != self.inter_arrivals.shape:
            raise ValueError("weights and inter_arrivals must have equal length")
        if np.any(self.weights <= 0):
            raise ValueError("order weights must be positive")
        if np.any(self.inter_arrivals < 0):
            raise ValueError("inter-arrival times must be nonnegative")
        total = float(self.inter_arrivals.sum())
        if total > self.window * (1 + 1e-12) + 1e-12:
            raise ValueError(f"arrivals span {total} days, beyond window {self.window}")

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def points(self) -> list[TimedDataPoint]:
        return [TimedDataPoint(float(x), float(t)) for x, t in zip(self.weights, self.inter_arrivals)]

    @property
    def arrival_times(self) -> np.ndarray:
        return np.cumsum(self.inter_arrivals)

    def slice_time(self, start: float, end: float, destination_id: str | None = None) -> OrderSequence:
        """Orders arriving in ``(start, end]``, re-timed to begin at ``start``.

        The interval is closed at zero, so consecutive slices partition the
        sequence even when arrivals land exactly on a cut.
        """
        times = self.arrival_times
        mask = ((times > start) | (start <= 0.0) & (times >= start)) & (times <= end)
        idx = np.flatnonzero(mask)
        taus = np.diff(np.concatenate([[start], times[idx]]))
        taus = np.maximum(taus, 0.0)
        return OrderSequence(
            self.weights[idx].copy(),
            taus,
            end - start,
            self.destination_id if destination_id is None else destination_id,
            self.max_fee,
            self.fee_ref,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, OrderSequence):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.inter_arrivals, other.inter_arrivals)
            and self.window == other.window
            and self.destination_id == other.destination_id
            and self.max_fee == other.max_fee
            and self.fee_ref == other.fee_ref
        )


# --------------------------------------------------------------------------
# probability laws


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not (0 <= self.low < self.high):
            raise ValueError("uniform law needs 0 <= low < high")

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    def mean(self):
        return 0.5 * (self.low + self.high)

    def cdf(self, x):
        return np.clip((np.asarray(x, float) - self.low) / (self.high - self.low), 0.0, 1.0)


@dataclass(frozen=True)
class LogNormal:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("lognormal sigma must be positive")

    def sample(self, rng, size):
        return rng.lognormal(self.mu, self.sigma, size)

    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def cdf(self, x):
        x = np.asarray(x, float)
        out = np.zeros_like(x)
        pos = x > 0
        z = (np.log(x[pos]) - self.mu) / (self.sigma * math.sqrt(2.0))
        out[pos] = 0.5 * (1.0 + np.vectorize(math.erf)(z))
        return out


@dataclass(frozen=True)
class Discrete:
    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("discrete law needs matching values and probs")
        if any(v <= 0 for v in self.values):
            raise ValueError("discrete weights must be positive")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("discrete probabilities must be nonnegative and sum to 1")

    def sample(self, rng, size):
        return rng.choice(np.array(self.values), size=size, p=np.array(self.probs))

    def mean(self):
        return float(np.dot(self.values, self.probs))

    def cdf(self, x):
        x = np.asarray(x, float)
        v = np.array(self.values)
        p = np.array(self.probs)
        return (p[None, :] * (v[None, :] <= x.reshape(-1, 1))).sum(axis=1).reshape(x.shape)


@dataclass(frozen=True)
class Mixture:
    components: tuple
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.components) != len(self.weights) or not self.components:
            raise ValueError("mixture needs matching components and weights")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")

    def sample(self, rng, size):
        which = rng.choice(len(self.components), size=size, p=np.array(self.weights, float))
        out = np.empty(size)
        for k, comp in enumerate(self.components):
            sel = which == k
            out[sel] = comp.sample(rng, int(sel.sum()))
        return out

    def mean(self):
        return sum(w * c.mean() for w, c in zip(self.weights, self.components))

    def cdf(self, x):
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be positive")

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)

    def mean(self):
        return 1.0 / self.rate


@dataclass(frozen=True)
class Deterministic:
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("deterministic inter-arrival must be positive")

    def sample(self, rng, size):
        return np.full(size, self.tau)

    def mean(self):
        return self.tau


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma shape and scale must be positive")

    def sample(self, rng, size):
        return rng.gamma(self.shape, self.scale, size)

    def mean(self):
        return self.shape * self.scale


_WEIGHT_LAWS = {"uniform": Uniform, "lognormal": LogNormal, "discrete": Discrete}
_TAU_LAWS = {"exponential": Exponential, "deterministic": Deterministic, "gamma": Gamma}


def law_from_config(cfg: dict, kind: str = "weight"):
    """Build a law from ``{"law": name, ...params}`` (mixtures nest components)."""
    cfg = dict(cfg)
    name = cfg.pop("law")
    if kind == "weight" and name == "mixture":
        comps = tuple(law_from_config(c, "weight") for c in cfg["components"])
        return Mixture(comps, tuple(float(w) for w in cfg["weights"]))
    table = _WEIGHT_LAWS if kind == "weight" else _TAU_LAWS
    if name not in table:
        raise ValueError(f"unknown {kind} law {name!r}")
    if name == "discrete":
        return Discrete(tuple(cfg["values"]), tuple(cfg["probs"]))
    return table[name](**{k: float(v) for k, v in cfg.items()})


def law_to_config(law) -> dict:
    if isinstance(law, Mixture):
        return {
            "law": "mixture",
            "components": [law_to_config(c) for c in law.components],
            "weights": list(law.weights),
        }
    for table in (_WEIGHT_LAWS, _TAU_LAWS):
        for name, cls in table.items():
            if type(law) is cls:
                d = {"law": name}
                d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in law.__dict__.items()})
                return d
    raise TypeError(f"unsupported law {law!r}")


@dataclass(frozen=True)
class GeneratorSpec:
    """Weight and inter-arrival laws, optionally switching at given times.

    ``regime_schedule`` holds ``(switch_time, GeneratorSpec)`` pairs; the
    regime in force when a gap starts draws that gap and its order.
    """

    weight_law: object
    inter_arrival_law: object
    regime_schedule: tuple = ()

    def __post_init__(self):
        times = [t for t, _ in self.regime_schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("regime switch times must be strictly increasing")
        if any(spec.regime_schedule for _, spec in self.regime_schedule):
            raise ValueError("nested regime schedules are not supported")

    def regime_at(self, t: float) -> GeneratorSpec:
        active = self
        for switch, spec in self.regime_schedule:
            if t >= switch:
                active = spec
        return active

    def to_config(self) -> dict:
        d = {
            "weight": law_to_config(self.weight_law),
            "inter_arrival": law_to_config(self.inter_arrival_law),
        }
        if self.regime_schedule:
            d["regimes"] = [{"at": t, **spec.to_config()} for t, spec in self.regime_schedule]
        return d

    @classmethod
    def from_config(cls, cfg: dict) -> GeneratorSpec:
        regimes = tuple(
            (float(r["at"]), cls.from_config({k: v for k, v in r.items() if k != "at"}))
            for r in cfg.get("regimes", ())
        )
        return cls(
            law_from_config(cfg["weight"], "weight"),
            law_from_config(cfg["inter_arrival"], "tau"),
            regimes,
        )


def generate(
    spec: GeneratorSpec,
    window: float,
    seed=None,
    *,
    destination_id: str = "",
    max_fee: float | None = None,
    chunk: int = 256,
) -> OrderSequence:
    """Draw orders until the clock passes ``window``; the overshooting order is dropped."""
    if not window > 0:
        raise ValueError("window must be positive")
    rng = np.random.default_rng(seed)
    switches = [t for t, _ in spec.regime_schedule] + [math.inf]
    weights: list[np.ndarray] = []
    taus: list[np.ndarray] = []
    clock = 0.0
    while True:
        regime = spec.regime_at(clock)
        next_switch = min(t for t in switches if t > clock)
        gaps = regime.inter_arrival_law.sample(rng, chunk)
        w = regime.weight_law.sample(rng, chunk)
        ends = clock + np.cumsum(gaps)
        starts = ends - gaps
        # keep gaps that start before the next regime switch
        keep = np.flatnonzero(starts >= next_switch)
        n = keep[0] if keep.size else chunk
        over = np.flatnonzero(ends[:n] > window)
        if over.size:
            n = over[0]
            weights.append(w[:n])
            taus.append(gaps[:n])
            break
        weights.append(w[:n])
        taus.append(gaps[:n])
        clock = float(ends[n - 1]) if n else clock
    return OrderSequence(
        np.concatenate(weights) if weights else np.zeros(0),
        np.concatenate(taus) if taus else np.zeros(0),
        window,
        destination_id,
        max_fee,
    )


# --------------------------------------------------------------------------
# estimation


def uniform_grid(capacity: float, bins: int = 50) -> np.ndarray:
    return np.linspace(0.0, capacity, bins + 1)


@dataclass(frozen=True)
class ArrivalModel:
    """Estimated arrival law: binned weight histogram and mean inter-arrival."""

    weight_grid: np.ndarray
    weight_probs: np.ndarray
    mean_inter_arrival: float

    def __post_init__(self):
        grid = np.asarray(self.weight_grid, float)
        probs = np.asarray(self.weight_probs, float)
        object.__setattr__(self, "weight_grid", grid)
        object.__setattr__(self, "weight_probs", probs)
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("weight grid must be strictly increasing bin edges")
        if probs.shape != (len(grid) - 1,):
            raise ValueError("need one probability per bin")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("bin probabilities must be nonnegative and sum to 1")
        if not self.mean_inter_arrival > 0:
            raise ValueError("mean inter-arrival time must be positive")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.weight_grid[:-1] + self.weight_grid[1:])

    def mean_weight(self) -> float:
        return float(self.centers @ self.weight_probs)

    def sample(self, n: int, seed=None, inter_arrival_law=None) -> OrderSequence:
        """Draw ``n`` orders from bin centers with exponential gaps by default."""
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(self.weight_probs), size=n, p=self.weight_probs)
        law = inter_arrival_law or Exponential(1.0 / self.mean_inter_arrival)
        taus = law.sample(rng, n)
        return OrderSequence(self.centers[idx], taus, float(taus.sum()))


def bin_weights(weights: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Bin index per weight; weights beyond the grid fall into the end bins."""
    idx = np.searchsorted(grid, weights, side="right") - 1
    return np.clip(idx, 0, len(grid) - 2)


def estimate(sequences: Sequence[OrderSequence], grid) -> ArrivalModel:
    """Maximum-likelihood histogram over ``grid`` plus the mean inter-arrival."""
    grid = np.asarray(grid, float)
    seqs = [s for s in sequences if len(s)]
    if not seqs:
        raise ValueError("cannot estimate an arrival model from zero arrivals")
    w = np.concatenate([s.weights for s in seqs])
    t = np.concatenate([s.inter_arrivals for s in seqs])
    return _fit(w, t, grid)


def _fit(weights: np.ndarray, taus: np.ndarray, grid: np.ndarray) -> ArrivalModel:
    counts = np.bincount(bin_weights(weights, grid), minlength=len(grid) - 1).astype(float)
    probs = counts / counts.sum()
    # exact renormalisation keeps the sum-to-one invariant at 1e-12
    probs[np.argmax(probs)] += 1.0 - probs.sum()
    return ArrivalModel(grid, probs, float(np.mean(taus)))


def windowed_estimate(
    sequence: OrderSequence,
    now: float,
    lookback: float,
    grid,
    min_count: int = 10,
) -> ArrivalModel:
    """Estimate from arrivals in ``[now - lookback, now]``.

    Falls back to all arrivals up to ``now`` when fewer than ``min_count``
    orders fall inside the lookback window.
    """
    grid = np.asarray(grid, float)
    times = sequence.arrival_times
    upto = times <= now
    recent = upto & (times >= now - lookback)
    sel = recent if recent.sum() >= min_count else upto
    if not sel.any():
        raise ValueError("cannot estimate an arrival model from zero arrivals")
    return _fit(sequence.weights[sel], sequence.inter_arrivals[sel], grid)


# --------------------------------------------------------------------------
# sequence files

_MAGIC = "# regenstop-sequences v1"


class SequenceFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def save_sequences(sequences: Sequence[OrderSequence], path: str | Path) -> None:
    """Write sequences to the line-oriented text format.

    Each block starts with ``[sequence]`` and ``key = value`` header lines
    (destination, window, max_fee, fee_curve), followed by one
    ``inter_arrival_days weight_kg`` record per order.
    """
    lines = [_MAGIC]
    for s in sequences:
        lines.append("[sequence]")
        lines.append(f"destination = {s.destination_id}")
        lines.append(f"window = {s.window!r}")
        lines.append(f"max_fee = {'' if s.max_fee is None else repr(float(s.max_fee))}")
        lines.append(f"fee_curve = {s.fee_ref}")
        for tau, w in zip(s.inter_arrivals, s.weights):
            lines.append(f"{float(tau)!r} {float(w)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequences(path: str | Path) -> list[OrderSequence]:
    out: list[OrderSequence] = []
    header: dict | None = None
    rows: list[tuple[float, float]] = []
    start_line = 0

    def flush():
        if header is None:
            return
        if "window" not in header:
            raise SequenceFormatError(path, start_line, "sequence block lacks a window")
        taus = np.array([r[0] for r in rows])
        weights = np.array([r[1] for r in rows])
        try:
            out.append(
                OrderSequence(
                    weights,
                    taus,
                    float(header["window"]),
                    header.get("destination", ""),
                    float(header["max_fee"]) if header.get("max_fee") else None,
                    header.get("fee_curve", ""),
                )
            )
        except ValueError as exc:
            raise SequenceFormatError(path, start_line, str(exc)) from exc

    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line == "[sequence]":
                flush()
                header, rows, start_line = {}, [], lineno
                continue
            if header is None:
                raise SequenceFormatError(path, lineno, "record before any [sequence] header")
            if "=" in line:
                key, _, value = line.partition("=")
                header[key.strip()] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 2:
                raise SequenceFormatError(path, lineno, f"expected 2 fields, got {len(parts)}")
            try:
                tau, w = float(parts[0]), float(parts[1])
            except ValueError:
                raise SequenceFormatError(path, lineno, f"unparseable record {line!r}") from None
            if not w > 0:
                raise SequenceFormatError(path, lineno, f"nonpositive weight {w}")
            if not tau >= 0:
                raise SequenceFormatError(path, lineno, f"negative inter-arrival {tau}")
            rows.append((tau, w))
    flush()
    return out
