"""Benchmark configuration: synthetic cities, alpha ladder and approach settings.

Configs are YAML files with a ``schema`` key.  ``default_config()`` returns the
built-in six-city benchmark; ``stationary`` drops every regime switch.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..arrival import GeneratorSpec
from ..core import CostModel, FeeCurve

SCHEMA = "regenstop-bench/1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CitySpec:
    name: str
    fee_curve: FeeCurve
    generator: GeneratorSpec

    @property
    def switch_time(self) -> float | None:
        sched = self.generator.regime_schedule
        return sched[0][0] if sched else None

    def cost_model(self, alpha: float, capacity: float, max_items: int) -> CostModel:
        return CostModel(alpha, self.fee_curve, capacity, max_items)


@dataclass
class BenchmarkConfig:
    cities: dict[str, CitySpec]
    alphas: list[float]
    days: float = 270.0
    train_fraction: float = 2.0 / 3.0
    capacity: float = 22000.0
    seed: int = 0
    seeds: int = 10
    model_based: dict = field(default_factory=dict)
    imitation: dict = field(default_factory=dict)
    policy_gradient: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def split_time(self) -> float:
        return self.days * self.train_fraction

    def cost_models(self, alpha: float, max_items: int | None = None) -> dict[str, CostModel]:
        items = max_items or int(self.model_based.get("max_items", 100))
        return {name: c.cost_model(alpha, self.capacity, items) for name, c in self.cities.items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def _fee(points):
    return FeeCurve(tuple((float(x), float(y)) for x, y in points))


def _lognormal(mean_kg: float, sigma: float) -> dict:
    return {"law": "lognormal", "mu": float(np.log(mean_kg) - sigma**2 / 2), "sigma": sigma}


DEFAULT = {
    "schema": SCHEMA,
    "seed": 0,
    "seeds": 10,
    "days": 270,
    "train_fraction": 0.6666666666666666,
    "capacity": 22000,
    "alphas": [float(a) for a in np.logspace(0, 3, 7)],
    "cities": {
        "alpha-city": {
            "fee_curve": [[0, 300], [5000, 900], [11000, 1300], [22000, 1800]],
            "weight": _lognormal(1500, 0.8),
            "inter_arrival": {"law": "exponential", "rate": 12.0},
        },
        "bravo-city": {
            "fee_curve": [[0, 250], [5000, 700], [11000, 1000], [22000, 1400]],
            "weight": _lognormal(2500, 0.6),
            "inter_arrival": {"law": "exponential", "rate": 3.0},
        },
        "charlie-city": {
            "fee_curve": [[0, 400], [8000, 1500], [22000, 2400]],
            "weight": {
                "law": "mixture",
                "components": [_lognormal(600, 0.5), _lognormal(4000, 0.4)],
                "weights": [0.7, 0.3],
            },
            "inter_arrival": {"law": "exponential", "rate": 6.0},
        },
        "delta-city": {
            "fee_curve": [[0, 150], [4000, 450], [12000, 700], [22000, 850]],
            "weight": {"law": "uniform", "low": 200, "high": 4000},
            "inter_arrival": {"law": "exponential", "rate": 1.5},
        },
        "echo-city": {
            "fee_curve": [[0, 350], [6000, 1100], [22000, 2000]],
            "weight": _lognormal(800, 0.7),
            "inter_arrival": {"law": "gamma", "shape": 0.5, "scale": 0.25},
        },
        "foxtrot-city": {
            "fee_curve": [[0, 300], [5000, 800], [11000, 1150], [22000, 1500]],
            "weight": _lognormal(3000, 0.5),
            "inter_arrival": {"law": "exponential", "rate": 2.0},
            "regimes": [
                {
                    "at": 225,
                    "weight": _lognormal(1000, 0.5),
                    "inter_arrival": {"law": "exponential", "rate": 12.0},
                }
            ],
        },
    },
    "model_based": {"bins": 50, "max_items": 100, "resolve_every": 10, "lookback": None, "window_lookback": 14.0},
    "imitation": {
        "outer_iterations": 5,
        "sequences_per_iteration": 50,
        "episode_window": 30.0,
        "validation_windows": 20,
        "learning_rate": 0.05,
        "l2": 1e-4,
        "epochs": 30,
        "batch_size": 64,
        "balance_classes": False,
    },
    "policy_gradient": {"updates": 300, "batch": 16, "step_size": 0.01, "episode_window": 30.0},
}


def default_raw(stationary: bool = False) -> dict:
    raw = copy.deepcopy(DEFAULT)
    if stationary:
        for city in raw["cities"].values():
            city.pop("regimes", None)
    return raw


def from_dict(raw: dict) -> BenchmarkConfig:
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"unsupported config schema {raw.get('schema')!r}; expected {SCHEMA!r}")
    alphas = [float(a) for a in raw.get("alphas") or []]
    if not alphas:
        raise ConfigError("alpha ladder is empty")
    if any(a <= 0 for a in alphas) or alphas != sorted(alphas):
        raise ConfigError("alpha values must be positive and sorted")
    frac = float(raw.get("train_fraction", 2 / 3))
    if not 0 < frac < 1:
        raise ConfigError(f"train_fraction {frac} outside (0, 1)")
    if not raw.get("cities"):
        raise ConfigError("no cities configured")
    cities = {}
    for name, c in raw["cities"].items():
        if "fee_curve" not in c:
            raise ConfigError(f"city {name!r} has no fee curve")
        try:
            fee = _fee(c["fee_curve"])
            gen = GeneratorSpec.from_config({k: v for k, v in c.items() if k != "fee_curve"})
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"city {name!r}: {e}") from e
        cities[str(name)] = CitySpec(str(name), fee, gen)
    return BenchmarkConfig(
        cities=cities,
        alphas=alphas,
        days=float(raw.get("days", 270)),
        train_fraction=frac,
        capacity=float(raw.get("capacity", 22000)),
        seed=int(raw.get("seed", 0)),
        seeds=int(raw.get("seeds", 10)),
        model_based={**DEFAULT["model_based"], **(raw.get("model_based") or {})},
        imitation={**DEFAULT["imitation"], **(raw.get("imitation") or {})},
        policy_gradient={**DEFAULT["policy_gradient"], **(raw.get("policy_gradient") or {})},
        raw=copy.deepcopy(raw),
    )


def default_config(stationary: bool = False) -> BenchmarkConfig:
    return from_dict(default_raw(stationary))


def load_config(path: str | Path | None) -> BenchmarkConfig:
    if path is None:
        return default_config()
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return from_dict(raw)


def save_config(cfg: BenchmarkConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_yaml())
