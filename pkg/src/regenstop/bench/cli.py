"""``regenstop`` command line: generate, train, evaluate, policy-grid, sweep.

Every command reads and writes inside one run directory (``--out``)::

    config.yaml  manifest.json  data/seed-00/<city>.seq
    policies/<approach>/alpha-<a>/seed-00.json  reports/...
    results.csv  latency.csv  grids/<approach>-alpha-<a>-<city>.csv
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..arrival import load_sequences, save_sequences
from ..nn import NeuralPolicy
from . import run
from .config import BenchmarkConfig, ConfigError, from_dict, load_config, save_config

log = logging.getLogger("regenstop")

RESULT_COLUMNS = (
    "approach",
    "alpha",
    "city",
    "seed",
    "total_cost",
    "shipping_cost",
    "delay_cost",
    "shipments",
    "delay_per_order",
)


class ArtifactError(FileNotFoundError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def alpha_tag(alpha: float) -> str:
    return f"alpha-{alpha:.6g}"


def seed_dir(out: Path, seed: int) -> Path:
    return out / "data" / f"seed-{seed:02d}"


def policy_path(out: Path, approach: str, alpha: float, seed: int) -> Path:
    return out / "policies" / approach / alpha_tag(alpha) / f"seed-{seed:02d}.json"


def write_csv(rows, path: Path, columns) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in columns})


# --------------------------------------------------------------------------
# manifest


def _read_manifest(out: Path) -> dict:
    p = out / "manifest.json"
    return json.loads(p.read_text()) if p.exists() else {}


def _write_manifest(out: Path, cfg: BenchmarkConfig, **updates) -> dict:
    m = _read_manifest(out)
    m.update(schema="regenstop-run/1", config_digest=cfg.digest(), config=cfg.raw)
    for k, v in updates.items():
        if isinstance(v, dict) and isinstance(m.get(k), dict):
            m[k].update(v)
        else:
            m[k] = v
    (out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")
    return m


def _seeds(args, cfg: BenchmarkConfig) -> list[int]:
    n = args.seeds if getattr(args, "seeds", None) is not None else cfg.seeds
    return list(range(n))


def _alphas(args, cfg: BenchmarkConfig) -> list[float]:
    chosen = getattr(args, "alpha", None)
    if not chosen:
        return list(cfg.alphas)
    out = []
    for a in chosen:
        match = [x for x in cfg.alphas if abs(x - a) <= 1e-5 * max(1.0, x)]
        out.append(match[0] if match else float(a))
    return out


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg: BenchmarkConfig, out: Path, seeds: list[int]) -> dict[str, str]:
    """Write per-city sequence files for every seed; returns file checksums."""
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    sums = {}
    for s in seeds:
        d = seed_dir(out, s)
        d.mkdir(parents=True, exist_ok=True)
        for city in cfg.cities:
            path = d / f"{city}.seq"
            save_sequences([run.generate_city(cfg, city, s)], path)
            sums[str(path.relative_to(out))] = _sha256(path)
    _write_manifest(
        out,
        cfg,
        seeds=seeds,
        base_seed=cfg.seed,
        generators={n: c.generator.to_config() for n, c in cfg.cities.items()},
        datasets=sums,
    )
    return sums


def load_city_data(cfg: BenchmarkConfig, out: Path, seed: int) -> dict[str, run.CityData]:
    datas = {}
    for city in cfg.cities:
        path = seed_dir(out, seed) / f"{city}.seq"
        if not path.exists():
            raise ArtifactError(f"missing dataset {path}; run `regenstop generate` first")
        (seq,) = load_sequences(path)
        datas[city] = run.split_city(cfg, seq)
    return datas


def _train_one(job):
    cfg_raw, out, approach, alpha, seed = job
    cfg = from_dict(cfg_raw)
    datas = load_city_data(cfg, Path(out), seed)
    if approach == "imitation":
        policy, report = run.train_imitation(cfg, datas, alpha, seed)
    elif approach == "policy-gradient":
        policy, report = run.train_pg(cfg, datas, alpha, seed)
    else:
        raise ValueError(f"approach {approach!r} is not trainable")
    path = policy_path(Path(out), approach, alpha, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    policy.save(path)
    report["policy"] = str(path.relative_to(out))
    report["sha256"] = _sha256(path)
    path.with_suffix(".report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _fan_out(fn, jobs, n_jobs: int):
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_train(cfg: BenchmarkConfig, out: Path, approach: str, alphas, seeds, jobs: int = 1) -> list[dict]:
    work = [(cfg.raw, str(out), approach, a, s) for a in alphas for s in seeds]
    reports = _fan_out(_train_one, work, jobs)
    _write_manifest(out, cfg, trained={f"{approach}/{alpha_tag(r['alpha'])}/seed-{r['seed']:02d}": r["sha256"] for r in reports})
    return reports


def _load_learned(out: Path, approaches, alphas, seed) -> dict:
    learned = {}
    for approach in approaches:
        if approach not in run.LEARNED:
            continue
        for a in alphas:
            path = policy_path(out, approach, a, seed)
            if not path.exists():
                raise ArtifactError(f"missing trained {approach} policy {path}; run `regenstop train` first")
            learned[(approach, a)] = NeuralPolicy.load(path)
    return learned


def _evaluate_one(job):
    cfg_raw, out, approaches, alphas, seed = job
    cfg = from_dict(cfg_raw)
    out = Path(out)
    datas = load_city_data(cfg, out, seed)
    learned = _load_learned(out, approaches, alphas, seed)
    return run.evaluate_seed(cfg, seed, approaches, alphas, learned, datas)


def cmd_evaluate(cfg: BenchmarkConfig, out: Path, approaches, alphas, seeds, jobs: int = 1):
    unknown = set(approaches) - set(run.APPROACHES)
    if unknown:
        raise ValueError(f"unknown approaches {sorted(unknown)}")
    # fail early on missing artifacts, before any work starts
    for s in seeds:
        load_city_data(cfg, out, s)
        _load_learned(out, approaches, alphas, s)
    work = [(cfg.raw, str(out), list(approaches), list(alphas), s) for s in seeds]
    evals = [e for chunk in _fan_out(_evaluate_one, work, jobs) for e in chunk]
    rows = run.aggregate_rows(evals)
    write_csv(rows, out / "results.csv", RESULT_COLUMNS)
    write_csv(run.latency_rows(evals), out / "latency.csv", ("approach", "decisions", "seconds", "latency_us"))
    post = [
        {"approach": e.approach, "alpha": e.alpha, "city": e.city, "seed": e.seed, "post_switch_cost": e.post_switch_cost}
        for e in evals
        if e.post_switch_cost is not None
    ]
    if post:
        post.sort(key=lambda r: (r["approach"], r["alpha"], r["city"], r["seed"]))
        write_csv(post, out / "post_switch.csv", ("approach", "alpha", "city", "seed", "post_switch_cost"))
    _write_manifest(out, cfg, results=_sha256(out / "results.csv"))
    return evals, rows


def cmd_policy_grid(
    cfg: BenchmarkConfig,
    out: Path,
    approach: str,
    alpha: float,
    city: str,
    seed: int = 0,
    policy_file: Path | None = None,
    max_items: int = 50,
) -> Path:
    if city not in cfg.cities:
        raise ValueError(f"unknown city {city!r}")
    datas = load_city_data(cfg, out, seed)
    data = datas[city]
    ctx = run.grid_context(cfg, data, max_items=max_items)
    if approach == "model-based":
        cm = cfg.cost_models(alpha)[city]
        stop = run.mdp_grid(run.static_mdp_policy(cfg, data, cm), ctx)
    elif approach in run.LEARNED:
        path = policy_file or policy_path(out, approach, alpha, seed)
        if not Path(path).exists():
            raise ArtifactError(f"missing trained {approach} policy {path}")
        stop = run.neural_grid(NeuralPolicy.load(path), ctx)
    else:
        raise ValueError(f"no policy grid for approach {approach!r}")
    dest = out / "grids" / f"{approach}-{alpha_tag(alpha)}-{city}.csv"
    write_csv(run.grid_rows(stop, ctx), dest, ("item_count", "load_kg", "action"))
    return dest


def cmd_sweep(cfg: BenchmarkConfig, out: Path, seeds, jobs: int = 1, approaches=None):
    approaches = approaches or ("baseline", "model-based", "imitation", "hindsight")
    cmd_generate(cfg, out, seeds)
    for a in run.LEARNED:
        if a in approaches:
            cmd_train(cfg, out, a, cfg.alphas, seeds, jobs)
    evals, rows = cmd_evaluate(cfg, out, approaches, cfg.alphas, seeds, jobs)
    grid_approaches = [a for a in ("model-based", "imitation", "policy-gradient") if a in approaches]
    for a in grid_approaches:
        for alpha in cfg.alphas:
            for city in cfg.cities:
                cmd_policy_grid(cfg, out, a, alpha, city, seeds[0])
    return rows


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regenstop", description="Shipment consolidation benchmark")
    p.add_argument("--config", type=Path, help="benchmark YAML (default: built-in six-city config)")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--out", type=Path, default=Path("run"), help="run directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--stationary", action="store_true", help="drop regime switches from the config")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic datasets and a manifest")
    g.add_argument("--seeds", type=int)

    t = sub.add_parser("train", help="train a learned approach per alpha and seed")
    t.add_argument("--approach", choices=run.LEARNED, required=True)
    t.add_argument("--alpha", type=float, action="append")
    t.add_argument("--seeds", type=int)

    e = sub.add_parser("evaluate", help="evaluate approaches on the test split")
    e.add_argument("--approaches", nargs="+", default=["baseline", "model-based", "hindsight"], choices=run.APPROACHES)
    e.add_argument("--alpha", type=float, action="append")
    e.add_argument("--seeds", type=int)

    pg = sub.add_parser("policy-grid", help="export a stop/wait heatmap CSV")
    pg.add_argument("--approach", choices=("model-based",) + run.LEARNED, required=True)
    pg.add_argument("--alpha", type=float, required=True)
    pg.add_argument("--city", required=True)
    pg.add_argument("--policy", type=Path, help="explicit policy JSON")
    pg.add_argument("--max-items", type=int, default=50)
    pg.add_argument("--data-seed", type=int, default=0)

    s = sub.add_parser("sweep", help="generate, train, evaluate and export grids")
    s.add_argument("--seeds", type=int)
    s.add_argument("--approaches", nargs="+", choices=run.APPROACHES)
    return p


def _config(args) -> BenchmarkConfig:
    cfg = load_config(args.config)
    if args.seed is not None or args.stationary:
        raw = dict(cfg.raw)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.stationary:
            raw["cities"] = {k: {kk: vv for kk, vv in v.items() if kk != "regimes"} for k, v in raw["cities"].items()}
        cfg = from_dict(raw)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        out = args.out
        t0 = time.perf_counter()
        if args.command == "generate":
            sums = cmd_generate(cfg, out, _seeds(args, cfg))
            print(f"wrote {len(sums)} sequence files under {out / 'data'}")
        elif args.command == "train":
            reports = cmd_train(cfg, out, args.approach, _alphas(args, cfg), _seeds(args, cfg), args.jobs)
            for r in reports:
                print(f"{r['approach']} alpha={r['alpha']:.6g} seed={r['seed']} {r['wall_clock_s']:.1f}s -> {r['policy']}")
        elif args.command == "evaluate":
            _, rows = cmd_evaluate(cfg, out, args.approaches, _alphas(args, cfg), _seeds(args, cfg), args.jobs)
            print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
        elif args.command == "policy-grid":
            dest = cmd_policy_grid(
                cfg, out, args.approach, args.alpha, args.city, args.data_seed, args.policy, args.max_items
            )
            print(f"wrote {dest}")
        elif args.command == "sweep":
            rows = cmd_sweep(cfg, out, _seeds(args, cfg), args.jobs, args.approaches)
            print(f"sweep finished: {len(rows)} result rows in {out}")
        log.info("%s took %.1fs", args.command, time.perf_counter() - t0)
    except (ConfigError, ArtifactError, ValueError) as e:
        print(f"regenstop: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
