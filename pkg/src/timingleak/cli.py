"""Command line entry point: parameter sweeps, single-episode traces, policy
dumps and the brute-force oracle suites."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .markov import entropy
from .policy import policy_analytics
from .simulation import (POLICIES, EpisodeConfig, compute_metrics, episode_seed,
                         metrics_json, prepare, run_episode, write_trace_csv)

log = logging.getLogger("timingleak")

SWEEP_COLUMNS = ("beta", "theta", "D", "policy", "mean_reward", "sd_reward",
                 "mean_leakage", "max_leakage", "eta_B", "eta_E", "timing_entropy",
                 "tx_prob", "fallback_count", "error")
POLICY_ORDER = {p: i for i, p in enumerate(POLICIES)}


@dataclass
class SweepSpec:
    beta: list = field(default_factory=lambda: [0.2, 0.5, 1.0, 2.0])
    theta: list = field(default_factory=lambda: [1.0, 8.0, 32.0, 128.0])
    D: list = field(default_factory=lambda: [5])
    policy: list = field(default_factory=lambda: list(POLICIES))
    episodes: int = 10
    steps: int = 200
    seed: int = 0
    size: int = 30
    gamma: float = 0.95
    t_max: int = 10
    l_min: float = 0.4
    l_max: float = 0.6
    epsilon: float = 0.0
    out: str | None = None
    format: str = "csv"
    jobs: int = 1

    def __post_init__(self):
        for name in ("beta", "theta", "D", "policy"):
            value = getattr(self, name)
            if not isinstance(value, (list, tuple)):
                value = [value]
            if not value:
                raise ValueError(f"sweep list {name!r} is empty")
            setattr(self, name, list(value))
        bad = set(self.policy) - set(POLICIES)
        if bad:
            raise ValueError(f"unknown policies {sorted(bad)}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    def cells(self):
        for beta in self.beta:
            for theta in self.theta:
                for D in self.D:
                    for pol in self.policy:
                        yield float(beta), float(theta), int(D), pol


def run_cell(spec: SweepSpec, beta: float, theta: float, D: int, pol: str) -> dict:
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row.update(beta=beta, theta=theta, D=D, policy=pol)
    try:
        sc = prepare(spec.size, theta, beta, spec.gamma, spec.t_max)
        reports, traces = [], []
        for ep in range(spec.episodes):
            cfg = EpisodeConfig(size=spec.size, theta=theta, beta=beta, gamma=spec.gamma,
                                t_max=spec.t_max, D=D, policy=pol, l_min=spec.l_min,
                                l_max=spec.l_max, n_steps=spec.steps, epsilon=spec.epsilon,
                                seed=episode_seed(spec.seed, ep))
            trace = run_episode(cfg, sc)
            traces.append(trace)
            reports.append(compute_metrics(trace))
        rewards = np.array([r.mean_reward for r in reports])
        if pol == "mpi":
            an = policy_analytics(sc.chain, sc.mpi.sigma, sc.cache)
            h, tx = an.timing_entropy, an.transmission_prob
        elif pol == "pp":
            h, tx = 0.0, 1.0 / sc.pp.period
        else:
            # ADE has no stationary schedule: report what the episodes did
            taus = np.concatenate([t.intervals for t in traces])
            _, counts = np.unique(taus, return_counts=True)
            h = entropy(counts / counts.sum()) if counts.size else 0.0
            tx = float(np.mean([t.actions.mean() for t in traces]))
        row.update(
            mean_reward=float(rewards.mean()),
            sd_reward=float(rewards.std(ddof=1)) if len(rewards) > 1 else 0.0,
            mean_leakage=float(np.mean([r.mean_leakage for r in reports])),
            max_leakage=float(np.max([r.max_leakage for r in reports])),
            eta_B=float(np.mean([r.eta_B for r in reports])),
            eta_E=float(np.mean([r.eta_E for r in reports])),
            timing_entropy=float(h),
            tx_prob=float(tx),
            fallback_count=int(sum(r.fallback_count for r in reports)),
        )
    except Exception as exc:  # one bad cell must not sink the sweep
        log.warning("cell beta=%s theta=%s D=%s %s failed: %s", beta, theta, D, pol, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(spec: SweepSpec) -> list:
    cells = list(spec.cells())
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            rows = list(pool.map(_run_cell_args, [(spec, *c) for c in cells]))
    else:
        rows = [run_cell(spec, *c) for c in cells]
    rows.sort(key=lambda r: (r["beta"], r["theta"], r["D"], POLICY_ORDER[r["policy"]]))
    return rows


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def format_rows(rows: list, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r[k]) for k in SWEEP_COLUMNS})
    return buf.getvalue()


def emit_trace(config: EpisodeConfig, path) -> dict:
    """Write one episode's per-step CSV plus a ``.meta.json`` sidecar with the
    ADE thresholds and metrics; returns the sidecar content."""
    path = Path(path)
    trace = run_episode(config)
    report = compute_metrics(trace)
    meta = json.loads(metrics_json(report, config))
    meta["thresholds"] = {"l_min": config.l_min, "l_max": config.l_max}
    meta["epochs"] = [int(t) for t in trace.epochs]
    try:
        write_trace_csv(path, trace)
        path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))
        if trace.decisions:
            from .ade import write_decision_log
            write_decision_log(path.with_suffix(path.suffix + ".decisions.csv"), trace.decisions)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc
    return meta


# -- argument handling -------------------------------------------------------

FLAG_TO_FIELD = {
    "beta": "beta", "theta": "theta", "dmax": "D", "policy": "policy", "seed": "seed",
    "episodes": "episodes", "steps": "steps", "lmin": "l_min", "lmax": "l_max",
    "gamma": "gamma", "tmax": "t_max", "out": "out", "format": "format",
    "size": "size", "epsilon": "epsilon", "jobs": "jobs",
}
FILE_ALIASES = {"dmax": "D", "lmin": "l_min", "lmax": "l_max", "tmax": "t_max",
                "policies": "policy", "betas": "beta", "thetas": "theta"}


def load_config(path) -> dict:
    """Read a YAML sweep file (plain ``key: value`` / ``key: [list]`` pairs)."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return {FILE_ALIASES.get(k, k): v for k, v in data.items()}


def _add_common(p: argparse.ArgumentParser, many: bool):
    nargs = "+" if many else None
    p.add_argument("--config", help="YAML file with default values")
    p.add_argument("--beta", type=float, nargs=nargs)
    p.add_argument("--theta", type=float, nargs=nargs)
    p.add_argument("--dmax", type=int, nargs=nargs)
    p.add_argument("--policy", nargs=nargs, choices=POLICIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lmin", type=float)
    p.add_argument("--lmax", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tmax", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out")


def _merged(args, keys) -> dict:
    values = load_config(args.config) if args.config else {}
    for flag, name in FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return {k: v for k, v in values.items() if k in keys}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timingleak", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run the (beta, theta, D, policy) grid")
    _add_common(p, many=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("trace", help="per-step CSV of a single episode")
    _add_common(p, many=False)

    p = sub.add_parser("policy", help="dump the schedules and analytics for one (beta, theta)")
    _add_common(p, many=False)

    sub.add_parser("oracle", help="run the brute-force verification suites")
    return parser


def cmd_sweep(args) -> int:
    spec = SweepSpec(**_merged(args, SweepSpec.__dataclass_fields__))
    rows = run_sweep(spec)
    text = format_rows(rows, spec.format)
    if spec.out:
        Path(spec.out).write_text(text)
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if r["error"]]
    return 1 if failed else 0


def _episode_config(args) -> EpisodeConfig:
    values = _merged(args, set(EpisodeConfig.__dataclass_fields__) | {"steps"})
    if "steps" in values:
        values["n_steps"] = values.pop("steps")
    for k in ("beta", "theta", "D", "policy"):
        if isinstance(values.get(k), list):
            values[k] = values[k][0]
    return EpisodeConfig(**values)


def cmd_trace(args) -> int:
    cfg = _episode_config(args)
    out = args.out or f"trace_{cfg.policy}_b{cfg.beta}_t{cfg.theta}_D{cfg.D}.csv"
    meta = emit_trace(cfg, out)
    print(json.dumps({k: meta[k] for k in ("mean_reward", "mean_leakage", "eta_B", "eta_E")}))
    return 0


def cmd_policy(args) -> int:
    cfg = _episode_config(args)
    sc = prepare(cfg.size, float(cfg.theta), float(cfg.beta), float(cfg.gamma), cfg.t_max)
    an = policy_analytics(sc.chain, sc.mpi.sigma, sc.cache)
    doc = {
        "config": {k: v for k, v in asdict(cfg).items()
                   if k in ("size", "theta", "beta", "gamma", "t_max")},
        "goal_oriented": sc.mpi.to_dict(),
        "periodic": sc.pp.to_dict(),
        "analytics": {
            "timing_entropy": an.timing_entropy,
            "transmission_prob": an.transmission_prob,
            "timing_dist": an.timing_dist,
        },
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_oracle(args) -> int:
    from .oracles import run_all

    results = run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.detail}, {r.seconds:.3f}s)")
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"sweep": cmd_sweep, "trace": cmd_trace,
               "policy": cmd_policy, "oracle": cmd_oracle}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
