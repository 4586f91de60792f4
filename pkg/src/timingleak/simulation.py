"""Episode runner coupling the source (Alice), the scheduler/estimator (Bob)
and the timing eavesdropper (Eve), plus the per-episode metrics."""

from __future__ import annotations

import csv
import functools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .ade import AdeConfig, AdeMode, ade_decide, mode_map, replay_mode
from .eavesdropper import EveState, _Smoother, leakage_at, map_estimate
from .markov import MarkovChain, MatrixPowerCache, build_chain, sample_path
from .policy import (DEFAULT_GAMMA, SchedulingPolicy, bob_estimate,
                     solve_optimal_policy, tune_periodic)

POLICIES = ("mpi", "pp", "ade")


@dataclass(frozen=True)
class EpisodeConfig:
    size: int = 30
    theta: float = 32.0
    beta: float = 1.0
    gamma: float = DEFAULT_GAMMA
    t_max: int = 10
    D: int = 5
    policy: str = "mpi"
    l_min: float = 0.4
    l_max: float = 0.6
    ade_initial_mode: int = 0
    n_steps: int = 200
    epsilon: float = 0.0
    seed: int = 0
    count_tx_correct: bool = True

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0 <= self.D <= self.n_steps:
            raise ValueError("need 0 <= D <= n_steps")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass
class Scenario:
    """Chain plus the two base policies for one (size, theta, beta) point."""

    chain: MarkovChain
    cache: MatrixPowerCache
    mpi: SchedulingPolicy
    pp: SchedulingPolicy


@functools.lru_cache(maxsize=64)
def prepare(size: int, theta: float, beta: float, gamma: float, t_max: int) -> Scenario:
    chain = build_chain(size, theta)
    cache = MatrixPowerCache(chain).warm(t_max)
    return Scenario(chain, cache,
                    solve_optimal_policy(chain, beta, gamma, t_max, cache),
                    tune_periodic(chain, beta, t_max, cache))


def scenario_for(config: EpisodeConfig) -> Scenario:
    return prepare(config.size, float(config.theta), float(config.beta),
                   float(config.gamma), config.t_max)


@dataclass
class EpisodeTrace:
    config: EpisodeConfig
    states: np.ndarray
    actions: np.ndarray
    estimates: np.ndarray
    rewards: np.ndarray
    modes: np.ndarray
    leakage: np.ndarray
    epochs: list
    intervals: list
    eve: EveState = field(repr=False)
    decisions: list = field(default_factory=list, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.states)


def reward(s: int, a: int, s_hat: int, beta: float) -> float:
    """Per-step reward: a correct guess pays 1, a request pays ``1 - beta``."""
    return (1.0 - beta) if a == 1 else float(s == s_hat)


def run_episode(config: EpisodeConfig, scenario: Scenario | None = None) -> EpisodeTrace:
    """Simulate one episode; deterministic given ``config.seed``.

    A request is forced at step 0. Afterwards the active policy commits the
    full next interval at every request, Eve folds each request into her
    filter and the leakage ``L_E(n; D)`` is recomputed at every step.
    """
    sc = scenario or scenario_for(config)
    chain, cache = sc.chain, sc.cache
    size, N, beta = chain.size, config.n_steps, config.beta
    rng = np.random.default_rng(config.seed)
    start = int(rng.choice(size, p=chain.initial_dist))
    path = sample_path(chain, start, N - 1, rng)

    sigma = sc.mpi.sigma
    periodic_map = sc.pp.intervals(size)
    ade_cfg = None
    if config.policy == "ade":
        ade_cfg = AdeConfig(config.l_min, config.l_max, sc.pp.period, sigma, config.D)

    eve = EveState(cache)
    bob_mode = eve_mode = AdeMode(config.ade_initial_mode)
    sigma_eff = None
    decisions = []

    actions = np.zeros(N, dtype=np.int8)
    estimates = np.zeros(N, dtype=np.int64)
    rewards = np.zeros(N)
    modes = np.zeros(N, dtype=np.int8)
    leak = np.zeros(N)
    next_tx, last_tx, received = 0, 0, start

    for n in range(N):
        s = int(path[n])
        if n == next_tx:
            if n > 0:
                tau = n - last_tx
                if ade_cfg is not None:
                    eve_mode = replay_mode(eve, ade_cfg, eve_mode, tau)
                    sigma_eff = mode_map(ade_cfg, eve_mode)
                eve.observe(tau, sigma_eff)
            last_tx, received = n, s
            actions[n], estimates[n] = 1, s
            if config.policy == "mpi":
                interval, sigma_eff = int(sigma[s]), sigma
            elif config.policy == "pp":
                interval, sigma_eff = sc.pp.period, periodic_map
            else:
                # Bob's shadow is Eve's state: both are built from public timings only
                dec = ade_decide(s, ade_cfg, bob_mode, eve)
                decisions.append(dec)
                interval, bob_mode = dec.interval, AdeMode(dec.mode_after)
            next_tx = n + interval
        else:
            estimates[n] = bob_estimate(cache, received, n - last_tx)
        rewards[n] = reward(s, int(actions[n]), int(estimates[n]), beta)
        modes[n] = int(bob_mode) if ade_cfg is not None else (1 if config.policy == "pp" else 0)
        leak[n] = leakage_at(eve, n, config.D)

    return EpisodeTrace(config, path, actions, estimates, rewards, modes, leak,
                        list(eve.epochs), list(eve.intervals), eve, decisions)


@dataclass
class MetricsReport:
    mean_reward: float
    mean_leakage: float
    max_leakage: float
    eta_B: float
    eta_E: float
    R_B: float
    fallback_count: int
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def eve_estimates(eve: EveState, n_steps: int, D: int) -> np.ndarray:
    """Eve's guess of each step, committed ``D`` steps later (or at the last step)."""
    out = np.zeros(n_steps, dtype=np.int64)
    for n in range(n_steps):
        h = min(n + D, n_steps - 1)
        out[n] = map_estimate(_Smoother(eve, h, n).belief(n))
    return out


def compute_metrics(trace: EpisodeTrace, D: int | None = None, epsilon: float | None = None,
                    count_tx_correct: bool | None = None) -> MetricsReport:
    cfg = trace.config
    D = cfg.D if D is None else D
    epsilon = cfg.epsilon if epsilon is None else epsilon
    count_tx = cfg.count_tx_correct if count_tx_correct is None else count_tx_correct

    if D == cfg.D:
        leak = trace.leakage
    else:
        leak = np.array([leakage_at(trace.eve, n, D) for n in range(trace.n_steps)])
    correct = trace.states == trace.estimates
    if count_tx:
        eta_B = float(correct.mean())
    else:
        silent = trace.actions == 0
        eta_B = float(correct[silent].mean()) if silent.any() else 1.0
    eta_E = float((eve_estimates(trace.eve, trace.n_steps, D) == trace.states).mean())
    return MetricsReport(
        mean_reward=float(trace.rewards.mean()),
        mean_leakage=float(leak.mean()),
        max_leakage=float(leak.max()),
        eta_B=eta_B,
        eta_E=eta_E,
        R_B=float(np.mean(trace.rewards - epsilon * leak)),
        fallback_count=trace.eve.fallback_count,
        flags={
            "forward_fallbacks": trace.eve.forward_fallbacks,
            "backward_fallbacks": trace.eve.backward_fallbacks,
            "degenerate_beliefs": trace.eve.degenerate_beliefs,
        },
    )


TRACE_COLUMNS = ("n", "s", "a", "s_hat", "r", "xi", "leakage")


def trace_rows(trace: EpisodeTrace):
    """Rows of the per-step CSV; states are written 1-based."""
    for n in range(trace.n_steps):
        yield {
            "n": n,
            "s": int(trace.states[n]) + 1,
            "a": int(trace.actions[n]),
            "s_hat": int(trace.estimates[n]) + 1,
            "r": f"{trace.rewards[n]:.6g}",
            "xi": int(trace.modes[n]),
            "leakage": f"{trace.leakage[n]:.6f}",
        }


def write_trace_csv(path, trace: EpisodeTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        w.writeheader()
        w.writerows(trace_rows(trace))


def metrics_json(report: MetricsReport, config: EpisodeConfig) -> str:
    return json.dumps({**report.to_dict(), "config": asdict(config)}, indent=2, sort_keys=True)


def episode_seed(master_seed: int, episode: int) -> int:
    """Independent per-episode seed derived from ``(master_seed, episode)``."""
    return int(np.random.SeedSequence([master_seed, episode]).generate_state(1)[0])
