"""Bob's scheduling policies.

The goal-oriented policy is the optimum of a discounted decision process on
``(last received state, steps since that reception)``. Every step Bob
either stays silent and is rewarded when his MAP guess is right, or pulls a
fresh state and pays ``beta``. Because the process only depends on that
pair, value iteration on ``size * t_max`` cells gives the optimal policy,
which is always of threshold form once reachability is taken into account.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .markov import MarkovChain, MatrixPowerCache, entropy, steady_state

GOAL_ORIENTED = "goal_oriented"
PERIODIC = "periodic"
ADAPTIVE = "adaptive"
KINDS = (GOAL_ORIENTED, PERIODIC, ADAPTIVE)

VI_TOL = 1e-10
DEFAULT_GAMMA = 0.95


@dataclass
class SchedulingPolicy:
    kind: str
    t_max: int
    sigma: np.ndarray | None = None
    period: int | None = None
    value_table: np.ndarray | None = field(default=None, repr=False)
    residuals: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=np.int64)
            if np.any(self.sigma < 1) or np.any(self.sigma > self.t_max):
                raise ValueError("sigma must lie in 1..t_max")
        if self.period is not None and not 1 <= self.period <= self.t_max:
            raise ValueError("period must lie in 1..t_max")

    def intervals(self, size: int) -> np.ndarray:
        """Per-state interval actually used by this policy."""
        if self.kind == PERIODIC:
            return np.full(size, self.period, dtype=np.int64)
        return self.sigma

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "sigma": None if self.sigma is None else [int(x) for x in self.sigma],
            "period": self.period,
            "t_max": self.t_max,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SchedulingPolicy":
        d = json.loads(text)
        return cls(d["kind"], d["t_max"], d.get("sigma"), d.get("period"))


@dataclass
class PolicyAnalytics:
    timing_entropy: float
    transmission_prob: float
    embedded_stationary: np.ndarray
    timing_dist: dict


def map_row_max(cache: MatrixPowerCache, t_max: int) -> np.ndarray:
    """``out[s, d-1] = max_s' (P^d)[s, s']``, Bob's hit probability d steps after receiving s."""
    return np.stack([cache(d).max(axis=1) for d in range(1, t_max + 1)], axis=1)


def bob_estimate(cache: MatrixPowerCache, s: int, delta: int) -> int:
    """MAP guess ``delta`` steps after receiving ``s``; lowest index wins ties."""
    return int(np.argmax(cache(delta)[s]))


def extract_sigma(pi, t_max: int) -> np.ndarray:
    """First elapsed time at which each state's decision row requests an update.

    ``pi[s, d-1]`` is the decision at elapsed time ``d``. Rows that never
    request before ``t_max`` get ``t_max`` (the forced transmission).
    """
    pi = np.asarray(pi)
    sigma = np.full(pi.shape[0], t_max, dtype=np.int64)
    for s, row in enumerate(pi):
        hits = np.flatnonzero(row[: t_max - 1] == 1)
        if hits.size:
            sigma[s] = hits[0] + 1
    return sigma


def value_iteration(chain: MarkovChain, beta: float, gamma: float, t_max: int,
                    cache: MatrixPowerCache | None = None, tol: float = VI_TOL,
                    max_sweeps: int = 100_000):
    """Return ``(V, pi, residuals)`` on the (state, elapsed) grid.

    ``V[s, d-1]`` and ``pi[s, d-1]`` refer to elapsed time ``d``. Exact ties
    keep silent, so the extracted thresholds are the largest optimal ones.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must be in (0, 1)")
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    cache = cache or MatrixPowerCache(chain)
    n = chain.size
    hit = map_row_max(cache, t_max)
    powers = np.stack([cache(d) for d in range(1, t_max + 1)])  # (t_max, n, n)
    V = np.zeros((n, t_max))
    residuals = []

    def q_values(V):
        request = (1 - beta) + gamma * (powers @ V[:, 0]).T
        stay = np.full((n, t_max), -np.inf)
        stay[:, :-1] = hit[:, :-1] + gamma * V[:, 1:]
        return stay, request

    for _ in range(max_sweeps):
        stay, request = q_values(V)
        V_new = np.maximum(stay, request)
        diff = float(np.max(np.abs(V_new - V)))
        residuals.append(diff)
        V = V_new
        if diff < tol:
            break
    else:
        raise RuntimeError("value iteration failed to converge")
    stay, request = q_values(V)
    pi = (request > stay).astype(np.int8)
    return V, pi, residuals


def solve_optimal_policy(chain: MarkovChain, beta: float, gamma: float = DEFAULT_GAMMA,
                         t_max: int = 10, cache: MatrixPowerCache | None = None
                         ) -> SchedulingPolicy:
    if not 0 <= beta <= 2:
        raise ValueError("beta must lie in [0, 2]")
    V, pi, residuals = value_iteration(chain, beta, gamma, t_max, cache)
    return SchedulingPolicy(GOAL_ORIENTED, t_max, sigma=extract_sigma(pi, t_max),
                            value_table=V, residuals=residuals)


def periodic_reward(chain: MarkovChain, beta: float, period: int,
                    cache: MatrixPowerCache | None = None) -> float:
    """Long-run reward per step of a fixed-period schedule."""
    cache = cache or MatrixPowerCache(chain)
    mu = chain.steady_state
    silent = sum(float(mu @ cache(j).max(axis=1)) for j in range(1, period))
    return ((1 - beta) + silent) / period


def tune_periodic(chain: MarkovChain, beta: float, t_max: int = 10,
                  cache: MatrixPowerCache | None = None) -> SchedulingPolicy:
    """Best fixed period in ``1..t_max``; near-ties go to the longer period."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    cache = cache or MatrixPowerCache(chain)
    best_T, best = 1, -np.inf
    for T in range(1, t_max + 1):
        r = periodic_reward(chain, beta, T, cache)
        if r >= best - 1e-12:
            best_T, best = T, max(r, best)
    return SchedulingPolicy(PERIODIC, t_max, sigma=np.full(chain.size, best_T),
                            period=best_T)


def policy_analytics(chain: MarkovChain, sigma, cache: MatrixPowerCache | None = None
                     ) -> PolicyAnalytics:
    """Timing entropy and transmission rate of a per-state interval map.

    Works on the chain embedded at transmission instants, whose kernel row
    ``s`` is row ``s`` of ``P^sigma(s)``.
    """
    cache = cache or MatrixPowerCache(chain)
    sigma = np.asarray(sigma, dtype=np.int64)
    Q = np.stack([cache(int(sigma[s]))[s] for s in range(chain.size)])
    nu = steady_state(Q)
    timing = {}
    for s, t in enumerate(sigma):
        timing[int(t)] = timing.get(int(t), 0.0) + float(nu[s])
    h = entropy(np.fromiter(timing.values(), dtype=float))
    return PolicyAnalytics(
        timing_entropy=h,
        transmission_prob=1.0 / float(nu @ sigma),
        embedded_stationary=nu,
        timing_dist=dict(sorted(timing.items())),
    )


def long_run_reward(chain: MarkovChain, sigma, beta: float,
                    cache: MatrixPowerCache | None = None) -> float:
    """Undiscounted reward per step of a per-state schedule, by renewal-reward
    over the embedded chain."""
    cache = cache or MatrixPowerCache(chain)
    sigma = np.asarray(sigma, dtype=np.int64)
    nu = policy_analytics(chain, sigma, cache).embedded_stationary
    per_cycle = np.array([(1 - beta) + sum(cache(j)[s].max() for j in range(1, sigma[s]))
                          for s in range(chain.size)])
    return float(nu @ per_cycle / (nu @ sigma))
