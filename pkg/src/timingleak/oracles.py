"""Brute-force reference computations.

Each routine here takes a route that is independent of the production code
it checks: exhaustive enumeration over threshold policies with exact linear
solves, enumeration of whole state trajectories, and plain Monte Carlo.
They are exponential or slow on purpose and only meant for tiny instances.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .markov import MarkovChain, build_chain, sample_path

# -- scheduling --------------------------------------------------------------


def threshold_policy_values(chain: MarkovChain, sigma, beta: float, gamma: float) -> np.ndarray:
    """Exact discounted value ``V(s, 1)`` of a threshold schedule, by one linear solve.

    Cells are ``(s, d)`` for ``d = 1..sigma(s)``. Silent cells earn Bob's hit
    probability and move to ``(s, d+1)``; the last cell of each state pays
    ``1 - beta`` and restarts from the fresh state.
    """
    P = np.asarray(chain.transitions)
    n = chain.size
    sigma = [int(x) for x in sigma]
    index = {}
    for s in range(n):
        for d in range(1, sigma[s] + 1):
            index[s, d] = len(index)
    A = np.eye(len(index))
    r = np.zeros(len(index))
    for (s, d), i in index.items():
        Pd = np.linalg.matrix_power(P, d)
        if d < sigma[s]:
            r[i] = Pd[s].max()
            A[i, index[s, d + 1]] -= gamma
        else:
            r[i] = 1 - beta
            for s2 in range(n):
                A[i, index[s2, 1]] -= gamma * Pd[s, s2]
    V = np.linalg.solve(A, r)
    return np.array([V[index[s, 1]] for s in range(n)])


def enumerate_threshold_policies(chain: MarkovChain, beta: float, gamma: float, t_max: int):
    """Best threshold schedule over all ``t_max ** size`` candidates.

    Returns ``(sigma, values)`` maximizing the summed start values. An
    optimal schedule is optimal from every start, so the sum is a faithful
    ranking.
    """
    best, best_sigma, best_v = -np.inf, None, None
    for sigma in itertools.product(range(1, t_max + 1), repeat=chain.size):
        v = threshold_policy_values(chain, sigma, beta, gamma)
        if v.sum() > best + 1e-12:
            best, best_sigma, best_v = v.sum(), np.array(sigma), v
    return best_sigma, best_v


def simulated_periodic_reward(chain: MarkovChain, beta: float, period: int, seeds: int,
                              n_steps: int, master_seed: int = 0) -> tuple:
    """Monte Carlo mean and standard error of a fixed-period schedule's reward."""
    P = np.asarray(chain.transitions)
    powers = [np.linalg.matrix_power(P, d) for d in range(period + 1)]
    means = []
    for k in range(seeds):
        rng = np.random.default_rng([master_seed, k])
        start = int(rng.choice(chain.size, p=chain.initial_dist))
        path = sample_path(chain, start, n_steps - 1, rng)
        total, last = 0.0, 0
        for t, s in enumerate(path):
            if t % period == 0:
                total += 1 - beta
                last = s
            else:
                total += float(np.argmax(powers[t % period][last]) == s)
        means.append(total / n_steps)
    means = np.array(means)
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(seeds))


def simulated_timing(chain: MarkovChain, sigma, n_steps: int, seed: int = 0):
    """Empirical interval histogram and request rate of a per-state schedule."""
    rng = np.random.default_rng(seed)
    start = int(rng.choice(chain.size, p=chain.initial_dist))
    path = sample_path(chain, start, n_steps - 1, rng)
    counts, requests, t = {}, 0, 0
    while t < n_steps:
        tau = int(sigma[path[t]])
        requests += 1
        if t + tau < n_steps:
            counts[tau] = counts.get(tau, 0) + 1
        t += tau
    total = sum(counts.values())
    hist = {k: v / total for k, v in sorted(counts.items())}
    return hist, requests / n_steps


# -- smoothing ---------------------------------------------------------------


def _trajectory_weights(chain: MarkovChain, intervals, sigma_history):
    """All state paths over ``0..t_K`` with their joint weight given the intervals."""
    epochs = np.concatenate([[0], np.cumsum(intervals)]).astype(int)
    horizon = int(epochs[-1])
    n = chain.size
    paths = np.array(list(itertools.product(range(n), repeat=horizon + 1)))
    P = np.asarray(chain.transitions)
    w = np.asarray(chain.initial_dist)[paths[:, 0]].copy()
    for t in range(horizon):
        w *= P[paths[:, t], paths[:, t + 1]]
    for j, tau in enumerate(intervals):
        w *= np.asarray(sigma_history[j])[paths[:, epochs[j]]] == tau
    return paths, w, epochs


def brute_force_posterior(chain: MarkovChain, intervals, sigma_history, time_index: int):
    """Exact ``P(state at time_index | observed intervals)`` by full enumeration."""
    paths, w, _ = _trajectory_weights(chain, intervals, sigma_history)
    post = np.bincount(paths[:, time_index], weights=w, minlength=chain.size)
    return post / post.sum()


def brute_force_epoch_posteriors(chain: MarkovChain, intervals, sigma_history):
    paths, w, epochs = _trajectory_weights(chain, intervals, sigma_history)
    out = []
    for t in epochs:
        post = np.bincount(paths[:, t], weights=w, minlength=chain.size)
        out.append(post / post.sum())
    return out


# -- suites used by the CLI ----------------------------------------------------


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def dp_enumeration_suite(gamma: float = 0.9, t_max: int = 3) -> list:
    from .policy import solve_optimal_policy

    results = []
    for beta in (0.0, 0.5, 1.0):
        for theta in (1.0, 8.0):
            t0 = time.perf_counter()
            chain = build_chain(4, theta)
            pol = solve_optimal_policy(chain, beta, gamma, t_max)
            best_sigma, best_v = enumerate_threshold_policies(chain, beta, gamma, t_max)
            dp_v = threshold_policy_values(chain, pol.sigma, beta, gamma)
            gap = float(np.max(np.abs(dp_v - best_v)))
            same = bool(np.array_equal(pol.sigma, best_sigma))
            results.append(OracleResult(
                f"dp_vs_enumeration beta={beta} theta={theta}", same or gap < 1e-9,
                f"dp={pol.sigma.tolist()} enum={best_sigma.tolist()} value_gap={gap:.2e}",
                time.perf_counter() - t0))
    return results


def smoothing_suite(seed: int = 0, instances: int = 20) -> list:
    from .eavesdropper import EveState, smooth_at_transmission, backward_pass
    from .markov import MatrixPowerCache

    rng = np.random.default_rng(seed)
    results = []
    for i in range(instances):
        t0 = time.perf_counter()
        P = rng.dirichlet(np.ones(3), size=3)
        chain = MarkovChain.from_matrix(P)
        sigma = rng.integers(1, 3, size=3)
        # draw intervals the schedule can actually produce
        n_tx = int(rng.integers(1, 4))
        intervals = [int(rng.choice(sigma)) for _ in range(n_tx)]
        history = [sigma] * n_tx
        exact = brute_force_epoch_posteriors(chain, intervals, history)
        eve = EveState(MatrixPowerCache(chain))
        for tau in intervals:
            eve.observe(tau, sigma)
        n = eve.last_epoch
        b = backward_pass(eve, n)
        err = max(float(np.max(np.abs(smooth_at_transmission(eve.forwards[k], b[k])[0] - exact[k])))
                  for k in range(len(exact)))
        results.append(OracleResult(f"smoothing instance {i}", err < 1e-9,
                                    f"intervals={intervals} max_err={err:.2e}",
                                    time.perf_counter() - t0))
    return results


def run_all() -> list:
    return dp_enumeration_suite() + smoothing_suite()
