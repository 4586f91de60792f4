"""Parameterized recurrent Markov source and the matrix/entropy helpers
shared by the scheduler, the eavesdropper and the simulator.

States are numbered ``1..size`` when talking about the source definition
(:func:`g_factor`), but every array in the package is indexed 0-based, so
state ``i`` lives at index ``i - 1``.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

ROW_TOL = 1e-9
STATIONARY_TOL = 1e-12
MAX_POWER_ITERATIONS = 10**6


class ChainError(ValueError):
    """Raised when a chain cannot be built or analyzed."""


class ConvergenceError(RuntimeError):
    pass


def g_factor(i: int, theta: float, size: int) -> float:
    """Determinism weight of state ``i`` (1-based): ``|2i - size|^theta / size^theta``."""
    if not 1 <= i <= size:
        raise ChainError(f"state {i} outside 1..{size}")
    if theta <= 0:
        raise ChainError(f"theta must be positive, got {theta}")
    return (abs(2 * i - size) / size) ** theta


def entropy(dist) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    p = np.asarray(dist, dtype=float)
    if np.any(p < 0):
        raise ValueError("negative probability")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"distribution sums to {p.sum()}, not 1")
    nz = p[p > 0]
    return max(0.0, float(-(nz * np.log2(nz)).sum()))


def steady_state(transitions: np.ndarray, tol: float = STATIONARY_TOL,
                 max_iter: int = MAX_POWER_ITERATIONS) -> np.ndarray:
    """Stationary distribution by power iteration.

    Seeded with the uniform vector. Each sweep averages the current iterate
    with its image under ``P`` (the lazy chain ``(I + P) / 2``), which has
    the same fixed point but cannot oscillate on periodic chains.
    """
    P = np.asarray(transitions, dtype=float)
    n = P.shape[0]
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        image = mu @ P
        if np.max(np.abs(image - mu)) < tol:
            return mu / mu.sum()
        mu = 0.5 * (mu + image)
        mu /= mu.sum()
    raise ConvergenceError(
        f"power iteration did not reach residual {tol} in {max_iter} sweeps")


def _check_stochastic(P: np.ndarray) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ChainError("transition matrix must be square")
    if np.any(P < 0) or np.any(P > 1 + ROW_TOL):
        raise ChainError("transition entries must lie in [0, 1]")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_TOL:
        raise ChainError("transition rows must sum to 1")


@dataclass(frozen=True)
class MarkovChain:
    transitions: np.ndarray
    initial_dist: np.ndarray
    steady_state: np.ndarray
    theta: float | None = None

    def __post_init__(self):
        P = self.transitions
        _check_stochastic(P)
        if abs(self.initial_dist.sum() - 1.0) > ROW_TOL:
            raise ChainError("initial distribution must sum to 1")
        for arr in (P, self.initial_dist, self.steady_state):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return self.transitions.shape[0]

    @classmethod
    def from_matrix(cls, transitions, initial_dist=None, theta=None) -> "MarkovChain":
        P = np.array(transitions, dtype=float)
        _check_stochastic(P)
        n = P.shape[0]
        mu0 = (np.full(n, 1.0 / n) if initial_dist is None
               else np.array(initial_dist, dtype=float))
        return cls(P, mu0, steady_state(P), theta)

    def to_json(self) -> str:
        return json.dumps({
            "size": self.size,
            "theta": self.theta,
            "transitions": self.transitions.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "steady_state": self.steady_state.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "MarkovChain":
        data = json.loads(text)
        return cls(np.array(data["transitions"], dtype=float),
                   np.array(data["initial_dist"], dtype=float),
                   np.array(data["steady_state"], dtype=float),
                   data.get("theta"))


def build_chain(size: int, theta: float) -> MarkovChain:
    """Build the ring-structured source with density decay ``theta``.

    From state ``i`` the chain moves to ``i+1``, ``i+3`` or ``i-2`` (mod
    ``size``). In every fourth state (``i % 4 == 2``) the weights are
    reversed so that the next state is the unlikely one. Those rows carry a
    raw mass of 2 and every row is divided by its raw sum.
    """
    if size < 4:
        raise ChainError("need at least 4 states")
    if theta <= 0:
        raise ChainError(f"theta must be positive, got {theta}")
    P = np.zeros((size, size))
    for i in range(1, size + 1):
        g = g_factor(i, theta, size)
        row = i - 1
        nxt, far, back = (row + 1) % size, (row + 3) % size, (row - 2) % size
        if i % 4 == 2:
            P[row, nxt] += (2 - 2 * g) / 3
            P[row, far] += (2 + g) / 3
            P[row, back] += (2 + g) / 3
        else:
            P[row, nxt] += (1 + 2 * g) / 3
            P[row, far] += (1 - g) / 3
            P[row, back] += (1 - g) / 3
        total = P[row].sum()
        if total <= 0:
            raise ChainError(f"row {i} has non-positive mass {total}")
        P[row] /= total
    return MarkovChain.from_matrix(P, theta=theta)


@dataclass
class MatrixPowerCache:
    """Memoized powers ``P**k``; safe to share between threads."""

    chain: MarkovChain
    powers: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        n = self.chain.size
        self.powers.setdefault(0, np.eye(n))
        self.powers.setdefault(1, np.array(self.chain.transitions))

    def __call__(self, k: int) -> np.ndarray:
        return matrix_power(self, k)

    def warm(self, k_max: int) -> "MatrixPowerCache":
        for k in range(k_max + 1):
            matrix_power(self, k)
        return self


def matrix_power(cache: MatrixPowerCache, k: int) -> np.ndarray:
    if k < 0:
        raise ValueError("negative matrix power")
    hit = cache.powers.get(k)
    if hit is not None:
        return hit
    with cache._lock:
        if k not in cache.powers:
            # build upward from the largest cached exponent below k
            base = max(j for j in cache.powers if j < k)
            M = cache.powers[base]
            P = cache.powers[1]
            for j in range(base + 1, k + 1):
                M = M @ P
                cache.powers[j] = M
        return cache.powers[k]


def mixing_time(chain: MarkovChain, tol: float = 1e-3, max_steps: int = 10**5) -> int:
    """First ``n`` with total variation between ``mu0 P^n`` and ``mu`` below ``tol``."""
    v = np.array(chain.initial_dist)
    for n in range(max_steps + 1):
        if 0.5 * np.abs(v - chain.steady_state).sum() < tol:
            return n
        v = v @ chain.transitions
    raise ConvergenceError(f"chain did not mix within {max_steps} steps")


def sample_path(chain: MarkovChain, start_state: int, n_steps: int,
                rng: np.random.Generator) -> np.ndarray:
    """Return ``n_steps + 1`` 0-based states starting at ``start_state``."""
    if not 0 <= start_state < chain.size:
        raise ChainError(f"start state {start_state} out of range")
    cum = np.cumsum(chain.transitions, axis=1)
    cum[:, -1] = 1.0
    draws = rng.random(n_steps)
    path = np.empty(n_steps + 1, dtype=np.int64)
    path[0] = s = start_state
    for t, u in enumerate(draws, start=1):
        s = int(np.searchsorted(cum[s], u, side="right"))
        path[t] = s
    return path
