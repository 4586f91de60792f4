"""Eve: a timing-only observer running forward-backward smoothing.

Eve sees when Bob pulls an update, never what the update contains. With
the schedule known, each inter-request interval is an observation of the
state received at the start of that interval, so the request stream is an
HMM observed at the transmission epochs.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field

import numpy as np

from .markov import MarkovChain, MatrixPowerCache, entropy

NORM_TOL = 1e-9


@dataclass
class Belief:
    target_time: int
    horizon: int
    dist: np.ndarray


@dataclass
class EveState:
    """Everything Eve has accumulated from the public request stream.

    ``epochs[k]`` is ``t_k`` (``t_0 = 0``), ``intervals[k-1]`` is
    ``tau(k)``, ``sigma_history[k-1]`` is the state-to-interval map in force
    during interval ``k`` and ``forwards[k]`` is the normalized ``f_k``.
    """

    cache: MatrixPowerCache
    epochs: list = field(default_factory=lambda: [0])
    intervals: list = field(default_factory=list)
    sigma_history: list = field(default_factory=list)
    forwards: list = field(default_factory=list)
    forward_fallbacks: int = 0
    backward_fallbacks: int = 0
    degenerate_beliefs: int = 0

    def __post_init__(self):
        if not self.forwards:
            self.forwards.append(np.array(self.chain.initial_dist, dtype=float))

    @property
    def chain(self) -> MarkovChain:
        return self.cache.chain

    @property
    def last_epoch(self) -> int:
        return self.epochs[-1]

    @property
    def fallback_count(self) -> int:
        return self.forward_fallbacks + self.backward_fallbacks + self.degenerate_beliefs

    def observe(self, tau: int, sigma_eff) -> np.ndarray:
        """Record a request ``tau`` steps after the previous one."""
        sigma_eff = np.asarray(sigma_eff, dtype=np.int64)
        f, fell_back = forward_update(self.forwards[-1], tau, sigma_eff, self.cache)
        self.forward_fallbacks += fell_back
        self.epochs.append(self.last_epoch + tau)
        self.intervals.append(int(tau))
        self.sigma_history.append(sigma_eff)
        self.forwards.append(f)
        return f

    def clone(self) -> "EveState":
        # stored vectors are never mutated in place, so sharing them is fine
        return EveState(self.cache, list(self.epochs), list(self.intervals),
                        list(self.sigma_history), list(self.forwards),
                        self.forward_fallbacks, self.backward_fallbacks,
                        self.degenerate_beliefs)

    def last_index(self, n: int) -> int:
        """``K(n)``: index of the last transmission at or before ``n``."""
        return bisect.bisect_right(self.epochs, n) - 1


def _normalize(v: np.ndarray) -> np.ndarray | None:
    total = v.sum()
    if not total > 0:
        return None
    return v / total


def forward_update(f_prev, tau: int, sigma_eff, cache: MatrixPowerCache):
    """One filtering step; returns ``(f_k, fell_back)``.

    Only states whose interval equals ``tau`` can have produced the
    observation. If none of them has mass, the observation is impossible
    under Eve's model and the step falls back to a blind propagation.
    """
    if tau < 1:
        raise ValueError("intervals are at least one step")
    f_prev = np.asarray(f_prev, dtype=float)
    Pt = cache(tau)
    compatible = np.asarray(sigma_eff) == tau
    f = _normalize((f_prev * compatible) @ Pt)
    if f is None:
        return _normalize(f_prev @ Pt), True
    return f, False


def backward_pass(state: EveState, n: int, k_min: int = 0) -> dict:
    """Backward vectors ``{k: b_k(.; n)}`` for ``k_min <= k <= K(n)``.

    The vector at ``K(n)`` is uniform. Each vector is rescaled to sum to 1,
    which leaves the smoothed beliefs unchanged.
    """
    K = state.last_index(n)
    size = state.chain.size
    uniform = np.full(size, 1.0 / size)
    out = {K: uniform}
    b = uniform
    for k in range(K - 1, max(k_min, 0) - 1, -1):
        tau = state.intervals[k]  # tau(k+1)
        compatible = state.sigma_history[k] == tau
        raw = compatible * (state.cache(tau) @ b)
        b = _normalize(raw)
        if b is None:
            state.backward_fallbacks += 1
            b = uniform
        out[k] = b
    return out


def smooth_at_transmission(f_k, b_k):
    """Posterior of the state at a transmission epoch; ``(phi, degenerate)``."""
    phi = _normalize(np.asarray(f_k) * np.asarray(b_k))
    if phi is None:
        return np.full(len(f_k), 1.0 / len(f_k)), True
    return phi, False


def smooth_between(phi_k, phi_k1, ell: int, tau_k1: int, cache: MatrixPowerCache):
    """Belief ``ell`` steps after epoch ``k``, between it and epoch ``k+1``.

    Combines the two neighbouring epoch beliefs as independent marginals,
    propagated forward ``ell`` steps and backward ``tau_k1 - ell`` steps,
    then renormalizes. Returns ``(phi, degenerate)``.
    """
    if not 0 <= ell <= tau_k1:
        raise ValueError("ell must lie between the two epochs")
    ahead = np.asarray(phi_k) @ cache(ell)
    behind = cache(tau_k1 - ell) @ np.asarray(phi_k1)
    phi = _normalize(ahead * behind)
    if phi is None:
        return np.full(len(ahead), 1.0 / len(ahead)), True
    return phi, False


class _Smoother:
    """Shared backward pass for every belief Eve forms at horizon ``n``."""

    def __init__(self, state: EveState, n: int, m_min: int):
        self.state = state
        self.n = n
        self.K = state.last_index(n)
        k_lo = state.last_index(max(m_min, 0))
        self.b = backward_pass(state, n, k_lo)
        self._phi = {}

    def phi(self, k: int) -> np.ndarray:
        if k not in self._phi:
            phi, bad = smooth_at_transmission(self.state.forwards[k], self.b[k])
            self.state.degenerate_beliefs += bad
            self._phi[k] = phi
        return self._phi[k]

    def belief(self, m: int) -> np.ndarray:
        st = self.state
        k = st.last_index(m)
        t_k = st.epochs[k]
        if m == t_k:
            return self.phi(k)
        if k < self.K:
            phi, bad = smooth_between(self.phi(k), self.phi(k + 1), m - t_k,
                                      st.intervals[k], st.cache)
            st.degenerate_beliefs += bad
            return phi
        # after the last request nothing constrains the path: extrapolate
        v = self.phi(self.K) @ st.cache(m - t_k)
        return v / v.sum()


def belief_at(state: EveState, n: int, d: int) -> Belief:
    """Eve's belief about the state at ``n - d`` using requests up to ``n``."""
    if not 0 <= d <= n:
        raise ValueError(f"need 0 <= d <= n, got d={d}, n={n}")
    m = n - d
    return Belief(m, n, _Smoother(state, n, m).belief(m))


def beliefs_window(state: EveState, n: int, D: int) -> list:
    """Beliefs for ``d = 0..min(D, n)`` at horizon ``n``, one backward pass."""
    d_top = min(D, n)
    sm = _Smoother(state, n, n - d_top)
    return [Belief(n - d, n, sm.belief(n - d)) for d in range(d_top + 1)]


def leakage(beliefs, mu) -> float:
    """Largest normalized entropy reduction over the beliefs, clamped to [0, 1]."""
    h_mu = entropy(mu)
    if h_mu <= 0:
        raise ValueError("steady state has zero entropy; leakage is undefined")
    best = max(1.0 - entropy(_dist(b)) / h_mu for b in beliefs)
    return float(min(1.0, max(0.0, best)))


def _dist(b):
    return b.dist if isinstance(b, Belief) else b


def leakage_at(state: EveState, n: int, D: int) -> float:
    return leakage(beliefs_window(state, n, D), state.chain.steady_state)


def map_estimate(belief) -> int:
    return int(np.argmax(_dist(belief)))


BELIEF_CSV_COLUMNS = ("n", "d", "entropy", "leakage", "map_state")


def belief_rows(state: EveState, n_steps: int, D: int):
    """Per-(n, d) rows of Eve's beliefs; states are written 1-based."""
    h_mu = entropy(state.chain.steady_state)
    for n in range(n_steps):
        for b in beliefs_window(state, n, D):
            h = entropy(b.dist)
            yield {
                "n": n,
                "d": n - b.target_time,
                "entropy": h,
                "leakage": min(1.0, max(0.0, 1.0 - h / h_mu)),
                "map_state": map_estimate(b) + 1,
            }


def write_belief_csv(path, state: EveState, n_steps: int, D: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BELIEF_CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(belief_rows(state, n_steps, D))
