import csv
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timingleak.eavesdropper import (BELIEF_CSV_COLUMNS, EveState, backward_pass, belief_at,
                                     beliefs_window, forward_update, leakage, leakage_at,
                                     map_estimate, smooth_at_transmission, smooth_between,
                                     write_belief_csv)
from timingleak.markov import MarkovChain, MatrixPowerCache, build_chain, mixing_time
from timingleak.oracles import brute_force_epoch_posteriors, brute_force_posterior
from timingleak.policy import tune_periodic

P3 = np.array([[0.2, 0.5, 0.3],
               [0.6, 0.1, 0.3],
               [0.25, 0.25, 0.5]])


def cache_of(P):
    return MatrixPowerCache(MarkovChain.from_matrix(P))


def observed(P, sigma, intervals):
    eve = EveState(cache_of(P))
    for tau in intervals:
        eve.observe(tau, sigma)
    return eve


# -- forward -------------------------------------------------------------------

def test_forward_periodic_is_blind_update():
    cache = cache_of(P3)
    f_prev = np.array([0.1, 0.6, 0.3])
    f, fell = forward_update(f_prev, 3, [3, 3, 3], cache)
    assert not fell
    np.testing.assert_allclose(f, f_prev @ np.linalg.matrix_power(P3, 3), atol=1e-15)


def test_forward_point_mass():
    cache = cache_of(P3)
    f, _ = forward_update([0, 1, 0], 2, [1, 2, 1], cache)
    np.testing.assert_allclose(f, np.linalg.matrix_power(P3, 2)[1], atol=1e-15)


def test_forward_filters_incompatible_states():
    cache = cache_of(P3)
    f, fell = forward_update([0.5, 0.5, 0.0], 2, [2, 3, 2], cache)
    assert not fell
    np.testing.assert_allclose(f, np.linalg.matrix_power(P3, 2)[0], atol=1e-15)


def test_forward_impossible_observation_falls_back():
    cache = cache_of(P3)
    f_prev = np.array([0.2, 0.3, 0.5])
    f, fell = forward_update(f_prev, 4, [1, 2, 3], cache)
    assert fell
    np.testing.assert_allclose(f, f_prev @ np.linalg.matrix_power(P3, 4), atol=1e-15)
    eve = EveState(cache)
    eve.observe(4, [1, 2, 3])
    assert eve.forward_fallbacks == 1 and eve.fallback_count == 1


def test_forward_rejects_zero_interval():
    with pytest.raises(ValueError):
        forward_update([1, 0, 0], 0, [1, 1, 1], cache_of(P3))


# -- backward --------------------------------------------------------------------

def test_backward_terminal_vector_is_uniform():
    eve = observed(P3, [1, 2, 2], [2, 1])
    b = backward_pass(eve, eve.last_epoch + 3)
    np.testing.assert_allclose(b[2], 1 / 3)


def test_backward_swap_chain_stays_uniform():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    eve = observed(swap, [2, 2], [2, 2, 2])
    for b in backward_pass(eve, eve.last_epoch).values():
        np.testing.assert_allclose(b, 0.5, atol=1e-15)


def test_backward_literal_recursion():
    sigma = np.array([1, 2, 2])
    eve = observed(P3, sigma, [2, 1])
    b = backward_pass(eve, eve.last_epoch)
    u = np.full(3, 1 / 3)
    b1 = (sigma == 1) * (P3 @ u)
    b1 /= b1.sum()
    b0 = (sigma == 2) * (np.linalg.matrix_power(P3, 2) @ b1)
    b0 /= b0.sum()
    np.testing.assert_allclose(b[1], b1, atol=1e-15)
    np.testing.assert_allclose(b[0], b0, atol=1e-15)


def test_backward_zero_vector_falls_back():
    eve = EveState(cache_of(P3))
    eve.observe(3, [1, 2, 3])
    eve.observe(1, [2, 2, 2])  # nobody has interval 1: impossible step
    b = backward_pass(eve, eve.last_epoch)
    np.testing.assert_allclose(b[1], 1 / 3)
    assert eve.backward_fallbacks >= 1


# -- smoothing at epochs ------------------------------------------------------------

def test_smooth_uniform_backward_returns_forward():
    f = np.array([0.2, 0.3, 0.5])
    phi, bad = smooth_at_transmission(f, np.full(3, 1 / 3))
    np.testing.assert_allclose(phi, f)
    assert not bad


def test_smooth_point_mass_backward():
    phi, _ = smooth_at_transmission(np.full(3, 1 / 3), [0, 0, 1])
    np.testing.assert_allclose(phi, [0, 0, 1])


def test_smooth_degenerate_is_uniform():
    phi, bad = smooth_at_transmission([1, 0, 0], [0, 1, 0])
    assert bad
    np.testing.assert_allclose(phi, 1 / 3)


@given(seed=st.integers(0, 2**31 - 1), n_tx=st.integers(1, 3))
@settings(max_examples=30, deadline=None)
def test_epoch_beliefs_match_path_enumeration(seed, n_tx):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(3), size=3)
    sigma = rng.integers(1, 3, size=3)
    intervals = [int(rng.choice(sigma)) for _ in range(n_tx)]
    eve = observed(P, sigma, intervals)
    exact = brute_force_epoch_posteriors(MarkovChain.from_matrix(P), intervals,
                                         [sigma] * n_tx)
    b = backward_pass(eve, eve.last_epoch)
    for k, ref in enumerate(exact):
        phi, _ = smooth_at_transmission(eve.forwards[k], b[k])
        np.testing.assert_allclose(phi, ref, atol=1e-9)


def test_epoch_beliefs_with_changing_maps():
    # the history may switch maps between intervals, as under the adaptive scheduler
    hist = [np.array([2, 1, 2]), np.array([1, 1, 2]), np.array([2, 2, 1])]
    intervals = [2, 1, 2]
    eve = EveState(cache_of(P3))
    for tau, s in zip(intervals, hist):
        eve.observe(tau, s)
    exact = brute_force_epoch_posteriors(MarkovChain.from_matrix(P3), intervals, hist)
    for k, ref in enumerate(exact):
        np.testing.assert_allclose(belief_at(eve, eve.last_epoch, eve.last_epoch - eve.epochs[k]).dist,
                                   ref, atol=1e-9)


# -- smoothing between epochs ------------------------------------------------------

def test_between_at_left_epoch():
    cache = cache_of(P3)
    phi_k = np.array([0.1, 0.2, 0.7])
    phi, _ = smooth_between(phi_k, np.full(3, 1 / 3), 0, 2, cache)
    np.testing.assert_allclose(phi, phi_k, atol=1e-15)


def test_between_hand_instance():
    cache = cache_of(np.array([[0.9, 0.1], [0.2, 0.8]]))
    phi, _ = smooth_between([0.5, 0.5], [0.7, 0.3], 1, 1, cache)
    np.testing.assert_allclose(phi, [0.740385, 0.259615], atol=1e-6)


def test_between_matches_loop_recomputation():
    cache = cache_of(P3)
    phi_k, phi_k1 = np.array([0.3, 0.3, 0.4]), np.array([0.6, 0.1, 0.3])
    P1, P1b = P3, P3
    ref = np.zeros(3)
    for s in range(3):
        for s1 in range(3):
            for s2 in range(3):
                ref[s] += phi_k[s1] * phi_k1[s2] * P1[s1, s] * P1b[s, s2]
    ref /= ref.sum()
    phi, _ = smooth_between(phi_k, phi_k1, 1, 2, cache)
    np.testing.assert_allclose(phi, ref, atol=1e-12)


def test_between_rejects_bad_offset():
    with pytest.raises(ValueError):
        smooth_between([1, 0, 0], [1, 0, 0], 3, 2, cache_of(P3))


# -- belief_at dispatch ------------------------------------------------------------

def test_belief_at_origin_is_prior():
    eve = EveState(cache_of(P3))
    np.testing.assert_allclose(belief_at(eve, 0, 0).dist, 1 / 3)


def test_belief_at_dispatch():
    sigma = np.array([2, 3, 2])
    eve = observed(P3, sigma, [2, 3, 2])  # epochs 0, 2, 5, 7
    n = 9
    b = backward_pass(eve, n)
    phis = [smooth_at_transmission(eve.forwards[k], b[k])[0] for k in range(4)]
    np.testing.assert_allclose(belief_at(eve, n, n - 5).dist, phis[2], atol=1e-15)
    between, _ = smooth_between(phis[1], phis[2], 1, 3, eve.cache)
    np.testing.assert_allclose(belief_at(eve, n, n - 3).dist, between, atol=1e-15)
    after = phis[3] @ np.linalg.matrix_power(P3, 2)
    np.testing.assert_allclose(belief_at(eve, n, 0).dist, after / after.sum(), atol=1e-12)


def test_belief_at_rejects_future_offsets():
    with pytest.raises(ValueError):
        belief_at(EveState(cache_of(P3)), 2, 3)


def test_beliefs_normalized():
    chain = build_chain(30, 8.0)
    eve = EveState(MatrixPowerCache(chain))
    rng = np.random.default_rng(0)
    sigma = rng.integers(1, 5, size=30)
    for _ in range(15):
        eve.observe(int(rng.choice(sigma)), sigma)
    for n in range(0, eve.last_epoch + 4):
        for b in beliefs_window(eve, n, 5):
            assert abs(b.dist.sum() - 1) < 1e-9
            assert np.all(b.dist >= 0)


def test_smoothed_posterior_at_epoch_matches_enumeration_inside_window():
    sigma = np.array([1, 2, 2])
    intervals = [1, 2, 2]
    eve = observed(P3, sigma, intervals)
    chain = MarkovChain.from_matrix(P3)
    for k, t in enumerate(eve.epochs):
        ref = brute_force_posterior(chain, intervals, [sigma] * 3, t)
        np.testing.assert_allclose(belief_at(eve, eve.last_epoch, eve.last_epoch - t).dist,
                                   ref, atol=1e-9)


# -- leakage / MAP ------------------------------------------------------------------

def test_leakage_extremes():
    mu = np.array([0.2, 0.3, 0.5])
    assert leakage([mu, mu], mu) == 0.0
    assert leakage([mu, np.array([0, 1.0, 0])], mu) == 1.0
    assert leakage([np.full(4, 0.25)], np.full(4, 0.25)) == 0.0


def test_leakage_clamped_for_flatter_beliefs():
    assert leakage([np.full(3, 1 / 3)], [0.1, 0.1, 0.8]) == 0.0


def test_leakage_rejects_degenerate_source():
    with pytest.raises(ValueError):
        leakage([np.array([1.0, 0.0])], [1.0, 0.0])


@pytest.mark.parametrize("b, s", [
    (np.eye(10)[6], 6),
    (np.full(5, 0.2), 0),
    (np.array([0.2, 0.5, 0.3]), 1),
])
def test_map_estimate(b, s):
    assert map_estimate(b) == s


# -- properties ------------------------------------------------------------------------

@pytest.mark.parametrize("theta", [1.0, 32.0])
def test_periodic_schedule_leaks_nothing_after_mixing(theta):
    chain = build_chain(30, theta)
    cache = MatrixPowerCache(chain)
    T = tune_periodic(chain, 1.0, 10, cache).period
    eve = EveState(cache)
    n_mix = mixing_time(chain)
    for _ in range(200 // T + 1):
        eve.observe(T, np.full(30, T))
    for D in (0, 5, 15):
        worst = max(leakage_at(eve, n, D) for n in range(n_mix + D, 200))
        assert worst <= 0.05


def test_forward_backward_cost_is_linear():
    chain = build_chain(30, 8.0)
    cache = MatrixPowerCache(chain).warm(10)
    sigma = np.random.default_rng(1).integers(1, 6, size=30)

    def run(n_tx):
        eve = EveState(cache)
        rng = np.random.default_rng(2)
        for _ in range(n_tx):
            eve.observe(int(rng.choice(sigma)), sigma)
        t0 = time.perf_counter()
        for _ in range(20):
            backward_pass(eve, eve.last_epoch)
        return time.perf_counter() - t0

    run(50)  # warm-up
    ratio = min(run(800) for _ in range(3)) / min(run(400) for _ in range(3))
    assert ratio < 2.5


def test_belief_csv(tmp_path):
    eve = observed(P3, [1, 2, 2], [2, 1, 2])
    path = tmp_path / "beliefs.csv"
    write_belief_csv(path, eve, 6, 2)
    rows = list(csv.DictReader(path.open()))
    assert tuple(rows[0]) == BELIEF_CSV_COLUMNS
    assert len(rows) == 1 + 2 + 3 * 4
    assert all(1 <= int(r["map_state"]) <= 3 for r in rows)
    assert all(0 <= float(r["leakage"]) <= 1 for r in rows)
