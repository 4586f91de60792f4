import csv
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from timingleak.markov import MarkovChain, MatrixPowerCache
from timingleak.policy import GOAL_ORIENTED, PERIODIC, SchedulingPolicy
from timingleak.simulation import (TRACE_COLUMNS, EpisodeConfig, Scenario, compute_metrics,
                                   episode_seed, metrics_json, reward, run_episode,
                                   scenario_for, write_trace_csv)


def identity_scenario(period=2, size=4):
    chain = MarkovChain.from_matrix(np.eye(size))
    return Scenario(chain, MatrixPowerCache(chain),
                    SchedulingPolicy(GOAL_ORIENTED, 10, sigma=np.full(size, 3)),
                    SchedulingPolicy(PERIODIC, 10, sigma=np.full(size, period), period=period))


def test_identity_chain_periodic_trace():
    cfg = EpisodeConfig(size=4, policy="pp", beta=0.5, n_steps=4, D=1)
    tr = run_episode(cfg, identity_scenario())
    assert tr.actions.tolist() == [1, 0, 1, 0]
    assert np.all(tr.states == tr.states[0])
    assert np.all(tr.estimates == tr.states)
    assert tr.rewards.tolist() == [0.5, 1.0, 0.5, 1.0]
    assert tr.epochs == [0, 2]


@pytest.mark.parametrize("policy", ["mpi", "pp", "ade"])
def test_rewards_recompute_from_actions(policy):
    tr = run_episode(EpisodeConfig(policy=policy, seed=3, beta=0.7))
    for n in range(tr.n_steps):
        assert tr.rewards[n] == reward(int(tr.states[n]), int(tr.actions[n]),
                                       int(tr.estimates[n]), 0.7)


@pytest.mark.parametrize("policy", ["mpi", "pp", "ade"])
def test_actions_mark_exactly_the_epochs(policy):
    tr = run_episode(EpisodeConfig(policy=policy, seed=5))
    assert np.flatnonzero(tr.actions).tolist() == tr.epochs
    assert all(1 <= t <= 10 for t in tr.intervals)
    assert tr.actions[0] == 1


def test_mpi_interval_follows_sigma():
    tr = run_episode(EpisodeConfig(policy="mpi", seed=6, theta=8.0))
    sigma = scenario_for(tr.config).mpi.sigma
    for t, tau in zip(tr.epochs, tr.intervals):
        assert tau == sigma[tr.states[t]]


def test_estimates_between_requests_are_map_guesses():
    tr = run_episode(EpisodeConfig(policy="mpi", seed=7, theta=8.0))
    cache = scenario_for(tr.config).cache
    last = 0
    for n in range(tr.n_steps):
        if tr.actions[n]:
            last = n
            assert tr.estimates[n] == tr.states[n]
        else:
            assert tr.estimates[n] == np.argmax(cache(n - last)[tr.states[last]])


@pytest.mark.parametrize("policy", ["mpi", "pp", "ade"])
def test_same_seed_same_trace(policy):
    cfg = EpisodeConfig(policy=policy, seed=11)
    a, b = run_episode(cfg), run_episode(cfg)
    for name in ("states", "actions", "estimates", "rewards", "modes", "leakage"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_concurrent_episodes_match_serial():
    cfgs = [EpisodeConfig(policy=p, seed=episode_seed(0, k))
            for k in range(3) for p in ("mpi", "ade")]
    serial = [run_episode(c).leakage.tobytes() for c in cfgs]
    with ThreadPoolExecutor(4) as pool:
        parallel = [t.leakage.tobytes() for t in pool.map(run_episode, cfgs)]
    assert serial == parallel


def test_episode_seeds_are_distinct():
    seeds = {episode_seed(0, k) for k in range(100)} | {episode_seed(1, k) for k in range(100)}
    assert len(seeds) == 200


@pytest.mark.parametrize("policy", ["mpi", "pp", "ade"])
def test_metrics_in_unit_interval(policy):
    tr = run_episode(EpisodeConfig(policy=policy, seed=2))
    m = compute_metrics(tr)
    for v in (m.mean_leakage, m.max_leakage, m.eta_B, m.eta_E):
        assert 0 <= v <= 1
    assert m.mean_leakage <= m.max_leakage


def test_reward_minus_zero_leakage():
    tr = run_episode(EpisodeConfig(size=4, policy="pp", n_steps=6, D=1), identity_scenario())
    tr.leakage[:] = 0.0
    m = compute_metrics(tr, epsilon=1.0)
    assert m.R_B == m.mean_reward
    assert m.eta_B == 1.0


def test_leakage_penalty():
    tr = run_episode(EpisodeConfig(policy="mpi", seed=1))
    m = compute_metrics(tr, epsilon=0.5)
    assert m.R_B == pytest.approx(m.mean_reward - 0.5 * m.mean_leakage)


def test_eta_b_excluding_transmissions():
    tr = run_episode(EpisodeConfig(policy="mpi", seed=1))
    with_tx = compute_metrics(tr).eta_B
    without = compute_metrics(tr, count_tx_correct=False).eta_B
    silent = tr.actions == 0
    assert without == pytest.approx((tr.states == tr.estimates)[silent].mean())
    assert with_tx >= without


def test_metrics_for_other_delay_recompute_leakage():
    tr = run_episode(EpisodeConfig(policy="mpi", seed=1, D=5))
    assert compute_metrics(tr, D=0).mean_leakage <= compute_metrics(tr, D=5).mean_leakage


@pytest.mark.parametrize("kwargs", [dict(policy="x"), dict(n_steps=0), dict(D=300),
                                    dict(epsilon=-1.0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EpisodeConfig(**kwargs)


def test_trace_csv_and_metrics_json(tmp_path):
    cfg = EpisodeConfig(policy="ade", seed=9, n_steps=40)
    tr = run_episode(cfg)
    path = tmp_path / "trace.csv"
    write_trace_csv(path, tr)
    rows = list(csv.DictReader(path.open()))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 40
    assert [int(r["s"]) for r in rows] == (tr.states + 1).tolist()
    doc = json.loads(metrics_json(compute_metrics(tr), cfg))
    assert {"mean_reward", "mean_leakage", "max_leakage", "eta_B", "eta_E", "R_B",
            "fallback_count", "flags", "config"} <= set(doc)
    assert doc["config"]["seed"] == 9
