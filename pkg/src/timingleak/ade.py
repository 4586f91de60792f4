"""Adaptive Dual Estimation: hysteresis between the goal-oriented schedule
and the periodic one, driven by the leakage Bob expects Eve to reach.

Bob runs a copy of Eve's computation (a *shadow*). At each transmission he
asks what Eve's leakage would be at the next request if he waited
``sigma(s)`` steps under the goal-oriented map, or ``T`` steps under the
periodic one, and switches modes when those predictions cross the
thresholds.

Eve is assumed to know the thresholds and the rule. She replays Bob's mode
from the request times (:func:`replay_mode`) and reads each interval with
the goal-oriented map or the constant period map accordingly, which is the
same model Bob's predictions assume.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .eavesdropper import EveState, leakage_at


class AdeMode(IntEnum):
    GOAL_ORIENTED = 0
    PERIODIC = 1


@dataclass(frozen=True)
class AdeConfig:
    l_min: float
    l_max: float
    period: int
    sigma: np.ndarray
    d_max: int

    def __post_init__(self):
        # thresholds outside [0, 1] are legal: they pin ADE to one mode
        if not self.l_min < self.l_max:
            raise ValueError("need l_min < l_max")
        if self.period < 1:
            raise ValueError("period must be positive")

    def periodic_map(self) -> np.ndarray:
        return np.full(len(self.sigma), self.period, dtype=np.int64)


class AdeDecision(NamedTuple):
    epoch: int
    state: int
    l_sem: float
    l_per: float
    mode_before: int
    mode_after: int
    interval: int


def predict_leakage(shadow: EveState, tau: int, sigma_eff_next, D: int) -> float:
    """Leakage Eve would reach at the next request if it came ``tau`` steps from now."""
    future = shadow.clone()
    future.observe(tau, sigma_eff_next)
    return leakage_at(future, future.last_epoch, D)


def ade_decide(s: int, cfg: AdeConfig, mode: AdeMode, shadow: EveState) -> AdeDecision:
    l_sem = predict_leakage(shadow, int(cfg.sigma[s]), cfg.sigma, cfg.d_max)
    l_per = predict_leakage(shadow, cfg.period, cfg.periodic_map(), cfg.d_max)
    if mode == AdeMode.GOAL_ORIENTED:
        switch = l_sem >= cfg.l_max
        after = AdeMode.PERIODIC if switch else AdeMode.GOAL_ORIENTED
    else:
        after = AdeMode.GOAL_ORIENTED if l_per < cfg.l_min else AdeMode.PERIODIC
    interval = cfg.period if after == AdeMode.PERIODIC else int(cfg.sigma[s])
    return AdeDecision(shadow.last_epoch, s, l_sem, l_per, int(mode), int(after), interval)


def ade_schedule(s: int, cfg: AdeConfig, mode: AdeMode, shadow: EveState):
    """Commit the next interval after receiving ``s``; returns ``(interval, mode)``."""
    d = ade_decide(s, cfg, mode, shadow)
    return d.interval, AdeMode(d.mode_after)


def replay_mode(shadow: EveState, cfg: AdeConfig, mode: AdeMode, tau: int) -> AdeMode:
    """Mode Bob committed at the last request, as Eve reconstructs it from ``tau``.

    ``shadow`` must not yet contain the request that ended the interval.
    From periodic mode the rule does not depend on the hidden state, so the
    replay is exact. From goal-oriented mode only an interval equal to the
    period is ambiguous: it may be a switch, or a state whose own interval
    is the period. Eve then compares the prior mass of the two explanations
    (periodic wins an exact tie).
    """
    if mode == AdeMode.PERIODIC:
        l_per = predict_leakage(shadow, cfg.period, cfg.periodic_map(), cfg.d_max)
        return AdeMode.GOAL_ORIENTED if l_per < cfg.l_min else AdeMode.PERIODIC
    if tau != cfg.period:
        return AdeMode.GOAL_ORIENTED
    predicted = {int(v): predict_leakage(shadow, int(v), cfg.sigma, cfg.d_max)
                 for v in np.unique(cfg.sigma)}
    if predicted.get(cfg.period, np.inf) >= cfg.l_max:
        return AdeMode.PERIODIC
    switch = np.array([predicted[int(v)] >= cfg.l_max for v in cfg.sigma])
    if not switch.any():
        return AdeMode.GOAL_ORIENTED
    f = shadow.forwards[-1]
    m_per = f[switch].sum()
    m_goal = f[(~switch) & (cfg.sigma == cfg.period)].sum()
    return AdeMode.PERIODIC if m_per >= m_goal else AdeMode.GOAL_ORIENTED


def mode_map(cfg: AdeConfig, mode: AdeMode) -> np.ndarray:
    """Interval map Eve applies to an interval run in ``mode``."""
    return cfg.periodic_map() if mode == AdeMode.PERIODIC else np.asarray(cfg.sigma)


DECISION_CSV_COLUMNS = ("epoch", "s", "L_sem", "L_per", "xi_before", "xi_after", "interval")


def write_decision_log(path, decisions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DECISION_CSV_COLUMNS)
        for d in decisions:
            w.writerow([d.epoch, d.state + 1, f"{d.l_sem:.6f}", f"{d.l_per:.6f}",
                        d.mode_before, d.mode_after, d.interval])
