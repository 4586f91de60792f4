"""Timing side-channel leakage of goal-oriented pull scheduling.

A remote monitor pulls updates from a Markov source on a state-dependent
schedule; an eavesdropper who only sees *when* the pulls happen runs
forward-backward smoothing on those times. The package computes the
schedules, the eavesdropper's beliefs and leakage, the hysteresis
countermeasure, and runs the experiment grid.
"""

from .ade import AdeConfig, AdeMode, ade_schedule, predict_leakage
from .eavesdropper import (Belief, EveState, backward_pass, belief_at, forward_update,
                           leakage, map_estimate, smooth_at_transmission, smooth_between)
from .markov import (MarkovChain, MatrixPowerCache, build_chain, entropy, g_factor,
                     matrix_power, sample_path, steady_state)
from .policy import (PolicyAnalytics, SchedulingPolicy, extract_sigma, policy_analytics,
                     solve_optimal_policy, tune_periodic)
from .simulation import EpisodeConfig, EpisodeTrace, MetricsReport, compute_metrics, run_episode

__version__ = "0.1.0"
