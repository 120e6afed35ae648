"""Solvers and simulators for unifilar finite-state channels with feedback."""

from unifeed.channel import (
    UnifilarChannelSpec,
    builtin,
    validate,
    kl_reward,
    c2_bound,
    sync_input,
    channel_from_json,
    load_channel,
)
from unifeed.capacity import CapacityResult, InputPolicyTable, solve_capacity
from unifeed.exponent import (
    ExponentReport,
    HypothesisPolicies,
    bound_line,
    evaluate_ctilde1_star,
    solve_ctilde1,
)
from unifeed.scheme import EpisodeResult, SchemeConfig, run_episode
from unifeed.montecarlo import StoppingRule, SweepRow, TrialStats, run_stats, sweep
from unifeed.diagnostics import DriftReport, drift_check, info_rate

__all__ = [
    "UnifilarChannelSpec",
    "builtin",
    "validate",
    "kl_reward",
    "c2_bound",
    "sync_input",
    "channel_from_json",
    "load_channel",
    "CapacityResult",
    "InputPolicyTable",
    "solve_capacity",
    "ExponentReport",
    "HypothesisPolicies",
    "bound_line",
    "evaluate_ctilde1_star",
    "solve_ctilde1",
    "EpisodeResult",
    "SchemeConfig",
    "run_episode",
    "StoppingRule",
    "SweepRow",
    "TrialStats",
    "run_stats",
    "sweep",
    "DriftReport",
    "drift_check",
    "info_rate",
]
