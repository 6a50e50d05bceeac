"""Importance-driven testing of policies against MDP models."""

from .checker import (
    ConvergenceError,
    QualitativeSets,
    RewardSpec,
    SafetySpec,
    expected_reward,
    max_min_and_q,
    prob_reach_avoid,
    q_optimistic,
    qualitative_sets,
)
from .clustering import ClusterConfig, run_imtc
from .engine import EngineConfig, Objective, RunAborted, RunReport, VerdictSets, run_imt, run_mt, run_rt
from .environments import build_corridor_obstacles, build_oneway_gridworld, build_slippery_gridworld, builtin_layout
from .mdp import Mdp, induce_chain, make_sinks, restrict, validate_mdp
from .mdpfile import format_mdp, load_mdp, parse_mdp
from .policy import ExternalPolicy, PolicyError, TabularPolicy, load_tabular, parse_tabular, spawn_external

__version__ = "0.1.0"

__all__ = [
    "ClusterConfig", "ConvergenceError", "EngineConfig", "ExternalPolicy", "Mdp", "Objective",
    "PolicyError", "QualitativeSets", "RewardSpec", "RunAborted", "RunReport", "SafetySpec",
    "TabularPolicy", "VerdictSets", "build_corridor_obstacles", "build_oneway_gridworld",
    "build_slippery_gridworld", "builtin_layout", "expected_reward", "format_mdp", "induce_chain",
    "load_mdp", "load_tabular", "make_sinks", "max_min_and_q", "parse_mdp", "parse_tabular",
    "prob_reach_avoid", "q_optimistic", "qualitative_sets", "restrict", "run_imt", "run_imtc",
    "run_mt", "run_rt", "spawn_external", "validate_mdp",
]
