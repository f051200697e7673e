"""Batch reinforcement learning for coordinating a group of EV charging stations.

The fleet is summarised by an aggregate state matrix, decisions are how many
EVs of each flexibility class to charge, and a policy is learned with fitted
Q-iteration from randomly rolled-out experience.
"""

__version__ = "0.1.0"

from .config import ConfigError, FleetConfig, penalty_weight
from .mdp import (
    AggregateState,
    Transition,
    action_candidates,
    apply_action,
    bin_sessions,
    charge_all,
    cost_of,
    count_actions,
    enumerate_actions,
    rollout,
    step,
)
from .sessions import (
    ArrivalProfile,
    EpisodeDay,
    Session,
    duplicate_sessions,
    episodize,
    generate_synthetic,
    load_sessions,
    read_episodes,
    write_episodes,
)
from .regressors import MLP, ExactTable, MLPConfig
from .fqi import ExperienceSet, Policy, collect_exhaustive, collect_experience, fitted_q_iteration
from .baselines import bau_rollout, dp_oracle, offline_optimum
from .evaluation import (
    EvalReport,
    SplitSpec,
    TrainSettings,
    evaluate_policy,
    normalized_cost,
    run_monthly_sweep,
    run_scale_test,
    run_training_sweep,
    train_policy,
)

__all__ = [
    "__version__",
    "ConfigError",
    "FleetConfig",
    "penalty_weight",
    "AggregateState",
    "Transition",
    "action_candidates",
    "apply_action",
    "bin_sessions",
    "charge_all",
    "cost_of",
    "count_actions",
    "enumerate_actions",
    "rollout",
    "step",
    "ArrivalProfile",
    "EpisodeDay",
    "Session",
    "duplicate_sessions",
    "episodize",
    "generate_synthetic",
    "load_sessions",
    "read_episodes",
    "write_episodes",
    "MLP",
    "ExactTable",
    "MLPConfig",
    "ExperienceSet",
    "Policy",
    "collect_exhaustive",
    "collect_experience",
    "fitted_q_iteration",
    "bau_rollout",
    "dp_oracle",
    "offline_optimum",
    "EvalReport",
    "SplitSpec",
    "TrainSettings",
    "evaluate_policy",
    "normalized_cost",
    "run_monthly_sweep",
    "run_scale_test",
    "run_training_sweep",
    "train_policy",
]
