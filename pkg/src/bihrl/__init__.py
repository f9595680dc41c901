"""Bayesian inverse reinforcement learning for agents that plan over options."""

from .estimators import GoalPredictor, HierarchicalIRL, PolicyWalk
from .exceptions import (
    CacheMismatchError,
    CapacityError,
    ContractError,
    ConvergenceWarning,
    DataError,
    DegenerateEvidenceError,
    ModelError,
    OptionDivergenceError,
)
from .inference import (
    ActionTrajectory,
    PosteriorTable,
    SegmentLattice,
    enumerate_option_trajectories,
    log_marginal_likelihood,
    marginal_likelihood,
    posterior_over_rewards,
)
from .mcmc import marginal_theta_estimate, policy_walk, policy_walk_sample
from .mdp import (
    Rationality,
    SoftSolution,
    TabularMdp,
    boltzmann_distribution,
    hard_value_iteration,
    soft_value_iteration,
    soft_value_iteration_actions,
)
from .options import OptionModelBuilder, OptionSpec, atomic_options, build_option_model, goto_option

__version__ = "0.1.0"

__all__ = [
    "ActionTrajectory",
    "CacheMismatchError",
    "CapacityError",
    "ContractError",
    "ConvergenceWarning",
    "DataError",
    "DegenerateEvidenceError",
    "GoalPredictor",
    "HierarchicalIRL",
    "ModelError",
    "OptionDivergenceError",
    "OptionModelBuilder",
    "OptionSpec",
    "PolicyWalk",
    "PosteriorTable",
    "Rationality",
    "SegmentLattice",
    "SoftSolution",
    "TabularMdp",
    "atomic_options",
    "boltzmann_distribution",
    "build_option_model",
    "enumerate_option_trajectories",
    "goto_option",
    "hard_value_iteration",
    "log_marginal_likelihood",
    "marginal_likelihood",
    "marginal_theta_estimate",
    "policy_walk",
    "policy_walk_sample",
    "posterior_over_rewards",
    "soft_value_iteration",
    "soft_value_iteration_actions",
]
