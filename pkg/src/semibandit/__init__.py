"""Contextual semibandit learning with argmax oracles.

Learners follow a ``select(context, rng)`` / ``observe(y, reward)`` protocol
and expose their hyperparameters through the scikit-learn estimator API.
"""
from .baselines import EpsilonGreedy, LinUCB, UniformRandom, egreedy_n
from .core import (
    Context,
    EnvironmentSpec,
    LinearGreedyPolicy,
    ReplayEnvironment,
    SyntheticEnvironment,
    TabularPolicy,
    TabularPolicyClass,
    all_rankings,
    greedy_ranking,
    make_environment,
    make_tabular_class,
    realized_reward,
)
from .eels import EELS, EelsConfig, lambda_star, n_star, v_tilde, vhat_term
from .estimation import History, MixingDistribution, SparseSubdistribution, smoothed_marginals
from .exceptions import ConfigError, LetorParseError, OracleError, SolverStallError
from .harness import ExperimentConfig, run_experiment
from .letor import LetorRecord, build_replay_env, parse_letor_line, read_letor, serialize_letor
from .oracle import AmoDataset, ExactOracle, RegressionOracle, WeightedLeastSquares
from .vcee import VCEE, CoordinateAscentSolver, OpParams, mu_schedule, solve_op

__version__ = "0.1.0"

__all__ = [
    "AmoDataset", "ConfigError", "Context", "CoordinateAscentSolver", "EELS", "EelsConfig",
    "EnvironmentSpec", "EpsilonGreedy", "ExactOracle", "ExperimentConfig", "History",
    "LetorParseError", "LetorRecord", "LinUCB", "LinearGreedyPolicy", "MixingDistribution",
    "OpParams", "OracleError", "RegressionOracle", "ReplayEnvironment", "SolverStallError",
    "SparseSubdistribution", "SyntheticEnvironment", "TabularPolicy", "TabularPolicyClass",
    "UniformRandom", "VCEE", "WeightedLeastSquares", "all_rankings", "build_replay_env",
    "egreedy_n", "greedy_ranking", "lambda_star", "make_environment", "make_tabular_class",
    "mu_schedule", "n_star", "parse_letor_line", "read_letor", "realized_reward",
    "run_experiment", "serialize_letor", "smoothed_marginals", "solve_op", "v_tilde", "vhat_term",
]
