"""Distributed quasi-Newton methods (DQN, NN, DGD, PMM-DQN) on simulated networks."""

from distqn.graph import (
    Topology,
    WeightMatrix,
    generate_random_geometric,
    generate_connected_geometric,
    is_connected,
    metropolis_weights,
    extreme_eigenvalues,
)
from distqn.problems import (
    QuadraticProblem,
    LogisticProblem,
    generate_quadratic,
    generate_logistic,
    convexity_constants,
)
from distqn.penalty import PenaltyModel, Splitting, phi_value, phi_gradient, build_splitting
from distqn.dqn import DqnConfig, Variant, dqn_run
from distqn.pmm import PmmConfig, PmmVariant, pmm_run

__version__ = "0.1.0"

__all__ = [
    "Topology",
    "WeightMatrix",
    "generate_random_geometric",
    "generate_connected_geometric",
    "is_connected",
    "metropolis_weights",
    "extreme_eigenvalues",
    "QuadraticProblem",
    "LogisticProblem",
    "generate_quadratic",
    "generate_logistic",
    "convexity_constants",
    "PenaltyModel",
    "Splitting",
    "phi_value",
    "phi_gradient",
    "build_splitting",
    "DqnConfig",
    "Variant",
    "dqn_run",
    "PmmConfig",
    "PmmVariant",
    "pmm_run",
]
