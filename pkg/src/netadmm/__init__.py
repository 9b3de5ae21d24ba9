"""Decentralized network cost minimization with linearized and exact ADMM."""

from .analysis import RateCertificate, certify_run, check_theorem1, compute_delta, solve_beta
from .dadmm import DadmmConfig, InnerSolverConfig
from .dladmm import SolverConfig, SolverState
from .graph import Network, build_from_spec, build_small_world, build_topology, constraint_matrices
from .harness import ExperimentConfig, run_experiment
from .problem import ProblemInstance, network_constants
from .reference import OptimalPoint, solve_reference

__version__ = "0.1.0"

__all__ = [
    "Network",
    "build_topology",
    "build_small_world",
    "build_from_spec",
    "constraint_matrices",
    "ProblemInstance",
    "network_constants",
    "SolverState",
    "SolverConfig",
    "DadmmConfig",
    "InnerSolverConfig",
    "OptimalPoint",
    "solve_reference",
    "RateCertificate",
    "check_theorem1",
    "solve_beta",
    "compute_delta",
    "certify_run",
    "ExperimentConfig",
    "run_experiment",
]
