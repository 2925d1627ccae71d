"""Numerical engine for the linear Bayesian Nash equilibrium of a
multi-round auction market with a dynamically informed trader and a
target-constrained rebalancer, plus simulation and verification tools."""

from .model import (EquilibriumSolution, InsiderValueCoeffs, ModelParams,
                    MomentTriple, RebalancerValueCoeffs, StepCoefficients,
                    initial_moments, load_solution, save_solution,
                    validate_params)
from .solver import SolverConfig, kyle_benchmark, shoot
from .simulator import SimulationConfig, simulate

__all__ = [
    "EquilibriumSolution", "InsiderValueCoeffs", "ModelParams",
    "MomentTriple", "RebalancerValueCoeffs", "StepCoefficients",
    "initial_moments", "load_solution", "save_solution", "validate_params",
    "SolverConfig", "kyle_benchmark", "shoot",
    "SimulationConfig", "simulate",
]

__version__ = "0.1.0"
