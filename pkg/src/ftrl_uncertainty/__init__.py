"""Observer uncertainty in FTRL dynamics for two-player zero-sum games."""

from .dynamics import AlgorithmSpec, Rule, Scheme
from .errors import (ConfigError, ContractViolation, DomainError, IntegrationFailure,
                     InvariantViolation, NumericalFailure)
from .game import DualState, Game, PrimalState, RegKind, Regularizer
from .linear import CovarianceMatrix, GrowthClass, MapKind

__all__ = [
    "AlgorithmSpec", "Rule", "Scheme", "ConfigError", "ContractViolation", "DomainError",
    "IntegrationFailure", "InvariantViolation", "NumericalFailure", "DualState", "Game",
    "PrimalState", "RegKind", "Regularizer", "CovarianceMatrix", "GrowthClass", "MapKind",
]
__version__ = "0.1.0"
