"""Passive bosonic randomized benchmarking: simulation, irrep filters and analysis."""

from .errors import (
    ArgumentError,
    ConfigError,
    DataError,
    DependencyError,
    NumericalError,
    PassiveRBError,
)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "ConfigError",
    "DataError",
    "DependencyError",
    "NumericalError",
    "PassiveRBError",
    "__version__",
]
