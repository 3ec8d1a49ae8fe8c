"""Decreasing-step Euler simulation of ergodic diffusions with
non-asymptotic Gaussian deviation bounds and confidence intervals."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import ConfigurationError, DataError, ErgodevError, SimulationError
from .steps import StepSequence

__all__ = [
    "__version__",
    "ConfigurationError",
    "DataError",
    "ErgodevError",
    "SimulationError",
    "StepSequence",
]
