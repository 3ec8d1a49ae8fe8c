"""Exception hierarchy shared by all ergodev modules."""

from __future__ import annotations


class ErgodevError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ErgodevError):
    """Invalid user input: unknown model, out-of-range parameter, bad config file.

    The command line maps this to exit code 2.
    """


class SimulationError(ErgodevError):
    """A simulation produced a non-finite state.

    Carries the step index at which the trajectory left the finite range.
    The command line maps this to exit code 3.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DataError(ErgodevError):
    """Computed data is unusable for the requested statistic.

    Example: a self-normalised statistic whose empirical normaliser is not
    strictly positive.
    """
