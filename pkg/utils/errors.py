"""
Exception hierarchy for the superprocess lab.

Validation problems surface as ConfigError (a ValueError, so pydantic
validators and argparse callers can treat them uniformly); numerical and
simulation failures carry the partial result that was available when they
happened.
"""

from typing import Any, Optional


class LabError(Exception):
    """Base class for every error raised by the lab."""


class ConfigError(LabError, ValueError):
    """Malformed configuration, unknown keys or invalid parameter values."""


class RegimeError(ConfigError):
    """An operation was requested in a regime it is not defined for."""


class QuadratureError(LabError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, value: Any = None, abs_error: float = float("nan")):
        super().__init__(message)
        self.value = value
        self.abs_error = abs_error

    def __reduce__(self):
        return type(self), (str(self), self.value, self.abs_error)


class PopulationCapExceeded(LabError, RuntimeError):
    """A branching simulation grew past its configured population cap."""

    def __init__(self, message: str, partial_state: Optional[Any] = None):
        super().__init__(message)
        self.partial_state = partial_state

    def __reduce__(self):
        # keeps the partial state when the error crosses a process boundary
        return type(self), (str(self), self.partial_state)


class NoSurvivorsError(LabError):
    """A conditioned statistic was requested but every replica went extinct."""
