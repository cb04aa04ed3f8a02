# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
"""Exceptions raised by the reduction pipeline.

Configuration and input problems derive from ValueError, numerical breakdowns
from ArithmeticError. The command line maps the first group to exit code 2 and
everything else to exit code 1.
"""
from typing import Any

import numpy as np


class SFDError(Exception):
    """Base class of all errors raised by sfdreduce."""

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        """JSON friendly representation for reports."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            **{key: _jsonable(value) for key, value in self.details.items()},
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return value


class ConfigError(SFDError, ValueError):
    """Malformed configuration document or run option."""

    def __init__(self, message: str, line: int | None = None, **details: Any) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, line=line, **details)
        self.line = line


class UnknownPreset(ConfigError):
    """The requested preset does not exist."""


class UnknownParameter(ConfigError):
    """An override names a parameter the preset does not declare."""


class InvalidParameter(ConfigError):
    """A parameter value is outside its admissible range."""


class EvaluatorFailure(SFDError, ArithmeticError):
    """A system evaluator raised or returned non-finite values."""


class SingularMass(SFDError, ArithmeticError):
    """The full mass matrix is singular at an evaluation point."""


class SingularBlock(SFDError, ArithmeticError):
    """A diagonal block of the mass matrix cannot be factorized."""

    def __init__(self, message: str, block: str, condition: float) -> None:
        super().__init__(message, block=block, condition=condition)
        self.block = block
        self.condition = condition


class NoConvergence(SFDError, ArithmeticError):
    """Newton iteration hit its iteration cap."""

    def __init__(self, message: str, best: np.ndarray, residual: float) -> None:
        super().__init__(message, best=best, residual=residual)
        self.best = best
        self.residual = residual


class SingularJacobian(SFDError, ArithmeticError):
    """The fast Jacobian is singular, the point is near a fold of the graph."""

    def __init__(self, message: str, eta: np.ndarray, condition: float) -> None:
        super().__init__(message, eta=eta, condition=condition)
        self.eta = eta
        self.condition = condition


class UnstableSample(SFDError, ArithmeticError):
    """A sampled critical point is not formally asymptotically stable."""

    def __init__(
        self, message: str, point: np.ndarray, spectrum: np.ndarray | None = None
    ) -> None:
        super().__init__(message, point=point, spectrum=spectrum)
        self.point = point
        self.spectrum = spectrum


class M1NotSmooth(SFDError, ArithmeticError):
    """The slow Schur complement does not extend smoothly to zero epsilon."""


class StepSizeUnderflow(SFDError, ArithmeticError):
    """Integrator step collapsed, the problem is probably stiff."""

    def __init__(self, message: str, t: float, state: np.ndarray) -> None:
        super().__init__(message, t=t, state=state)
        self.t = t
        self.state = state


class RhsFailure(SFDError, ArithmeticError):
    """The right-hand side produced non-finite values."""


class TimeDomainViolation(SFDError, ValueError):
    """Integration span leaves the interval of an aperiodic system."""


class NoApproach(SFDError, ArithmeticError):
    """The full trajectory never came within snap tolerance of the chart."""


class NoSignChange(SFDError, ArithmeticError):
    """The fold indicator keeps its sign along the whole path."""


class DegenerateFold(SFDError, ArithmeticError):
    """The located fold violates the nondegeneracy condition."""


class A4Violated(SFDError, ArithmeticError):
    """Fast forces depend on the slow velocities."""


class A5Violated(SFDError, ArithmeticError):
    """No unforced fixed point on the critical manifold."""


class NearResonance(SFDError, ArithmeticError):
    """Denominator of the cubic SSM coefficients vanishes."""

    def __init__(self, message: str, denominator: float) -> None:
        super().__init__(message, denominator=denominator)
        self.denominator = denominator
