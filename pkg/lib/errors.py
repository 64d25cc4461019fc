"""
Exception hierarchy for unit-cell design runs.

Invalid arguments raise plain ValueError. Everything that goes wrong inside
the numerical pipeline derives from CellDesignError so scripts can map it
to an exit code.
"""

from typing import Any


class CellDesignError(Exception):
    """Base class for pipeline failures."""


class DegenerateElementError(CellDesignError, ValueError):
    """A triangle has zero (or negative) area."""


class MeshIntegrityError(CellDesignError):
    """Periodic pairing, conformity or vertex/element incidence is broken."""


class SolverError(CellDesignError):
    """A linear solve failed or did not reach the residual tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class StaleSolutionError(CellDesignError):
    """Sensitivities requested for a density the cell problems were not solved for."""


class DegenerateTensorError(CellDesignError):
    """A homogenized tensor is singular or indefinite."""


class DegenerateDesignError(CellDesignError):
    """The design has no usable material (or a ratio has no valid denominator)."""


class OptimizationError(CellDesignError):
    """The optimizer received non-finite values from its callbacks."""


class RunAborted(CellDesignError):
    """
    A design run stopped on a hard error.

    Attributes:
        report: Partial RunReport collected up to the failure
        cause: The original exception
    """

    def __init__(self, message: str, report: Any, cause: Exception):
        super().__init__(message)
        self.report = report
        self.cause = cause


# Exit codes used by the scripts
EXIT_OK = 0
EXIT_OTHER = 1
EXIT_DEGENERATE = 2
EXIT_SOLVER = 3


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception to a process exit code.

    RunAborted is unwrapped to its cause first.
    """
    if isinstance(exc, RunAborted):
        exc = exc.cause
    if isinstance(exc, (DegenerateDesignError, DegenerateTensorError)):
        return EXIT_DEGENERATE
    if isinstance(exc, (SolverError, OptimizationError)):
        return EXIT_SOLVER
    return EXIT_OTHER
