"""Exception hierarchy for the toolkit."""
from __future__ import annotations

from typing import Any, Dict, Optional


class LpvError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(LpvError, ValueError):
    """Matrix or vector dimensions are inconsistent."""


class AffineClosureError(LpvError, ValueError):
    """An operation would leave the affine-in-scheduling function class."""


class RegionError(LpvError, ValueError):
    """A point lies outside the declared region."""


class StructureError(LpvError, ValueError):
    """A plant violates the required generalized-plant structure."""


class SolverError(LpvError, RuntimeError):
    """The semidefinite program did not produce a usable solution."""

    def __init__(
        self,
        message: str,
        status: str = "numerical-failure",
        diagnostics: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message)
        self.status = status
        self.diagnostics = dict(diagnostics or {})


class InfeasibleError(SolverError):
    """The LMI system is infeasible."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message, status="infeasible", diagnostics=diagnostics)


class NumericalFailureError(SolverError):
    """The solver failed or returned a point violating the constraints."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message, status="numerical-failure", diagnostics=diagnostics)


class HorizonError(LpvError, IndexError):
    """A trajectory was queried beyond its horizon."""


class ConvergenceError(LpvError, RuntimeError):
    """An iterative solve did not converge."""
