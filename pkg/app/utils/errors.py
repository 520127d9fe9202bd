"""
Exception hierarchy shared by the solver library and the command line.

Every exception carries the process exit code the CLI reports for it, so the
library can raise freely and only ``main.py`` decides how a failure ends.
"""

from __future__ import annotations

from typing import Any, Optional, Sequence


class FracDiffError(Exception):
    """Base class for all library errors."""

    exit_code = 1

    if not hasattr(BaseException, "add_note"):  # Python < 3.11

        def add_note(self, note: str) -> None:
            if not isinstance(note, str):
                raise TypeError("note must be a str")
            if not hasattr(self, "__notes__"):
                self.__notes__ = []
            self.__notes__.append(note)


class ConfigError(FracDiffError):
    """Invalid configuration value, unknown option or missing input file."""

    exit_code = 2


class SolverError(FracDiffError):
    """A numerical procedure could not produce a trustworthy result."""

    exit_code = 3


class ConvergenceError(SolverError):
    """Iterative solver stopped at ``max_iter`` above the requested tolerance."""

    def __init__(self, method: str, iterations: int, residual: float, tol: float):
        self.method = method
        self.iterations = iterations
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"{method} did not converge after {iterations} iterations "
            f"(relative residual {residual:.3e}, tolerance {tol:.1e})"
        )


class BreakdownError(SolverError):
    """BiCGStab hit a vanishing inner product before converging."""

    def __init__(self, quantity: str, iteration: int):
        self.quantity = quantity
        self.iteration = iteration
        super().__init__(f"BiCGStab breakdown at iteration {iteration}: {quantity} vanished")


class NotSPDError(SolverError):
    """Matrix handed to CG is not symmetric positive definite."""


class EigenSolverError(SolverError):
    """Dense generalized eigensolver failure (Cholesky, size cap, Jacobi sweeps)."""


class NonFiniteError(SolverError):
    """A state or intermediate vector contains NaN or infinity."""


class RootBracketError(SolverError):
    """Bisection bracket does not contain a sign change."""

    def __init__(self, lo: float, hi: float, f_lo: float, f_hi: float):
        self.interval = (lo, hi)
        super().__init__(
            f"no sign change on [{lo:.12g}, {hi:.12g}] (f = {f_lo:.3e}, {f_hi:.3e})"
        )


class SchemeRunError(SolverError):
    """A time step failed; ``trajectory`` holds the levels computed before it."""

    def __init__(self, message: str, trajectory: Any = None):
        self.trajectory = trajectory
        super().__init__(message)


class ValidationError(FracDiffError):
    """Input data violates a structural or physical invariant."""

    exit_code = 4


class MeshParseError(ValidationError):
    """Malformed mesh file."""

    def __init__(self, path: str, line: Optional[int], message: str):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


class MeshValidationError(ValidationError):
    """One or more mesh invariants do not hold; ``issues`` lists them all."""

    def __init__(self, issues: Sequence[str]):
        self.issues = list(issues)
        summary = "; ".join(self.issues[:5])
        if len(self.issues) > 5:
            summary += f"; ... ({len(self.issues) - 5} more)"
        super().__init__(f"invalid mesh: {summary}")


class CoefficientBoundError(ValidationError):
    """Coefficient outside its admissible range at a quadrature point."""
