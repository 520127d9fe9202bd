"""
Miscellaneous utility helpers.
"""

from .errors import (  # noqa: F401
    BreakdownError,
    CoefficientBoundError,
    ConfigError,
    ConvergenceError,
    EigenSolverError,
    FracDiffError,
    MeshParseError,
    MeshValidationError,
    NonFiniteError,
    NotSPDError,
    RootBracketError,
    SchemeRunError,
    SolverError,
    ValidationError,
)
