"""
Action of ``D^{-1/2}`` and ``D^{1/2}`` for ``D = M^-1 A``.

:class:`PseudoParabolicSolver` integrates the auxiliary problem

    (s G + delta I) dy/ds + G y / 2 = 0,    G = D - delta I,    y(0) = delta^{-1/2} w,

over ``s`` in ``[0, 1]``; ``y(1) = D^{-1/2} w``. Each pseudo-time step is one
SPD solve with a linear combination of ``A`` and ``M``. :class:`SpectralSolver`
applies the same powers exactly through a dense eigendecomposition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.config import PSEUDO_CONFIG, SOLVER_CONFIG
from app.services.fem import DiscreteOperator, Field, m_norm
from app.services.sparse_linalg import EigenDecomposition, cg_solve
from app.utils.errors import ConfigError, NonFiniteError, SolverError

logger = logging.getLogger(__name__)

BACKWARD_EULER = "backward_euler"
CRANK_NICOLSON = "crank_nicolson"
_INTEGRATOR_ALIASES = {
    "be": BACKWARD_EULER,
    "backward_euler": BACKWARD_EULER,
    "cn": CRANK_NICOLSON,
    "crank_nicolson": CRANK_NICOLSON,
}

PSEUDO_PARABOLIC = "pseudo_parabolic"
SPECTRAL = "spectral"
BACKENDS = (PSEUDO_PARABOLIC, SPECTRAL)


@dataclass(frozen=True)
class PseudoParabolicConfig:
    K: int = PSEUDO_CONFIG["k_steps"]
    integrator: str = PSEUDO_CONFIG["integrator"]
    inner_tol: float = SOLVER_CONFIG["tol"]
    max_iter: Optional[int] = None

    def __post_init__(self):
        integrator = _INTEGRATOR_ALIASES.get(str(self.integrator).lower())
        if integrator is None:
            raise ConfigError(f"unknown pseudo-time integrator '{self.integrator}' (expected be or cn)")
        object.__setattr__(self, "integrator", integrator)
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"pseudo-time step count K must be a positive integer (got {self.K})")
        object.__setattr__(self, "K", int(self.K))
        if not 0.0 < self.inner_tol < 1.0:
            raise ConfigError(f"inner solver tolerance must lie in (0, 1) (got {self.inner_tol})")

    @property
    def eta(self) -> float:
        return 1.0 / self.K


def solve_mass(op: DiscreteOperator, b, tol: float = SOLVER_CONFIG["tol"]) -> Field:
    """``M^-1 b``."""
    x, _ = cg_solve(op.mass, b, tol=tol)
    return x


def _check_finite(w, what: str):
    if not np.all(np.isfinite(w)):
        raise NonFiniteError(f"{what} contains non-finite values")


def _step_coefficients(cfg: PseudoParabolicConfig, delta: float, k: int):
    eta = cfg.eta
    if cfg.integrator == BACKWARD_EULER:
        s = (k + 1) * eta
        lhs_shift = s + 0.5 * eta
        rhs_shift = s
    else:
        s = (k + 0.5) * eta
        lhs_shift = s + 0.25 * eta
        rhs_shift = s - 0.25 * eta
    # s G + delta M = s A + delta (1 - s) M
    return (lhs_shift, delta * (1.0 - lhs_shift)), (rhs_shift, delta * (1.0 - rhs_shift))


def inv_sqrt_factor(eigenvalues, delta: float = 1.0, cfg: Optional[PseudoParabolicConfig] = None) -> np.ndarray:
    """What the pseudo-time integration returns for ``lam^{-1/2}`` on an eigenvector with eigenvalue ``lam``.

    Exact for the discrete problem: every step multiplies a mode by
    ``(a_r lam + b_r) / (a_l lam + b_l)``.
    """
    cfg = cfg or PseudoParabolicConfig()
    lam = np.asarray(eigenvalues, dtype=float)
    if not delta > 0:
        raise ConfigError(f"delta must be positive (got {delta})")
    y = np.full_like(lam, 1.0 / np.sqrt(delta))
    for k in range(cfg.K):
        (a_l, b_l), (a_r, b_r) = _step_coefficients(cfg, delta, k)
        y = y * (a_r * lam + b_r) / (a_l * lam + b_l)
    return y


def inv_sqrt_relative_error(eigenvalues, delta: float = 1.0, cfg: Optional[PseudoParabolicConfig] = None) -> np.ndarray:
    """Signed relative error of :func:`inv_sqrt_factor` against ``lam^{-1/2}``."""
    lam = np.asarray(eigenvalues, dtype=float)
    return inv_sqrt_factor(lam, delta, cfg) * np.sqrt(lam) - 1.0


@dataclass
class PseudoParabolicSolver:
    """Stateful wrapper that keeps iteration counters across applications."""

    op: DiscreteOperator
    cfg: PseudoParabolicConfig = field(default_factory=PseudoParabolicConfig)
    record_history: bool = False
    iterations: int = 0
    calls: int = 0
    history: List[float] = field(default_factory=list)

    name = PSEUDO_PARABOLIC

    def _step_coefficients(self, k: int):
        """``(alpha, beta)`` pairs for the left and right matrices ``alpha A + beta M``."""
        return _step_coefficients(self.cfg, self.op.delta, k)

    def inv_sqrt(self, w) -> Field:
        w = np.asarray(w, dtype=float)
        _check_finite(w, "input of D^{-1/2}")
        y = w / np.sqrt(self.op.delta)
        if self.record_history:
            self.history = [m_norm(self.op.mass, y)]
        iterations = 0
        for k in range(self.cfg.K):
            (a_l, b_l), (a_r, b_r) = self._step_coefficients(k)
            rhs = a_r * (self.op.stiffness @ y) + b_r * (self.op.mass @ y)
            y, info = cg_solve(self.op.combine(a_l, b_l), rhs, tol=self.cfg.inner_tol, max_iter=self.cfg.max_iter, x0=y)
            iterations += info.iterations
            _check_finite(y, f"pseudo-time level {k + 1}")
            if self.record_history:
                self.history.append(m_norm(self.op.mass, y))
        self.iterations += iterations
        self.calls += 1
        logger.debug("D^{-1/2} (%s, K=%d): %d CG iterations", self.cfg.integrator, self.cfg.K, iterations)
        return y

    def sqrt(self, w) -> Field:
        """``D^{1/2} w`` as the Galerkin action ``M^-1 A D^{-1/2} w``."""
        g = self.inv_sqrt(w)
        return solve_mass(self.op, self.op.stiffness @ g, tol=self.cfg.inner_tol)


def oracle_apply_power(eig: EigenDecomposition, w, p: float) -> Field:
    """``sum_k lambda_k^p (phi_k' M w) phi_k``."""
    coefficients = eig.coefficients(w)
    if p != int(p) and eig.lambda_min <= 0.0:
        raise SolverError(f"fractional power {p} of an operator with eigenvalue {eig.lambda_min:.3e}")
    return eig.synthesize(eig.eigenvalues**p * coefficients)


@dataclass
class SpectralSolver:
    """Exact ``D^{+-1/2}`` from a dense eigendecomposition (small meshes only)."""

    eig: EigenDecomposition
    iterations: int = 0
    calls: int = 0

    name = SPECTRAL

    def inv_sqrt(self, w) -> Field:
        self.calls += 1
        return oracle_apply_power(self.eig, w, -0.5)

    def sqrt(self, w) -> Field:
        self.calls += 1
        return oracle_apply_power(self.eig, w, 0.5)


def make_backend(name: str, op: DiscreteOperator, cfg: Optional[PseudoParabolicConfig] = None,
                 eig: Optional[EigenDecomposition] = None):
    if name == PSEUDO_PARABOLIC:
        return PseudoParabolicSolver(op, cfg or PseudoParabolicConfig())
    if name == SPECTRAL:
        if eig is None:
            raise ConfigError("the spectral backend needs an eigendecomposition (oracle) of the operator")
        return SpectralSolver(eig)
    raise ConfigError(f"unknown square-root backend '{name}' (expected one of {', '.join(BACKENDS)})")


def apply_inv_sqrt(op: DiscreteOperator, w, cfg: Optional[PseudoParabolicConfig] = None) -> Field:
    return PseudoParabolicSolver(op, cfg or PseudoParabolicConfig()).inv_sqrt(w)


def apply_sqrt(op: DiscreteOperator, w, cfg: Optional[PseudoParabolicConfig] = None) -> Field:
    return PseudoParabolicSolver(op, cfg or PseudoParabolicConfig()).sqrt(w)
