"""
Time integrators for ``M dw/dt + C w + A D^{-1/2} w = M psi``.

Two-level schemes: explicit, regularized with ``R = sigma tau (D + I)`` and its
convection variant. Three-level schemes: explicit Adams and the version
regularized with ``S = sigma tau^2 D``. Oracle schemes (backward Euler,
Crank-Nicolson and exact propagation) work in the eigenbasis of a small mesh.

Every step function takes an optional fractional backend ``frac`` (anything with
``inv_sqrt``/``sqrt``); without it a :class:`PseudoParabolicSolver` is built
from ``cfg.frac``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from app.config import SCHEME_CONFIG, SOLVER_CONFIG
from app.services.fem import DiscreteOperator, Field, m_norm
from app.services.fracpow import (
    BACKENDS,
    PseudoParabolicConfig,
    PseudoParabolicSolver,
    SpectralSolver,
    make_backend,
    solve_mass,
)
from app.services.sparse_linalg import EigenDecomposition, SolveInfo, bicgstab_solve, cg_solve
from app.utils.errors import ConfigError, NonFiniteError, SchemeRunError, SolverError

logger = logging.getLogger(__name__)

EXPLICIT = "explicit"
REGULARIZED2 = "regularized2"
EXPLICIT3 = "explicit3"
REGULARIZED3 = "regularized3"
REGULARIZED2_CONVECTION = "regularized2_convection"
ORACLE_BACKWARD_EULER = "oracle_backward_euler"
ORACLE_CRANK_NICOLSON = "oracle_crank_nicolson"
ORACLE_EXACT = "oracle_exact"

SCHEMES = (
    EXPLICIT,
    REGULARIZED2,
    EXPLICIT3,
    REGULARIZED3,
    REGULARIZED2_CONVECTION,
    ORACLE_BACKWARD_EULER,
    ORACLE_CRANK_NICOLSON,
    ORACLE_EXACT,
)
REGULARIZED_SCHEMES = (REGULARIZED2, REGULARIZED3, REGULARIZED2_CONVECTION)
THREE_LEVEL_SCHEMES = (EXPLICIT3, REGULARIZED3)
ORACLE_SCHEMES = (ORACLE_BACKWARD_EULER, ORACLE_CRANK_NICOLSON, ORACLE_EXACT)
STABLE_SIGMA = 0.25


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = SCHEME_CONFIG["scheme"]
    tau: float = 0.0025
    n_steps: int = SCHEME_CONFIG["n_steps"]
    sigma: float = SCHEME_CONFIG["sigma"]
    frac: PseudoParabolicConfig = field(default_factory=PseudoParabolicConfig)
    sqrt_backend: str = SCHEME_CONFIG["sqrt_backend"]
    tol: float = SOLVER_CONFIG["tol"]

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{self.scheme}' (expected one of {', '.join(SCHEMES)})")
        if self.sqrt_backend not in BACKENDS:
            raise ConfigError(f"unknown square-root backend '{self.sqrt_backend}'")
        if not (np.isfinite(self.tau) and self.tau >= 0.0):
            raise ConfigError(f"time step must be finite and non-negative (got {self.tau})")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ConfigError(f"step count must be a non-negative integer (got {self.n_steps})")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        if self.sigma < 0.0:
            raise ConfigError(f"sigma must be non-negative (got {self.sigma})")
        if not 0.0 < self.tol < 1.0:
            raise ConfigError(f"solver tolerance must lie in (0, 1) (got {self.tol})")
        if self.scheme in REGULARIZED_SCHEMES and self.sigma < STABLE_SIGMA:
            logger.warning(
                "sigma = %g < %g: scheme %s is not unconditionally stable", self.sigma, STABLE_SIGMA, self.scheme
            )

    @classmethod
    def over_interval(cls, t_final: float, n_steps: int, **kwargs) -> "SchemeConfig":
        """Uniform grid of ``n_steps`` steps on ``[0, t_final]``."""
        if t_final < 0:
            raise ConfigError(f"final time must be non-negative (got {t_final})")
        tau = t_final / n_steps if n_steps > 0 else 0.0
        return cls(tau=tau, n_steps=n_steps, **kwargs)

    @property
    def t_final(self) -> float:
        return self.tau * self.n_steps


@dataclass
class LinearSolveCounter:
    solves: int = 0
    iterations: int = 0

    def add(self, info: SolveInfo):
        self.solves += 1
        self.iterations += info.iterations


@dataclass
class EvolutionProblem:
    """Operator, projected initial state, projected source ``psi(t)`` and optional oracle."""

    operator: DiscreteOperator
    initial: Field
    source: Optional[Callable[[float], Field]] = None
    oracle: Optional[EigenDecomposition] = None

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        if self.initial.shape != (self.operator.size,):
            raise ConfigError(f"initial state has shape {self.initial.shape}, expected ({self.operator.size},)")

    def psi(self, t: float) -> Field:
        if self.source is None:
            return np.zeros(self.operator.size)
        return np.asarray(self.source(t), dtype=float)


@dataclass(frozen=True)
class StepDiagnostics:
    n: int
    t: float
    m_norm: float
    g_norm: Optional[float]
    cg_iters: int
    pseudo_iters: int


@dataclass
class Trajectory:
    scheme: str
    times: List[float] = field(default_factory=list)
    states: List[Field] = field(default_factory=list)
    diagnostics: List[StepDiagnostics] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def final(self) -> Field:
        return self.states[-1]

    def m_norms(self) -> np.ndarray:
        return np.array([d.m_norm for d in self.diagnostics])

    def g_norms(self) -> np.ndarray:
        return np.array([np.nan if d.g_norm is None else d.g_norm for d in self.diagnostics])

    def total_cg_iterations(self) -> int:
        return sum(d.cg_iters for d in self.diagnostics)

    def total_pseudo_iterations(self) -> int:
        return sum(d.pseudo_iters for d in self.diagnostics)


def _backend(op: DiscreteOperator, cfg: SchemeConfig, frac):
    return frac if frac is not None else PseudoParabolicSolver(op, cfg.frac)


def _solve_spd(matrix, rhs, cfg: SchemeConfig, x0, counter: Optional[LinearSolveCounter]) -> Field:
    x, info = cg_solve(matrix, rhs, tol=cfg.tol, x0=x0)
    if counter is not None:
        counter.add(info)
    return x


def _regularizer(op: DiscreteOperator, cfg: SchemeConfig):
    """``(1 + sigma tau) M + sigma tau A``."""
    st = cfg.sigma * cfg.tau
    return op.combine(st, 1.0 + st)


def step_explicit(op: DiscreteOperator, w_n, psi_n, cfg: SchemeConfig, frac=None) -> Field:
    """``w + tau (psi - D^{1/2} w)``."""
    frac = _backend(op, cfg, frac)
    return w_n - cfg.tau * frac.sqrt(w_n) + cfg.tau * np.asarray(psi_n)


def step_regularized2(op: DiscreteOperator, w_n, psi_np1, cfg: SchemeConfig, frac=None,
                      counter: Optional[LinearSolveCounter] = None) -> Field:
    frac = _backend(op, cfg, frac)
    B = _regularizer(op, cfg)
    g = frac.inv_sqrt(w_n)
    rhs = B @ w_n - cfg.tau * (op.stiffness @ g) + cfg.tau * (op.mass @ psi_np1)
    return _solve_spd(B, rhs, cfg, w_n, counter)


def step_regularized2_convection(op: DiscreteOperator, w_n, psi_np1, cfg: SchemeConfig, frac=None,
                                 counter: Optional[LinearSolveCounter] = None) -> Field:
    """Regularized two-level step with the convection matrix split symmetrically.

    BiCGStab handles the nonsymmetric system; without convection entries the
    system is SPD and CG is used.
    """
    frac = _backend(op, cfg, frac)
    B = _regularizer(op, cfg)
    g = frac.inv_sqrt(w_n)
    source = -cfg.tau * (op.stiffness @ g) + cfg.tau * (op.mass @ psi_np1)
    if not op.has_convection:
        return _solve_spd(B, B @ w_n + source, cfg, w_n, counter)
    half_c = 0.5 * cfg.tau * op.convection
    rhs = (B - half_c) @ w_n + source
    x, info = bicgstab_solve((B + half_c).tocsr(), rhs, tol=cfg.tol, x0=w_n)
    if counter is not None:
        counter.add(info)
    return x


def step_explicit3(op: DiscreteOperator, w_n, w_nm1, psi_half, cfg: SchemeConfig, frac=None) -> Field:
    """Explicit Adams step, stable only while ``tau <= 1 / ||D^{1/2}||``."""
    frac = _backend(op, cfg, frac)
    extrapolated = 0.5 * (3.0 * np.asarray(w_n) - np.asarray(w_nm1))
    return w_n - cfg.tau * frac.sqrt(extrapolated) + cfg.tau * np.asarray(psi_half)


def step_regularized3(op: DiscreteOperator, w_n, w_nm1, psi_half, cfg: SchemeConfig, frac=None,
                      counter: Optional[LinearSolveCounter] = None) -> Field:
    frac = _backend(op, cfg, frac)
    extrapolated = 0.5 * (3.0 * np.asarray(w_n) - np.asarray(w_nm1))
    g = frac.inv_sqrt(extrapolated)
    rhs = -cfg.tau * (op.stiffness @ g) + cfg.tau * (op.mass @ psi_half)
    system = op.combine(cfg.sigma * cfg.tau**2, 1.0)
    increment = _solve_spd(system, rhs, cfg, None, counter)
    return w_n + increment


def startup_first_level(op: DiscreteOperator, w0, psi0, cfg: SchemeConfig, frac=None) -> Field:
    """Second-order first level ``w0 - tau D^{1/2} w0 + tau^2/2 D w0 + tau psi0``."""
    frac = _backend(op, cfg, frac)
    w0 = np.asarray(w0, dtype=float)
    d_w0 = solve_mass(op, op.stiffness @ w0, tol=cfg.tol)
    return w0 - cfg.tau * frac.sqrt(w0) + 0.5 * cfg.tau**2 * d_w0 + cfg.tau * np.asarray(psi0)


def oracle_backward_euler_step(eig: EigenDecomposition, w_n, psi_np1, tau: float) -> Field:
    """``(I + tau D^{1/2}) w_{n+1} = w_n + tau psi_{n+1}`` mode by mode."""
    root = np.sqrt(eig.eigenvalues)
    coefficients = (eig.coefficients(w_n) + tau * eig.coefficients(psi_np1)) / (1.0 + tau * root)
    return eig.synthesize(coefficients)


def oracle_crank_nicolson_step(eig: EigenDecomposition, w_n, psi_half, tau: float) -> Field:
    root = np.sqrt(eig.eigenvalues)
    denominator = 1.0 + 0.5 * tau * root
    coefficients = (
        (1.0 - 0.5 * tau * root) * eig.coefficients(w_n) + tau * eig.coefficients(psi_half)
    ) / denominator
    return eig.synthesize(coefficients)


def oracle_exact_step(eig: EigenDecomposition, w_n, psi, tau: float) -> Field:
    """Exact propagation over ``tau`` with ``psi`` frozen over the step."""
    root = np.sqrt(eig.eigenvalues)
    decay = np.exp(-root * tau)
    coefficients = decay * eig.coefficients(w_n) + (-np.expm1(-root * tau) / root) * eig.coefficients(psi)
    return eig.synthesize(coefficients)


def oracle_exact_state(eig: EigenDecomposition, w0, t: float) -> Field:
    """Semi-discrete solution ``sum_k exp(-lambda_k^{1/2} t) (w0, phi_k)_M phi_k`` for ``psi = 0``."""
    return eig.synthesize(np.exp(-np.sqrt(eig.eigenvalues) * t) * eig.coefficients(w0))


def g_energy(op: DiscreteOperator, w, cfg: SchemeConfig, frac) -> float:
    """``w' ((1 + sigma tau) M + sigma tau A) w - tau/2 w' A D^{-1/2} w``."""
    w = np.asarray(w, dtype=float)
    regularized = w @ (_regularizer(op, cfg) @ w)
    return float(regularized - 0.5 * cfg.tau * (w @ (op.stiffness @ frac.inv_sqrt(w))))


def g_norm(op: DiscreteOperator, w, cfg: SchemeConfig, frac) -> float:
    return float(np.sqrt(max(g_energy(op, w, cfg, frac), 0.0)))


def inv_sqrt_norm(op: DiscreteOperator, psi, frac) -> float:
    """``||psi||_{D^{-1/2}} = sqrt(psi' M D^{-1/2} psi)``."""
    psi = np.asarray(psi, dtype=float)
    return float(np.sqrt(max(psi @ (op.mass @ frac.inv_sqrt(psi)), 0.0)))


def _oracle_step(problem: EvolutionProblem, cfg: SchemeConfig, w_n, t_n):
    eig, tau = problem.oracle, cfg.tau
    if cfg.scheme == ORACLE_BACKWARD_EULER:
        return oracle_backward_euler_step(eig, w_n, problem.psi(t_n + tau), tau)
    if cfg.scheme == ORACLE_CRANK_NICOLSON:
        return oracle_crank_nicolson_step(eig, w_n, problem.psi(t_n + 0.5 * tau), tau)
    return oracle_exact_step(eig, w_n, problem.psi(t_n + 0.5 * tau), tau)


def run(problem: EvolutionProblem, cfg: SchemeConfig) -> Trajectory:
    """Advance ``problem.initial`` through ``cfg.n_steps`` levels.

    Three-level schemes get their first level from :func:`startup_first_level`.
    A failing step raises :class:`SchemeRunError` carrying the levels computed so far.
    """
    op = problem.operator
    if cfg.scheme in ORACLE_SCHEMES and problem.oracle is None:
        raise ConfigError(f"scheme {cfg.scheme} needs an eigendecomposition of the operator")
    frac = make_backend(cfg.sqrt_backend, op, cfg.frac, problem.oracle)
    oracle_frac = SpectralSolver(problem.oracle) if problem.oracle is not None else None
    tau = cfg.tau

    trajectory = Trajectory(cfg.scheme)

    def record(n: int, state: Field, counter: LinearSolveCounter, pseudo_before: int):
        if not np.all(np.isfinite(state)):
            raise NonFiniteError(f"state at level {n} is not finite")
        g_value = g_norm(op, state, cfg, oracle_frac) if oracle_frac is not None else None
        diagnostics = StepDiagnostics(
            n=n,
            t=n * tau,
            m_norm=m_norm(op.mass, state),
            g_norm=g_value,
            cg_iters=counter.iterations,
            pseudo_iters=frac.iterations - pseudo_before,
        )
        trajectory.times.append(n * tau)
        trajectory.states.append(np.array(state, dtype=float))
        trajectory.diagnostics.append(diagnostics)
        logger.debug("step %d t=%.5g |w|_M=%.6e", n, n * tau, diagnostics.m_norm)

    record(0, problem.initial, LinearSolveCounter(), frac.iterations)
    for n in range(cfg.n_steps):
        t_n = n * tau
        w_n = trajectory.states[-1]
        counter = LinearSolveCounter()
        pseudo_before = frac.iterations
        try:
            if cfg.scheme == EXPLICIT:
                w_next = step_explicit(op, w_n, problem.psi(t_n), cfg, frac)
            elif cfg.scheme == REGULARIZED2:
                w_next = step_regularized2(op, w_n, problem.psi(t_n + tau), cfg, frac, counter)
            elif cfg.scheme == REGULARIZED2_CONVECTION:
                w_next = step_regularized2_convection(op, w_n, problem.psi(t_n + tau), cfg, frac, counter)
            elif cfg.scheme in THREE_LEVEL_SCHEMES:
                if n == 0:
                    w_next = startup_first_level(op, w_n, problem.psi(0.0), cfg, frac)
                elif cfg.scheme == EXPLICIT3:
                    w_next = step_explicit3(op, w_n, trajectory.states[-2], problem.psi(t_n + 0.5 * tau), cfg, frac)
                else:
                    w_next = step_regularized3(
                        op, w_n, trajectory.states[-2], problem.psi(t_n + 0.5 * tau), cfg, frac, counter
                    )
            else:
                w_next = _oracle_step(problem, cfg, w_n, t_n)
            record(n + 1, w_next, counter, pseudo_before)
        except SolverError as exc:
            raise SchemeRunError(
                f"{cfg.scheme}: step {n + 1} of {cfg.n_steps} failed: {exc}", trajectory=trajectory
            ) from exc

    logger.debug(
        "%s: %d steps, %d CG iterations, %d pseudo-time iterations",
        cfg.scheme,
        cfg.n_steps,
        trajectory.total_cg_iterations(),
        trajectory.total_pseudo_iterations(),
    )
    return trajectory
