"""
Verification experiments against the radial Bessel solution on the quarter disk.

An experiment assembles ``(M, A)`` for ``k = 1``, ``c = 0``, Neumann data on the
axes and Robin ``mu`` on the arc, projects ``u(., 0)``, runs a scheme to ``T``
and measures the nodal error against ``u(., T)``.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.config import EXPERIMENT_CONFIG, PSEUDO_CONFIG, SCHEME_CONFIG, SOLVER_CONFIG
from app.repositories.mesh_repository import MeshRepository
from app.repositories.report_repository import ReportRepository
from app.services.analytic import exact_solution, solution_rates
from app.services.fem import Coefficients, DiscreteOperator, build_operator, l2_project, m_norm
from app.services.fields import radial_exact
from app.services.fracpow import (
    SPECTRAL,
    PseudoParabolicConfig,
    SpectralSolver,
    inv_sqrt_relative_error,
    make_backend,
)
from app.services.mesh import Mesh, generate_quarter_disk
from app.services.schemes import (
    ORACLE_SCHEMES,
    REGULARIZED2_CONVECTION,
    EvolutionProblem,
    SchemeConfig,
    Trajectory,
    run,
)
from app.services.sparse_linalg import EigenDecomposition, generalized_eig
from app.utils.errors import ConfigError, FracDiffError

logger = logging.getLogger(__name__)

DEFAULT_N_LIST = (25, 50, 100, 200)
PSEUDO_ERROR_FRACTION = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    mesh_level: Optional[int] = EXPERIMENT_CONFIG["mesh_level"]
    mesh_file: Optional[str] = None
    mu: float = EXPERIMENT_CONFIG["mu"]
    delta: float = EXPERIMENT_CONFIG["delta"]
    t_final: float = EXPERIMENT_CONFIG["t_final"]
    scheme: str = SCHEME_CONFIG["scheme"]
    n_steps: int = SCHEME_CONFIG["n_steps"]
    sigma: float = SCHEME_CONFIG["sigma"]
    k_pseudo: int = PSEUDO_CONFIG["k_steps"]
    integrator: str = PSEUDO_CONFIG["integrator"]
    sqrt_backend: str = SCHEME_CONFIG["sqrt_backend"]
    tol: float = SOLVER_CONFIG["tol"]
    velocity: Optional[str] = None
    attach_oracle: bool = False
    out: Optional[str] = None
    vtk: Optional[str] = None
    dump_matrices: Optional[str] = None
    trajectory_csv: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.mesh_file is not None:
            if not Path(self.mesh_file).is_file():
                raise ConfigError(f"mesh file not found: {self.mesh_file}")
        elif self.mesh_level is None:
            raise ConfigError("either a mesh level or a mesh file is required")
        if not (np.isfinite(self.t_final) and self.t_final >= 0.0):
            raise ConfigError(f"final time must be finite and non-negative (got {self.t_final})")
        if not self.mu > 0.0:
            raise ConfigError(f"Robin coefficient mu must be positive (got {self.mu})")

    @classmethod
    def from_mapping(cls, values: Mapping) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown experiment key(s): {', '.join(unknown)}")
        return cls(**dict(values))

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with every non-``None`` override applied."""
        changes = {key: value for key, value in overrides.items() if value is not None}
        if "mesh_file" in changes:
            changes.setdefault("mesh_level", None)
        return dataclasses.replace(self, **changes)

    @property
    def grid_label(self) -> str:
        return f"level{self.mesh_level}" if self.mesh_file is None else str(self.mesh_file)

    def pseudo_config(self) -> PseudoParabolicConfig:
        return PseudoParabolicConfig(K=self.k_pseudo, integrator=self.integrator, inner_tol=self.tol)

    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig.over_interval(
            self.t_final,
            self.n_steps,
            scheme=self.scheme,
            sigma=self.sigma,
            frac=self.pseudo_config(),
            sqrt_backend=self.sqrt_backend,
            tol=self.tol,
        )

    def describe(self) -> str:
        return (
            f"grid={self.grid_label} mu={self.mu:g} scheme={self.scheme} N={self.n_steps} "
            f"K={self.k_pseudo} sigma={self.sigma:g} T={self.t_final:g}"
        )


@dataclass(frozen=True)
class ErrorReport:
    eps2: float
    eps_inf: float
    grid: str
    n_vertices: int
    n_cells: int
    n_steps: int
    k_pseudo: int
    sigma: float
    mu: float
    scheme: str
    integrator: str
    wall_time: float
    cg_iterations: int
    pseudo_iterations: int

    def as_row(self, include_timing: bool = False) -> Dict[str, object]:
        row = dataclasses.asdict(self)
        if not include_timing:
            row.pop("wall_time")
        return row


@dataclass
class ExperimentResult:
    report: ErrorReport
    mesh: Mesh
    operator: DiscreteOperator
    trajectory: Trajectory
    error: np.ndarray
    oracle: Optional[EigenDecomposition] = None


def load_mesh_for(cfg: ExperimentConfig) -> Mesh:
    if cfg.mesh_file is not None:
        return MeshRepository.load(cfg.mesh_file)
    return generate_quarter_disk(cfg.mesh_level)


def _needs_oracle(cfg: ExperimentConfig) -> bool:
    return cfg.attach_oracle or cfg.sqrt_backend == SPECTRAL or cfg.scheme in ORACLE_SCHEMES


def pseudo_mode_errors(cfg: ExperimentConfig) -> Dict[float, float]:
    """Signed relative error of the pseudo-time ``D^{-1/2}`` on each mode of the exact solution, keyed by rate."""
    rates = solution_rates(cfg.mu)
    errors = inv_sqrt_relative_error(rates**2, cfg.delta, cfg.pseudo_config())
    return dict(zip(rates.tolist(), errors.tolist()))


def _check_pseudo_resolution(cfg: ExperimentConfig, scheme_cfg: SchemeConfig) -> None:
    if cfg.sqrt_backend == SPECTRAL or cfg.scheme in ORACLE_SCHEMES or scheme_cfg.n_steps == 0:
        return
    for nu, err in pseudo_mode_errors(cfg).items():
        logger.debug("pseudo-time relative error on rate %.6f: %+.3e", nu, err)
        # the error shifts the per-step decrement tau*nu by the factor (1 + err)
        if abs(err) > PSEUDO_ERROR_FRACTION * scheme_cfg.tau * nu:
            logger.warning(
                "K=%d leaves a pseudo-time error of %.2e on the mode with rate %.4f (tau*nu = %.2e); "
                "it competes with the time-stepping error",
                cfg.k_pseudo, err, nu, scheme_cfg.tau * nu,
            )


def solve_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one experiment and keep every intermediate object."""
    started = time.perf_counter()
    try:
        scheme_cfg = cfg.scheme_config()
        _check_pseudo_resolution(cfg, scheme_cfg)
        mesh = load_mesh_for(cfg)
        coeff = Coefficients.robin_arc(cfg.mu, velocity=cfg.velocity)
        op = build_operator(mesh, coeff, delta=cfg.delta)
        oracle = generalized_eig(op.stiffness, op.mass) if _needs_oracle(cfg) else None
        w0 = l2_project(mesh, op.mass, radial_exact(cfg.mu), t=0.0, tol=cfg.tol)
        trajectory = run(EvolutionProblem(op, w0, oracle=oracle), scheme_cfg)
        radius = np.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1])
        error = trajectory.final - exact_solution(cfg.mu, radius, scheme_cfg.t_final)
    except FracDiffError as exc:
        exc.add_note(f"experiment: {cfg.describe()}")
        raise

    report = ErrorReport(
        eps2=m_norm(op.mass, error),
        eps_inf=float(np.abs(error).max()),
        grid=cfg.grid_label,
        n_vertices=mesh.n_vertices,
        n_cells=mesh.n_triangles,
        n_steps=cfg.n_steps,
        k_pseudo=cfg.k_pseudo,
        sigma=cfg.sigma,
        mu=cfg.mu,
        scheme=cfg.scheme,
        integrator=scheme_cfg.frac.integrator,
        wall_time=time.perf_counter() - started,
        cg_iterations=trajectory.total_cg_iterations(),
        pseudo_iterations=trajectory.total_pseudo_iterations(),
    )
    logger.info("%s: eps2=%.8f eps_inf=%.8f (%.2fs)", cfg.describe(), report.eps2, report.eps_inf, report.wall_time)
    return ExperimentResult(report, mesh, op, trajectory, error, oracle)


def _write_outputs(cfg: ExperimentConfig, result: ExperimentResult) -> None:
    if cfg.out:
        ReportRepository.save_reports([result.report], cfg.out)
    if cfg.trajectory_csv:
        ReportRepository.save_trajectory(result.trajectory, cfg.trajectory_csv)
    if cfg.vtk:
        ReportRepository.save_vtk(result.mesh, result.trajectory.final, cfg.vtk)
    if cfg.dump_matrices:
        ReportRepository.dump_matrices(result.operator, cfg.dump_matrices)


def run_experiment(cfg: ExperimentConfig) -> ErrorReport:
    result = solve_experiment(cfg)
    _write_outputs(cfg, result)
    return result.report


def fit_order(ns: Sequence[int], errors: Sequence[float]) -> Optional[float]:
    """Least-squares order ``p`` in ``error ~ tau^p`` over the leading run of decreasing errors.

    Returns ``None`` when fewer than two points precede the error floor.
    """
    pairs = sorted(zip(ns, errors))
    usable = [pairs[0]] if pairs else []
    for n, err in pairs[1:]:
        if not (np.isfinite(err) and err > 0.0 and err < usable[-1][1]):
            break
        usable.append((n, err))
    if len(usable) < 2 or not usable[0][1] > 0.0:
        return None
    log_n = np.log([n for n, _ in usable])
    log_e = np.log([e for _, e in usable])
    slope = np.polyfit(log_n, log_e, 1)[0]
    return float(-slope)


@dataclass
class ConvergenceStudy:
    base: ExperimentConfig
    n_list: Tuple[int, ...]
    reports: List[ErrorReport] = field(default_factory=list)
    failures: Dict[int, Tuple[int, str]] = field(default_factory=dict)

    @property
    def grid_label(self) -> str:
        return self.base.grid_label

    @property
    def mu(self) -> float:
        return self.base.mu

    @property
    def eps2(self) -> List[float]:
        return [report.eps2 for report in self.reports]

    @property
    def order(self) -> Optional[float]:
        return fit_order([r.n_steps for r in self.reports], self.eps2) if self.reports else None

    @property
    def ok(self) -> bool:
        return not self.failures

    def is_monotone(self) -> bool:
        return all(b < a for a, b in zip(self.eps2, self.eps2[1:]))


def _study_entry(cfg: ExperimentConfig):
    try:
        return cfg.n_steps, solve_experiment(cfg).report, None
    except FracDiffError as exc:
        return cfg.n_steps, None, (exc.exit_code, "\n".join([str(exc), *getattr(exc, "__notes__", [])]))


def convergence_study(
    base_cfg: ExperimentConfig,
    n_list: Sequence[int] = DEFAULT_N_LIST,
    workers: int = 1,
) -> ConvergenceStudy:
    """Run ``base_cfg`` for every step count; failed entries are kept in ``failures``."""
    n_list = tuple(sorted(set(int(n) for n in n_list)))
    if not n_list or min(n_list) < 1:
        raise ConfigError("step counts for a convergence study must be positive")
    configs = [
        dataclasses.replace(base_cfg, n_steps=n, out=None, vtk=None, dump_matrices=None, trajectory_csv=None)
        for n in n_list
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_study_entry, configs))
    else:
        outcomes = [_study_entry(cfg) for cfg in configs]

    study = ConvergenceStudy(base_cfg, n_list)
    for n, report, failure in sorted(outcomes, key=lambda item: item[0]):
        if report is not None:
            study.reports.append(report)
        else:
            study.failures[n] = failure
            logger.error("%s N=%d failed: %s", base_cfg.grid_label, n, failure[1])
    for report in study.reports:
        logger.info("study %s mu=%g N=%d eps2=%.8f", study.grid_label, study.mu, report.n_steps, report.eps2)
    if len(study.reports) > 1 and not study.is_monotone():
        logger.warning("eps2 is not monotone in N for %s mu=%g (spatial error floor?)", study.grid_label, study.mu)
    return study


@dataclass
class ConvectionDemo:
    report: ErrorReport
    m_norms: np.ndarray
    g_norms: Optional[np.ndarray]
    skew_exact: bool

    @property
    def non_increasing(self) -> Optional[bool]:
        """G-norm verdict; ``None`` when the mesh was too large for the oracle."""
        if self.g_norms is None:
            return None
        g = self.g_norms
        return bool(np.all(np.diff(g) <= 1e-12 * g[0]))


def convection_demo(cfg: ExperimentConfig) -> ConvectionDemo:
    """Regularized convection scheme with the bubble velocity and zero source.

    The G-norm of every level comes from the spectral oracle, which is only
    attached up to ``oracle_max_dim`` vertices; larger meshes log M-norms only.
    """
    n_vertices = load_mesh_for(cfg).n_vertices
    with_oracle = n_vertices <= EXPERIMENT_CONFIG["oracle_max_dim"]
    if not with_oracle:
        logger.warning(
            "%d vertices exceed oracle_max_dim=%d; skipping G-norm diagnostics",
            n_vertices, EXPERIMENT_CONFIG["oracle_max_dim"],
        )
    cfg = cfg.with_overrides(
        scheme=REGULARIZED2_CONVECTION,
        velocity=cfg.velocity or "bubble_rotation",
        attach_oracle=with_oracle,
    )
    result = solve_experiment(cfg)
    _write_outputs(cfg, result)
    for d in result.trajectory.diagnostics:
        if with_oracle:
            logger.info("convection n=%d t=%.4f |w|_M=%.12e |w|_G=%.12e", d.n, d.t, d.m_norm, d.g_norm)
        else:
            logger.info("convection n=%d t=%.4f |w|_M=%.12e", d.n, d.t, d.m_norm)
    convection = result.operator.convection
    skew = convection is None or (convection + convection.T).count_nonzero() == 0
    g_norms = result.trajectory.g_norms() if with_oracle else None
    demo = ConvectionDemo(result.report, result.trajectory.m_norms(), g_norms, skew)
    if demo.non_increasing is False:
        logger.warning("G-norm increased during the convection run")
    return demo


@dataclass(frozen=True)
class OracleCheck:
    n_samples: int
    max_relative_error: float
    errors_by_k: Dict[int, float]

    @property
    def halving_ratio(self) -> float:
        ks = sorted(self.errors_by_k)
        return self.errors_by_k[ks[0]] / self.errors_by_k[ks[-1]]


def low_mode_input(eig: EigenDecomposition, rng: np.random.Generator, weight: float = 0.1) -> np.ndarray:
    """First eigenvector plus ``weight`` times a normalized ``D^-1 r`` for random ``r``."""
    smooth = eig.synthesize(eig.coefficients(rng.standard_normal(eig.size)) / eig.eigenvalues)
    smooth /= m_norm(eig.mass, smooth)
    return eig.mode(0) + weight * smooth


def oracle_check(cfg: ExperimentConfig, n_samples: int = 20) -> OracleCheck:
    """Compare the pseudo-parabolic ``D^{-1/2}`` with the spectral one.

    Accuracy is measured on random low-mode-dominated inputs at ``K``; the
    convergence ratio on the first eigenvector at ``K/2`` and ``K``.
    """
    mesh = load_mesh_for(cfg)
    op = build_operator(mesh, Coefficients.robin_arc(cfg.mu), delta=cfg.delta)
    eig = generalized_eig(op.stiffness, op.mass)
    if eig.lambda_min < cfg.delta:
        logger.warning("delta = %g exceeds the smallest eigenvalue %.6g", cfg.delta, eig.lambda_min)
    spectral = SpectralSolver(eig)
    pseudo = make_backend("pseudo_parabolic", op, cfg.pseudo_config())
    rng = np.random.default_rng(cfg.seed)

    worst = 0.0
    for _ in range(n_samples):
        w = low_mode_input(eig, rng)
        exact = spectral.inv_sqrt(w)
        worst = max(worst, m_norm(op.mass, pseudo.inv_sqrt(w) - exact) / m_norm(op.mass, exact))

    phi = eig.mode(0)
    exact = spectral.inv_sqrt(phi)
    errors = {}
    for k in (max(cfg.k_pseudo // 2, 1), cfg.k_pseudo):
        solver = make_backend("pseudo_parabolic", op, dataclasses.replace(cfg.pseudo_config(), K=k))
        errors[k] = m_norm(op.mass, solver.inv_sqrt(phi) - exact) / m_norm(op.mass, exact)
    check = OracleCheck(n_samples, worst, errors)
    logger.info(
        "oracle check (%s, K=%d): max relative error %.3e, K-halving ratio %.3f",
        cfg.integrator, cfg.k_pseudo, worst, check.halving_ratio,
    )
    return check
