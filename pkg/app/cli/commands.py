"""
Command handlers. Each returns a process exit code; library errors are mapped
to their ``exit_code`` in :func:`main`.
"""

import logging
from typing import List, Optional

from app.config import load_experiment_file
from app.repositories.mesh_repository import MeshRepository
from app.repositories.report_repository import ReportRepository
from app.services.analytic import format_roots_table
from app.services.harness import (
    ExperimentConfig,
    convection_demo,
    convergence_study,
    oracle_check,
    run_experiment,
)
from app.services.mesh import generate_quarter_disk
from app.utils.errors import FracDiffError

from .parser import build_parser

logger = logging.getLogger(__name__)

_OVERRIDES = (
    "mesh_level",
    "mesh_file",
    "mu",
    "delta",
    "sigma",
    "scheme",
    "n_steps",
    "k_pseudo",
    "integrator",
    "sqrt_backend",
    "t_final",
    "tol",
    "velocity",
    "seed",
    "out",
    "vtk",
    "dump_matrices",
    "trajectory_csv",
)


def experiment_config(args, **extra) -> ExperimentConfig:
    """Environment defaults, then the ``--config`` file, then command-line flags."""
    base = ExperimentConfig.from_mapping(load_experiment_file(args.config)) if args.config else ExperimentConfig()
    overrides = {name: getattr(args, name, None) for name in _OVERRIDES}
    overrides.update(extra)
    return base.with_overrides(**overrides)


def cmd_mesh(args) -> int:
    if args.mesh_command == "gen":
        mesh = generate_quarter_disk(args.mesh_level)
        MeshRepository.save(mesh, args.out, comment=f"quarter disk, level {args.mesh_level}")
        print(f"{args.out}: {mesh.summary()}")
        return 0
    mesh = MeshRepository.load(args.path)
    print(f"{args.path}: {mesh.summary()}")
    print(f"  total area        {mesh.total_area:.12f}")
    print(f"  max edge length   {mesh.max_edge_length:.6f}")
    print(f"  min angle (deg)   {mesh.min_angle_degrees():.3f}")
    return 0


def cmd_roots(args) -> int:
    print(format_roots_table(args.mu, args.count))
    return 0


def cmd_solve(args) -> int:
    report = run_experiment(experiment_config(args))
    print(f"{report.grid}  mu={report.mu:g}  N={report.n_steps}  eps2={report.eps2:.8f}  eps_inf={report.eps_inf:.8f}")
    return 0


def cmd_sweep(args) -> int:
    mus: List[Optional[float]] = args.mu or [None]
    out = args.out
    args.out = None
    studies = [
        convergence_study(experiment_config(args, mu=mu), args.n_list, workers=args.workers)
        for mu in mus
    ]
    for study in studies:
        cells = "  ".join(f"N={r.n_steps}: {r.eps2:.8f}" for r in study.reports)
        order = "n/a" if study.order is None else f"{study.order:.2f}"
        print(f"{study.grid_label}  mu={study.mu:g}  {cells}  order={order}")
    if out:
        ReportRepository.save_study_table(studies, out)
        reports = [report for study in studies for report in study.reports]
        ReportRepository.save_reports(reports, f"{out}.runs.csv", include_timing=args.timing)
    failures = [code for study in studies for code, _ in study.failures.values()]
    return max(failures) if failures else 0


def cmd_oracle_check(args) -> int:
    check = oracle_check(experiment_config(args), n_samples=args.samples)
    print(f"max relative error over {check.n_samples} inputs: {check.max_relative_error:.3e}")
    for k, err in sorted(check.errors_by_k.items()):
        print(f"  K={k:<5d} first-mode error {err:.3e}")
    print(f"  ratio {check.halving_ratio:.3f}")
    return 0


def cmd_convection(args) -> int:
    demo = convection_demo(experiment_config(args))
    verdict = "n/a (no oracle)" if demo.non_increasing is None else demo.non_increasing
    print(f"skew-symmetric: {demo.skew_exact}  G-norm non-increasing: {verdict}")
    print(f"eps2={demo.report.eps2:.8f}  eps_inf={demo.report.eps_inf:.8f}")
    return 0


HANDLERS = {
    "mesh": cmd_mesh,
    "roots": cmd_roots,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
    "convection": cmd_convection,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return HANDLERS[args.command](args)
    except FracDiffError as exc:
        logger.error("%s", exc)
        for note in getattr(exc, "__notes__", []):
            logger.error("  %s", note)
        return exc.exit_code
