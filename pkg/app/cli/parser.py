"""
Argument parser for the ``fracdiff`` command line.
"""

import argparse

from app.services.fracpow import BACKENDS
from app.services.schemes import SCHEMES


def _experiment_flags(parser: argparse.ArgumentParser, multi_mu: bool = False) -> None:
    group = parser.add_argument_group("experiment")
    group.add_argument("--config", help="TOML experiment file (flags override its values)")
    mesh = group.add_mutually_exclusive_group()
    mesh.add_argument("--mesh-level", type=int, choices=(1, 2, 3, 4), help="generated quarter-disk level")
    mesh.add_argument("--mesh-file", help="mesh file to load instead of generating one")
    if multi_mu:
        group.add_argument("--mu", type=float, nargs="+", help="Robin coefficient(s) on the arc")
    else:
        group.add_argument("--mu", type=float, help="Robin coefficient on the arc")
    group.add_argument("--delta", type=float, help="lower spectral bound used by the pseudo-time problem")
    group.add_argument("--sigma", type=float, help="regularization weight")
    group.add_argument("--scheme", choices=SCHEMES)
    group.add_argument("--n-steps", type=int, help="number of time steps N")
    group.add_argument("--k-pseudo", type=int, help="pseudo-time steps K")
    group.add_argument("--integrator", choices=("be", "cn"), help="pseudo-time integrator")
    group.add_argument("--sqrt-backend", choices=BACKENDS)
    group.add_argument("--t-final", type=float, help="final time T")
    group.add_argument("--tol", type=float, help="relative residual tolerance of the linear solvers")
    group.add_argument("--velocity", help="velocity field: none, zero or bubble_rotation[:A]")
    group.add_argument("--seed", type=int, help="seed for randomized inputs")

    outputs = parser.add_argument_group("outputs")
    outputs.add_argument("--out", help="CSV report path")
    outputs.add_argument("--vtk", help="write the final state as legacy VTK")
    outputs.add_argument("--dump-matrices", metavar="DIR", help="write M, A (and C) in MatrixMarket format")
    outputs.add_argument("--trajectory-csv", help="per-step diagnostics CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracdiff",
        description="Regularized schemes for equations with the square root of an elliptic operator.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    mesh = commands.add_parser("mesh", help="generate or check meshes")
    mesh_commands = mesh.add_subparsers(dest="mesh_command", required=True)
    gen = mesh_commands.add_parser("gen", help="generate a quarter-disk mesh")
    gen.add_argument("--mesh-level", type=int, choices=(1, 2, 3, 4), required=True)
    gen.add_argument("--out", required=True, help="mesh file to write")
    check = mesh_commands.add_parser("check", help="validate a mesh file and print its statistics")
    check.add_argument("path")

    roots = commands.add_parser("roots", help="roots of the Robin eigencondition")
    roots.add_argument("--mu", type=float, nargs="+", default=[1.0, 10.0, 100.0])
    roots.add_argument("--count", type=int, default=3)

    solve = commands.add_parser("solve", help="run one verification experiment")
    _experiment_flags(solve)

    sweep = commands.add_parser("sweep", help="convergence study over step counts")
    _experiment_flags(sweep, multi_mu=True)
    sweep.add_argument("--n-list", type=int, nargs="+", default=[25, 50, 100, 200])
    sweep.add_argument("--workers", type=int, default=1, help="parallel processes for independent runs")
    sweep.add_argument("--timing", action="store_true", help="include wall time in the long-format report")

    oracle = commands.add_parser("oracle-check", help="compare D^{-1/2} with the spectral oracle")
    _experiment_flags(oracle)
    oracle.add_argument("--samples", type=int, default=20)

    convection = commands.add_parser("convection", help="regularized convection scheme stability run")
    _experiment_flags(convection)
    return parser
