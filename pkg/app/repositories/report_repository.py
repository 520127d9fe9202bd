"""
Repository helpers for experiment output: CSV reports, trajectories, VTK fields and matrix dumps.
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence

import meshio
import numpy as np
import scipy.io

from app.utils.errors import ConfigError

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["n", "t", "m_norm", "g_norm", "cg_iters", "pseudo_iters"]


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if np.isnan(value) else f"{value:.10g}"
    return str(value)


class ReportRepository:
    @staticmethod
    def save_reports(reports: Iterable, path, include_timing: bool = False) -> None:
        """One row per :class:`ErrorReport`; wall time only when ``include_timing``."""
        rows = [report.as_row(include_timing) for report in reports]
        with _open_for_write(path) as handle:
            if not rows:
                return
            writer = csv.DictWriter(handle, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({key: _fmt(value) for key, value in row.items()})
        logger.info("Wrote %d report row(s) to %s", len(rows), path)

    @staticmethod
    def save_study_table(studies: Sequence, path) -> None:
        """Wide table: one row per study (grid, mu), one eps2 column per step count, fitted order last."""
        n_values = sorted({n for study in studies for n in study.n_list})
        header = ["grid", "mu"] + [f"N={n}" for n in n_values] + ["order"]
        with _open_for_write(path) as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for study in studies:
                by_n = {report.n_steps: report.eps2 for report in study.reports}
                row = [study.grid_label, _fmt(float(study.mu))]
                row += [_fmt(by_n.get(n)) for n in n_values]
                row.append(_fmt(study.order))
                writer.writerow(row)
        logger.info("Wrote convergence table to %s", path)

    @staticmethod
    def save_trajectory(trajectory, path) -> None:
        with _open_for_write(path) as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(TRAJECTORY_COLUMNS)
            for d in trajectory.diagnostics:
                writer.writerow([d.n, _fmt(d.t), _fmt(d.m_norm), _fmt(d.g_norm), d.cg_iters, d.pseudo_iters])
        logger.info("Wrote %d trajectory levels to %s", len(trajectory.diagnostics), path)

    @staticmethod
    def save_vtk(mesh, values, path, name: str = "w") -> None:
        """Legacy ASCII VTK unstructured grid with one point scalar, written by meshio."""
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise ConfigError(f"VTK field has {values.shape[0]} values for {mesh.n_vertices} vertices")
        points = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
        grid = meshio.Mesh(points, [("triangle", np.asarray(mesh.triangles))], point_data={name: values})
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            meshio.write(path, grid, file_format="vtk", binary=False)
        except OSError as exc:
            raise ConfigError(f"cannot write {path}: {exc}") from exc
        logger.info("Wrote VTK field '%s' to %s (%d points, %d cells)", name, path, mesh.n_vertices, mesh.n_triangles)

    @staticmethod
    def dump_matrices(operator, directory) -> None:
        """MatrixMarket files ``mass.mtx``, ``stiffness.mtx`` and, when present, ``convection.mtx``."""
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
            scipy.io.mmwrite(directory / "mass.mtx", operator.mass, symmetry="general")
            scipy.io.mmwrite(directory / "stiffness.mtx", operator.stiffness, symmetry="general")
            if operator.convection is not None:
                scipy.io.mmwrite(directory / "convection.mtx", operator.convection, symmetry="general")
        except OSError as exc:
            raise ConfigError(f"cannot write matrices to {directory}: {exc}") from exc
        logger.info("Dumped operator matrices to %s", directory)
