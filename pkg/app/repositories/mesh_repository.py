"""
Repository helpers for mesh files.

Format: a header line ``nv nt nb``, then ``nv`` lines ``x y``, ``nt`` lines
``i j k`` (0-based, counterclockwise) and ``nb`` lines ``i j tag``. Tokens are
whitespace separated and ``#`` starts a comment.
"""

import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from app.services.mesh import Mesh, check_mesh, validate_mesh
from app.utils.errors import MeshParseError, MeshValidationError

logger = logging.getLogger(__name__)


def _records(text: str) -> List[Tuple[int, List[str]]]:
    records = []
    for number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if tokens:
            records.append((number, tokens))
    return records


class MeshRepository:
    @staticmethod
    def load(path) -> Mesh:
        """Read and validate a mesh file; problems are reported with line numbers."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise MeshParseError(str(path), None, f"cannot read file: {exc}") from exc

        records = _records(text)
        if not records:
            raise MeshParseError(str(path), None, "file is empty")

        header_line, header = records[0]
        counts = MeshRepository._ints(path, header_line, header, 3, "header 'nv nt nb'")
        if min(counts) < 0:
            raise MeshParseError(str(path), header_line, "counts must be non-negative")
        nv, nt, nb = counts

        body = records[1:]
        expected = nv + nt + nb
        if len(body) < expected:
            last = body[-1][0] if body else header_line
            raise MeshParseError(str(path), last, f"expected {expected} records after the header, found {len(body)}")
        if len(body) > expected:
            raise MeshParseError(str(path), body[expected][0], "unexpected data after the last boundary edge")

        vertex_lines = body[:nv]
        cell_lines = body[nv:nv + nt]
        edge_lines = body[nv + nt:]

        vertices = np.array([MeshRepository._floats(path, n, t, 2, "vertex 'x y'") for n, t in vertex_lines], dtype=float)
        triangles = np.array([MeshRepository._ints(path, n, t, 3, "cell 'i j k'") for n, t in cell_lines], dtype=np.int64)
        edges = np.array([MeshRepository._ints(path, n, t, 3, "boundary edge 'i j tag'") for n, t in edge_lines], dtype=np.int64)

        mesh = Mesh(
            vertices.reshape(-1, 2),
            triangles.reshape(-1, 3),
            edges.reshape(-1, 3)[:, :2],
            edges.reshape(-1, 3)[:, 2],
        )
        issues = validate_mesh(mesh)
        if issues:
            line_of = {
                "vertex": [n for n, _ in vertex_lines],
                "cell": [n for n, _ in cell_lines],
                "boundary": [n for n, _ in edge_lines],
            }
            messages = []
            for kind, index, message in issues:
                lines = line_of.get(kind)
                where = f"{path}:{lines[index]}" if lines and 0 <= index < len(lines) else str(path)
                messages.append(f"{where}: {message}")
            raise MeshValidationError(messages)

        logger.info("Loaded mesh %s: %s", path, mesh.summary())
        return mesh

    @staticmethod
    def save(mesh: Mesh, path, comment: Optional[str] = None) -> None:
        """Write a valid mesh with coordinates printed to 17 significant digits."""
        check_mesh(mesh)
        path = Path(path)
        lines = []
        if comment:
            lines.extend(f"# {line}" for line in comment.splitlines())
        lines.append(f"{mesh.n_vertices} {mesh.n_triangles} {mesh.n_boundary_edges}")
        lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.vertices.tolist())
        lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist())
        lines.extend(f"{i} {j} {tag}" for (i, j), tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist()))
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info("Saved mesh to %s", path)

    @staticmethod
    def _ints(path, line: int, tokens: List[str], count: int, what: str) -> List[int]:
        if len(tokens) != count:
            raise MeshParseError(str(path), line, f"expected {what}, got {len(tokens)} field(s)")
        try:
            return [int(token) for token in tokens]
        except ValueError:
            raise MeshParseError(str(path), line, f"expected integers for {what}: {' '.join(tokens)}") from None

    @staticmethod
    def _floats(path, line: int, tokens: List[str], count: int, what: str) -> List[float]:
        if len(tokens) != count:
            raise MeshParseError(str(path), line, f"expected {what}, got {len(tokens)} field(s)")
        try:
            return [float(token) for token in tokens]
        except ValueError:
            raise MeshParseError(str(path), line, f"expected numbers for {what}: {' '.join(tokens)}") from None
