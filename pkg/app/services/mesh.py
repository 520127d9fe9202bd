"""
Conforming triangular meshes with tagged boundary edges.

Tags follow the quarter-disk layout: 1 is the ``x2 = 0`` edge, 2 the ``x1 = 0``
edge and 3 the circular arc.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Tuple

import numpy as np
from scipy.spatial import cKDTree

from app.utils.errors import ConfigError, MeshValidationError

logger = logging.getLogger(__name__)

TAG_X_AXIS = 1
TAG_Y_AXIS = 2
TAG_ARC = 3
VALID_TAGS = (TAG_X_AXIS, TAG_Y_AXIS, TAG_ARC)

AXIS_TOL = 1e-12
DUPLICATE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation: vertex coordinates, CCW cells, tagged boundary edges."""

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray

    def __post_init__(self):
        arrays = {
            "vertices": np.array(self.vertices, dtype=float).reshape(-1, 2),
            "triangles": np.array(self.triangles, dtype=np.int64).reshape(-1, 3),
            "boundary_edges": np.array(self.boundary_edges, dtype=np.int64).reshape(-1, 2),
            "boundary_tags": np.array(self.boundary_tags, dtype=np.int64).reshape(-1),
        }
        for name, array in arrays.items():
            array.flags.writeable = False
            object.__setattr__(self, name, array)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_boundary_edges(self) -> int:
        return self.boundary_edges.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return triangle_signed_areas(self.vertices, self.triangles)

    @property
    def total_area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, each as a sorted vertex pair."""
        return np.unique(_cell_edges(self.triangles), axis=0)

    @property
    def max_edge_length(self) -> float:
        diff = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return float(np.sqrt((diff**2).sum(axis=1)).max())

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        mask.flags.writeable = False
        return mask

    def min_angle_degrees(self) -> float:
        return float(triangle_angles(self.vertices, self.triangles).min())

    def equals(self, other: "Mesh") -> bool:
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and np.array_equal(self.boundary_tags, other.boundary_tags)
        )

    def summary(self) -> str:
        return f"{self.n_vertices} vertices, {self.n_triangles} cells, {self.n_boundary_edges} boundary edges"


def triangle_signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_angles(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Interior angles in degrees, shape (n_triangles, 3)."""
    p = vertices[triangles]
    angles = np.empty((len(triangles), 3))
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        cos = (u * v).sum(axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles[:, i] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return angles


def _cell_edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.sort(edges, axis=1)


def find_boundary_edges(triangles: np.ndarray) -> np.ndarray:
    """Edges that belong to exactly one cell, sorted lexicographically."""
    unique, counts = np.unique(_cell_edges(np.asarray(triangles)), axis=0, return_counts=True)
    return unique[counts == 1]


def tag_boundary_edges(vertices: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Axis edges get tags 1/2, everything else is the arc."""
    ends = vertices[edges]
    on_x_axis = np.all(np.abs(ends[:, :, 1]) < AXIS_TOL, axis=1)
    on_y_axis = np.all(np.abs(ends[:, :, 0]) < AXIS_TOL, axis=1)
    return np.where(on_x_axis, TAG_X_AXIS, np.where(on_y_axis, TAG_Y_AXIS, TAG_ARC))


def validate_mesh(mesh: Mesh) -> List[Tuple[str, int, str]]:
    """Collect invariant violations as ``(kind, index, message)`` tuples.

    ``kind`` is ``"vertex"``, ``"cell"``, ``"boundary"`` or ``"mesh"`` so callers
    that know where each item came from (e.g. a file) can point at it.
    """
    issues: List[Tuple[str, int, str]] = []
    nv = mesh.n_vertices
    if nv == 0 or mesh.n_triangles == 0:
        return [("mesh", -1, "mesh has no vertices or no cells")]

    if not np.all(np.isfinite(mesh.vertices)):
        bad = int(np.flatnonzero(~np.isfinite(mesh.vertices).all(axis=1))[0])
        issues.append(("vertex", bad, f"vertex {bad} has non-finite coordinates"))
        return issues

    for kind, array in (("cell", mesh.triangles), ("boundary", mesh.boundary_edges)):
        out_of_range = np.flatnonzero(((array < 0) | (array >= nv)).any(axis=1))
        for index in out_of_range:
            issues.append((kind, int(index), f"{kind} {index} references a missing vertex"))
    if issues:
        return issues

    degenerate = np.flatnonzero((mesh.triangles[:, [0, 1, 2]] == mesh.triangles[:, [1, 2, 0]]).any(axis=1))
    for index in degenerate:
        issues.append(("cell", int(index), f"cell {index} repeats a vertex"))

    areas = mesh.signed_areas
    for index in np.flatnonzero(areas <= 0.0):
        issues.append(("cell", int(index), f"cell {index} is clockwise or degenerate (signed area {areas[index]:.3e})"))

    for i, j in sorted(cKDTree(mesh.vertices).query_pairs(DUPLICATE_TOL)):
        issues.append(("vertex", int(j), f"vertex {j} duplicates vertex {i}"))

    bad_tags = np.flatnonzero(~np.isin(mesh.boundary_tags, VALID_TAGS))
    for index in bad_tags:
        issues.append(("boundary", int(index), f"boundary edge {index} has unknown tag {mesh.boundary_tags[index]}"))

    if len(mesh.boundary_tags) != len(mesh.boundary_edges):
        issues.append(("mesh", -1, "boundary edge and tag counts differ"))
        return issues

    expected = {tuple(edge) for edge in find_boundary_edges(mesh.triangles).tolist()}
    seen: Dict[Tuple[int, int], int] = {}
    for index, edge in enumerate(np.sort(mesh.boundary_edges, axis=1).tolist()):
        key = (edge[0], edge[1])
        if key in seen:
            issues.append(("boundary", index, f"boundary edge {index} repeats edge {seen[key]} (two tags)"))
            continue
        seen[key] = index
        if key not in expected:
            issues.append(("boundary", index, f"boundary edge {index} {key} is not on the boundary of the cells"))
    for missing in sorted(expected - set(seen)):
        issues.append(("mesh", -1, f"boundary edge {missing} has no tag"))
    return issues


def check_mesh(mesh: Mesh) -> Mesh:
    issues = validate_mesh(mesh)
    if issues:
        raise MeshValidationError([message for _, _, message in issues])
    return mesh


def _stitch_rings(inner: List[int], inner_angles: np.ndarray, outer: List[int], outer_angles: np.ndarray) -> List[List[int]]:
    """Triangulate the band between two rings by merging their angle sequences."""
    cells = []
    p = q = 0
    while p < len(inner) - 1 or q < len(outer) - 1:
        advance_inner = q == len(outer) - 1 or (
            p < len(inner) - 1 and inner_angles[p + 1] < outer_angles[q + 1]
        )
        if advance_inner:
            cells.append([inner[p], outer[q], inner[p + 1]])
            p += 1
        else:
            cells.append([inner[p], outer[q], outer[q + 1]])
            q += 1
    return cells


def _in_circumcircle(pa, pb, pc, pd) -> float:
    """Positive when ``pd`` lies strictly inside the circle through CCW ``pa, pb, pc``."""
    adx, ady = pa[0] - pd[0], pa[1] - pd[1]
    bdx, bdy = pb[0] - pd[0], pb[1] - pd[1]
    cdx, cdy = pc[0] - pd[0], pc[1] - pd[1]
    return (
        (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
    )


def _orient(vertices: np.ndarray, cell: List[int]) -> List[int]:
    a, b, c = (vertices[i] for i in cell)
    area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return cell if area2 > 0 else [cell[0], cell[2], cell[1]]


def delaunay_flip(vertices: np.ndarray, triangles: List[List[int]], eps: float = 1e-14) -> Tuple[List[List[int]], int]:
    """Lawson flips until every interior edge is locally Delaunay.

    Returns the new cell list and the number of flips performed.
    """
    cells = [_orient(vertices, list(cell)) for cell in triangles]
    edge_cells: Dict[Tuple[int, int], List[int]] = {}
    for index, cell in enumerate(cells):
        for i in range(3):
            a, b = cell[i], cell[(i + 1) % 3]
            edge_cells.setdefault((min(a, b), max(a, b)), []).append(index)

    stack = [edge for edge, owners in edge_cells.items() if len(owners) == 2]
    flips = 0
    while stack:
        edge = stack.pop()
        owners = edge_cells.get(edge)
        if owners is None or len(owners) != 2:
            continue
        t1, t2 = owners
        a, b = edge
        c = next(v for v in cells[t1] if v not in edge)
        d = next(v for v in cells[t2] if v not in edge)
        ccw = _orient(vertices, [a, b, c])
        if _in_circumcircle(*(vertices[i] for i in ccw), vertices[d]) <= eps:
            continue

        cells[t1] = _orient(vertices, [a, d, c])
        cells[t2] = _orient(vertices, [b, c, d])
        del edge_cells[edge]
        edge_cells[(min(c, d), max(c, d))] = [t1, t2]
        for moved, old, new in (((b, c), t1, t2), ((a, d), t2, t1)):
            key = (min(moved), max(moved))
            edge_cells[key] = [new if owner == old else owner for owner in edge_cells[key]]
        for neighbour in ((a, c), (b, c), (a, d), (b, d)):
            key = (min(neighbour), max(neighbour))
            if len(edge_cells[key]) == 2:
                stack.append(key)
        flips += 1
    return cells, flips


def rings_for_level(refinement_level: int) -> int:
    if refinement_level not in (1, 2, 3, 4):
        raise ConfigError(f"refinement level must be 1, 2, 3 or 4 (got {refinement_level})")
    return 10 * 2 ** (refinement_level - 1)


def generate_quarter_disk(refinement_level: int) -> Mesh:
    """Structured polar triangulation of the unit quarter disk.

    Ring ``i`` of ``L`` sits at radius ``i/L`` and carries ``2i + 1`` equally
    spaced vertices, so the arc spacing stays close to the radial one.
    """
    n_rings = rings_for_level(refinement_level)
    points = [(0.0, 0.0)]
    rings = [[0]]
    ring_angles = [np.zeros(1)]
    for i in range(1, n_rings + 1):
        radius = i / n_rings
        angles = np.arange(2 * i + 1) * (0.5 * math.pi / (2 * i))
        ids = []
        for j, theta in enumerate(angles):
            if j == 0:
                xy = (radius, 0.0)
            elif j == 2 * i:
                xy = (0.0, radius)
            else:
                xy = (radius * math.cos(theta), radius * math.sin(theta))
            ids.append(len(points))
            points.append(xy)
        rings.append(ids)
        ring_angles.append(angles)

    vertices = np.array(points)
    # outermost ring lies exactly on the unit circle
    arc = np.array(rings[-1])
    vertices[arc] /= np.hypot(vertices[arc, 0], vertices[arc, 1])[:, None]
    vertices[arc[0]] = (1.0, 0.0)
    vertices[arc[-1]] = (0.0, 1.0)

    cells: List[List[int]] = []
    for i in range(1, n_rings + 1):
        cells.extend(_stitch_rings(rings[i - 1], ring_angles[i - 1], rings[i], ring_angles[i]))
    cells, flips = delaunay_flip(vertices, cells)

    triangles = np.array(cells, dtype=np.int64)
    edges = find_boundary_edges(triangles)
    mesh = Mesh(vertices, triangles, edges, tag_boundary_edges(vertices, edges))
    check_mesh(mesh)
    logger.info("Generated quarter-disk level %d: %s (%d flips)", refinement_level, mesh.summary(), flips)
    return mesh
