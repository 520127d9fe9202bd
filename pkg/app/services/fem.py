"""
P1 finite-element assembly on triangular meshes.

Matrices follow the Galerkin convention ``S[i, j] = form(chi_j, chi_i)``: row
``i`` is the test function.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from app.config import SOLVER_CONFIG
from app.services.fields import ScalarField, VelocityField, constant, parse_scalar_field, parse_velocity
from app.services.mesh import TAG_ARC, VALID_TAGS, Mesh
from app.services.sparse_linalg import SparseMatrix, cg_solve, finalize, is_skew_symmetric, max_abs
from app.utils.errors import CoefficientBoundError, ConfigError

logger = logging.getLogger(__name__)

Field = np.ndarray

BOUNDARY_VELOCITY_TOL = 1e-10
_GAUSS_2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass
class Coefficients:
    """Diffusion ``k``, reaction ``c``, per-tag Robin ``mu`` and optional velocity."""

    k: ScalarField = field(default_factory=lambda: constant(1.0))
    c: ScalarField = field(default_factory=lambda: constant(0.0))
    mu: Dict[int, ScalarField] = field(default_factory=dict)
    velocity: Optional[VelocityField] = None

    def __post_init__(self):
        self.k = parse_scalar_field(self.k)
        self.c = parse_scalar_field(self.c)
        unknown = set(self.mu) - set(VALID_TAGS)
        if unknown:
            raise ConfigError(f"Robin coefficient given for unknown boundary tag(s) {sorted(unknown)}")
        self.mu = {int(tag): parse_scalar_field(value) for tag, value in self.mu.items()}
        self.velocity = parse_velocity(self.velocity)

    @classmethod
    def robin_arc(cls, mu: float, velocity=None) -> "Coefficients":
        """``k = 1``, ``c = 0``, Neumann on the axes and Robin ``mu`` on the arc."""
        return cls(mu={TAG_ARC: constant(mu)}, velocity=velocity)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """The pencil ``(M, A)`` with optional skew convection ``C`` and lower spectral bound ``delta``."""

    mass: SparseMatrix
    stiffness: SparseMatrix
    convection: Optional[SparseMatrix] = None
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive (got {self.delta})")
        if self.mass.shape != self.stiffness.shape:
            raise ConfigError("mass and stiffness matrices differ in shape")
        if self.convection is not None and not is_skew_symmetric(self.convection):
            raise ConfigError("convection matrix is not skew-symmetric")

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    @property
    def has_convection(self) -> bool:
        return self.convection is not None and self.convection.nnz > 0

    def combine(self, alpha: float, beta: float) -> SparseMatrix:
        """``alpha A + beta M``."""
        return finalize(alpha * self.stiffness + beta * self.mass)


def m_norm(mass, w) -> float:
    w = np.asarray(w, dtype=float)
    return float(np.sqrt(max(w @ (mass @ w), 0.0)))


def p1_gradients(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Areas ``(nt,)`` and barycentric gradients ``(nt, 3, 2)``."""
    p = mesh.vertices[mesh.triangles]
    areas = mesh.signed_areas
    grads = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
        grads[:, i, 0] = a[:, 1] - b[:, 1]
        grads[:, i, 1] = b[:, 0] - a[:, 0]
    grads /= (2.0 * areas)[:, None, None]
    return areas, grads


def _scatter(mesh: Mesh, local: np.ndarray) -> SparseMatrix:
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return finalize(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def _sample(field_fn, points, t, name, lower, strict):
    values = np.asarray(field_fn(points, t), dtype=float)
    bad = ~np.isfinite(values) | ((values <= lower) if strict else (values < lower))
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        bound = ">" if strict else ">="
        raise CoefficientBoundError(
            f"coefficient {name} = {values[idx]:.6g} at ({points[idx, 0]:.6g}, {points[idx, 1]:.6g}) "
            f"violates {name} {bound} {lower:g}"
        )
    return values


def assemble_mass(mesh: Mesh) -> SparseMatrix:
    """Consistent P1 mass matrix."""
    local = mesh.signed_areas[:, None, None] * _LOCAL_MASS[None, :, :]
    return _scatter(mesh, local)


def assemble_robin(mesh: Mesh, mu: Dict[int, ScalarField], t: float = 0.0) -> SparseMatrix:
    """Boundary term ``sum_tag int mu u v ds`` with two-point Gauss per edge."""
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for tag, mu_field in sorted(mu.items()):
        edges = mesh.boundary_edges[mesh.boundary_tags == tag]
        if len(edges) == 0:
            continue
        a, b = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
        length = np.linalg.norm(b - a, axis=1)
        local = np.zeros((len(edges), 2, 2))
        for xi in _GAUSS_2:
            points = (1.0 - xi) * a + xi * b
            weight = 0.5 * length * _sample(mu_field, points, t, f"mu[{tag}]", 0.0, strict=False)
            phi = np.array([1.0 - xi, xi])
            local += weight[:, None, None] * np.outer(phi, phi)[None, :, :]
        rows.append(np.repeat(edges, 2, axis=1).ravel())
        cols.append(np.tile(edges, (1, 2)).ravel())
        vals.append(local.ravel())
    if not vals:
        return sp.csr_matrix((n, n))
    return finalize(sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)))


def assemble_stiffness(mesh: Mesh, coeff: Coefficients, t: float = 0.0) -> SparseMatrix:
    """``d(u, v) = int (k grad u . grad v + c u v) dx + int mu u v ds``.

    ``k`` and ``c`` are sampled at element centroids.
    """
    areas, grads = p1_gradients(mesh)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    k = _sample(coeff.k, centroids, t, "k", 0.0, strict=True)
    c = _sample(coeff.c, centroids, t, "c", 0.0, strict=False)
    diffusion = np.einsum("eid,ejd->eij", grads, grads) * (k * areas)[:, None, None]
    reaction = (c * areas)[:, None, None] * _LOCAL_MASS[None, :, :]
    stiffness = _scatter(mesh, diffusion + reaction)
    if coeff.mu:
        stiffness = finalize(stiffness + assemble_robin(mesh, coeff.mu, t))
    return stiffness


def nodal_velocity(mesh: Mesh, velocity: VelocityField, t: float = 0.0) -> np.ndarray:
    """Velocity at the vertices, zeroed on the boundary after checking it vanishes there."""
    values = np.array(velocity(mesh.vertices, t), dtype=float).reshape(mesh.n_vertices, 2)
    boundary = mesh.boundary_vertex_mask
    worst = float(np.abs(values[boundary]).max()) if boundary.any() else 0.0
    if worst > BOUNDARY_VELOCITY_TOL:
        raise CoefficientBoundError(f"velocity does not vanish on the boundary (max |v| = {worst:.3e})")
    values[boundary] = 0.0
    return values


def assemble_convection_raw(mesh: Mesh, velocity: VelocityField, t: float = 0.0) -> SparseMatrix:
    """``c(y, w) = int (v . grad y) w dx + 1/2 int (div v) y w dx`` for the P1 interpolant of ``v``.

    Integration is exact for the interpolated field; the result is skew up to
    roundoff because ``v`` vanishes on the boundary.
    """
    areas, grads = p1_gradients(mesh)
    nodal = nodal_velocity(mesh, velocity, t)[mesh.triangles]
    mass = areas[:, None, None] * _LOCAL_MASS[None, :, :]
    # transport[e, l, j] = v_l . grad(lambda_j)
    transport = np.einsum("eld,ejd->elj", nodal, grads)
    advective = np.einsum("eli,elj->eij", mass, transport)
    divergence = np.einsum("eld,eld->e", nodal, grads)
    return _scatter(mesh, advective + 0.5 * divergence[:, None, None] * mass)


def skew_defect(raw: SparseMatrix) -> float:
    """``max|C + C'| / max|C|`` (zero for an empty matrix)."""
    scale = max_abs(raw)
    return max_abs(raw + raw.T) / scale if scale > 0 else 0.0


def assemble_convection(mesh: Mesh, coeff: Coefficients, t: float = 0.0) -> SparseMatrix:
    """Exactly skew-symmetric convection matrix ``(C_raw - C_raw') / 2``."""
    if coeff.velocity is None:
        raise ConfigError("convection requested but no velocity field configured")
    raw = assemble_convection_raw(mesh, coeff.velocity, t)
    logger.debug("Convection skew defect before symmetrization: %.3e", skew_defect(raw))
    return finalize(0.5 * (raw - raw.T))


def l2_project(mesh: Mesh, mass, g: ScalarField, t: float = 0.0, tol: float = SOLVER_CONFIG["tol"]) -> Field:
    """L2 projection onto the P1 space.

    The load vector uses the edge-midpoint rule, exact for products of two
    linear functions, so members of the P1 space are reproduced.
    """
    g = parse_scalar_field(g)
    p = mesh.vertices[mesh.triangles]
    load = np.zeros((mesh.n_triangles, 3))
    weight = mesh.signed_areas / 3.0
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g_ij = np.asarray(g(0.5 * (p[:, i] + p[:, j]), t), dtype=float)
        g_ik = np.asarray(g(0.5 * (p[:, i] + p[:, k]), t), dtype=float)
        load[:, i] = weight * 0.5 * (g_ij + g_ik)
    b = np.bincount(mesh.triangles.ravel(), weights=load.ravel(), minlength=mesh.n_vertices)
    projected, info = cg_solve(mass, b, tol=tol)
    logger.debug("L2 projection: %d CG iterations", info.iterations)
    return projected


def build_operator(mesh: Mesh, coeff: Coefficients, delta: float = 1.0, t: float = 0.0) -> DiscreteOperator:
    mass = assemble_mass(mesh)
    stiffness = assemble_stiffness(mesh, coeff, t)
    convection = assemble_convection(mesh, coeff, t) if coeff.velocity is not None else None
    logger.debug(
        "Assembled operator: n=%d, nnz(A)=%d, convection=%s",
        mass.shape[0],
        stiffness.nnz,
        "none" if convection is None else f"nnz={convection.nnz}",
    )
    return DiscreteOperator(mass, stiffness, convection, delta)
