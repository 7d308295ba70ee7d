"""P1 finite element operators on a triangle mesh.

Scalar conforming functions live in the nodal P1 space V_h and are
represented by their vertex coefficient vectors (length nv).  Broken
functions live in the discontinuous per-simplex P1 space and are
represented by simplex-major coefficient vectors of length 3*ns: entries
3*j .. 3*j+2 are the values at the three local nodes of simplex j, in
the simplex's vertex order.

``assemble`` produces the sparse operators used everywhere downstream:

mass
    P, nv x nv, exact integrals of products of nodal basis functions;
    the local block on a triangle of area A is (A/12) [[2,1,1],[1,2,1],
    [1,1,2]].
broken_mass
    Pt, 3*ns x nv, the same local blocks scattered to broken rows and
    conforming columns, so that f' Pt u integrates a broken f against a
    conforming u.
dgrad
    (D1, D2), each ns x nv, the constant per-simplex partial derivative
    of a conforming function; at most three nonzeros per row.
areas
    Simplex areas.
restriction
    R, n_interior x nv, selecting interior vertices (one unit entry per
    row); R' maps interior unknowns to a conforming vector that is zero
    on the boundary.

The assembled stiffness sum_i Di' diag(areas) Di is exposed for use as
an independent reference in the linear (p = 2) regime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .constitutive import GrowthParams, tensor_f_rows
from .mesh import Mesh, MeshError, _signed_areas

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class FemOperators:
    """Assembled sparse operators for one mesh. See module docstring."""

    mesh: Mesh
    mass: sp.csr_matrix
    broken_mass: sp.csr_matrix
    dgrad: tuple[sp.csr_matrix, sp.csr_matrix]
    areas: np.ndarray
    restriction: sp.csr_matrix
    interior: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_simplices(self) -> int:
        return self.mesh.n_simplices

    @property
    def n_interior(self) -> int:
        return self.interior.shape[0]

    def prolong(self, u_interior: np.ndarray) -> np.ndarray:
        """Interior coefficients -> conforming vector, zero on the boundary."""
        u_interior = np.asarray(u_interior, dtype=float)
        if u_interior.shape != (self.n_interior,):
            raise ValueError(f"expected {self.n_interior} interior coefficients")
        full = np.zeros(self.n_vertices)
        full[self.interior] = u_interior
        return full

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Conforming vector -> interior coefficients."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_vertices,):
            raise ValueError(f"expected {self.n_vertices} coefficients")
        return u[self.interior].copy()

    def stiffness(self) -> sp.csr_matrix:
        """sum_i Di' diag(areas) Di; the p = 2 diffusion operator."""
        d1, d2 = self.dgrad
        w = sp.diags(self.areas)
        return (d1.T @ w @ d1 + d2.T @ w @ d2).tocsr()


def assemble(mesh: Mesh) -> FemOperators:
    """Assemble all operators for a validated mesh."""
    v = mesh.vertices
    t = mesh.simplices
    ns = mesh.n_simplices
    nv = mesh.n_vertices

    areas = _signed_areas(v, t)
    if np.any(areas <= 0.0):
        raise MeshError("inverted simplex during assembly")

    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    inv2a = 1.0 / (2.0 * areas)
    # Barycentric basis gradients: grad phi_a = (b_a, c_a) / (2A) with
    # b_a = y_{a+1} - y_{a+2}, c_a = x_{a+2} - x_{a+1} (cyclic).
    gx = np.column_stack([p1[:, 1] - p2[:, 1], p2[:, 1] - p0[:, 1], p0[:, 1] - p1[:, 1]]) * inv2a[:, None]
    gy = np.column_stack([p2[:, 0] - p1[:, 0], p0[:, 0] - p2[:, 0], p1[:, 0] - p0[:, 0]]) * inv2a[:, None]

    rows_d = np.repeat(np.arange(ns), 3)
    cols_d = t.ravel()
    d1 = sp.coo_matrix((gx.ravel(), (rows_d, cols_d)), shape=(ns, nv)).tocsr()
    d2 = sp.coo_matrix((gy.ravel(), (rows_d, cols_d)), shape=(ns, nv)).tocsr()

    rows_m = np.repeat(t, 3, axis=1).ravel()
    cols_m = np.tile(t, (1, 3)).ravel()
    data_m = (areas[:, None] * _LOCAL_MASS.ravel()[None, :]).ravel()
    mass = sp.coo_matrix((data_m, (rows_m, cols_m)), shape=(nv, nv)).tocsr()

    broken_rows = (3 * np.arange(ns)[:, None, None] + np.arange(3)[None, :, None])
    broken_rows = np.broadcast_to(broken_rows, (ns, 3, 3)).ravel()
    broken_cols = np.broadcast_to(t[:, None, :], (ns, 3, 3)).ravel()
    broken_data = (areas[:, None, None] * _LOCAL_MASS[None, :, :]).ravel()
    broken_mass = sp.coo_matrix((broken_data, (broken_rows, broken_cols)), shape=(3 * ns, nv)).tocsr()

    interior = np.where(~mesh.boundary_vertex_flags)[0]
    ni = interior.shape[0]
    restriction = sp.coo_matrix(
        (np.ones(ni), (np.arange(ni), interior)), shape=(ni, nv)
    ).tocsr()

    return FemOperators(
        mesh=mesh,
        mass=mass,
        broken_mass=broken_mass,
        dgrad=(d1, d2),
        areas=areas,
        restriction=restriction,
        interior=interior,
    )


def _check_conforming(ops: FemOperators, u: np.ndarray, name: str = "u") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (ops.n_vertices,):
        raise ValueError(f"{name} must have {ops.n_vertices} coefficients, got shape {u.shape}")
    return u


def gradient_per_simplex(ops: FemOperators, u: np.ndarray) -> np.ndarray:
    """Constant gradient of a conforming function on each simplex.

    Returns an (ns, 2) array; row j is the 1-by-2 gradient matrix of u
    restricted to simplex j.
    """
    u = _check_conforming(ops, u)
    d1, d2 = ops.dgrad
    return np.column_stack([d1 @ u, d2 @ u])


def l2_error_sq(ops: FemOperators, u: np.ndarray, v: np.ndarray) -> float:
    """Exact squared L2 distance of two conforming functions."""
    u = _check_conforming(ops, u)
    v = _check_conforming(ops, v, "v")
    d = u - v
    val = float(d @ (ops.mass @ d))
    return max(val, 0.0)


def quasinorm_error_sq(ops: FemOperators, u: np.ndarray, v: np.ndarray, params: GrowthParams) -> float:
    """Squared quasi-norm distance sum_j |S_j| |F(grad u) - F(grad v)|^2."""
    gu = gradient_per_simplex(ops, u)
    gv = gradient_per_simplex(ops, v)
    df = tensor_f_rows(gu, params) - tensor_f_rows(gv, params)
    return float(ops.areas @ np.sum(df * df, axis=1))


def nodal_interpolate(mesh: Mesh, g) -> np.ndarray:
    """Vertex-wise interpolation of a pointwise function g(x, y)."""
    vals = np.array([float(g(float(x), float(y))) for x, y in mesh.vertices])
    if not np.all(np.isfinite(vals)):
        k = int(np.where(~np.isfinite(vals))[0][0])
        raise ValueError(f"non-finite interpolation value at vertex {k}")
    return vals


def broken_embed(ops: FemOperators, u: np.ndarray) -> np.ndarray:
    """Embed a conforming function into the broken space (exact)."""
    u = _check_conforming(ops, u)
    return u[ops.mesh.simplices.ravel()]
