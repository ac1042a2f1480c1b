"""Quadrature rules and the quadratic Lagrange basis on triangles.

Local degrees of freedom follow the vertex-then-edge convention: entries 0-2
are the vertices, entry ``3 + i`` is the midpoint of the edge opposite
vertex ``i``.  Everything is written in barycentric coordinates so the same
routines serve full cells and cut sub-triangles.
"""
from __future__ import annotations

import numpy as np

# 6-point rule, exact for polynomials of degree 4 (weights sum to one)
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
TRI_BARY = np.array([
    [1 - 2 * _A, _A, _A], [_A, 1 - 2 * _A, _A], [_A, _A, 1 - 2 * _A],
    [1 - 2 * _B, _B, _B], [_B, 1 - 2 * _B, _B], [_B, _B, 1 - 2 * _B],
])
TRI_WEIGHTS = np.array([_WA] * 3 + [_WB] * 3)
TRI_WEIGHTS = TRI_WEIGHTS / TRI_WEIGHTS.sum()

# 3-point Gauss-Legendre on [0, 1], exact to degree 5
_g = np.sqrt(3.0 / 5.0)
LINE_POINTS = 0.5 * (1.0 + np.array([-_g, 0.0, _g]))
LINE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0

# edge opposite vertex i joins vertices (j, k)
EDGE_VERTS = ((1, 2), (2, 0), (0, 1))


def triangle_quadrature(tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Physical points and weights of the degree-4 rule on triangles ``tri``.

    ``tri`` has shape ``(n, 3, 2)``; returns points ``(n, 6, 2)`` and weights
    ``(n, 6)`` scaled by the (absolute) triangle areas.
    """
    tri = np.asarray(tri, dtype=float)
    pts = np.einsum("qv,nvd->nqd", TRI_BARY, tri)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return pts, area[:, None] * TRI_WEIGHTS[None, :]


def segment_quadrature(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3-point Gauss points ``(n, 3, 2)`` and weights ``(n, 3)`` on segments ``a -> b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a[:, None, :] + LINE_POINTS[None, :, None] * (b - a)[:, None, :]
    length = np.linalg.norm(b - a, axis=1)
    return pts, length[:, None] * LINE_WEIGHTS[None, :]


def p2_values(lam: np.ndarray) -> np.ndarray:
    """Quadratic shape functions at barycentric points ``lam[..., 3]``."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ], axis=-1)


def p2_gradients(lam: np.ndarray, glam: np.ndarray) -> np.ndarray:
    """Gradients ``(..., 6, 2)`` given barycentric values and their gradients ``(..., 3, 2)``."""
    out = np.empty(lam.shape[:-1] + (6, 2))
    for i in range(3):
        out[..., i, :] = (4 * lam[..., i, None] - 1) * glam[..., i, :]
    for i, (j, k) in enumerate(EDGE_VERTS):
        out[..., 3 + i, :] = 4 * (lam[..., j, None] * glam[..., k, :]
                                  + lam[..., k, None] * glam[..., j, :])
    return out


def p2_hessians(glam: np.ndarray) -> np.ndarray:
    """Constant Hessians ``(..., 6, 2, 2)`` of the quadratic shape functions."""
    out = np.empty(glam.shape[:-2] + (6, 2, 2))
    for i in range(3):
        g = glam[..., i, :]
        out[..., i, :, :] = 4 * g[..., :, None] * g[..., None, :]
    for i, (j, k) in enumerate(EDGE_VERTS):
        gj, gk = glam[..., j, :], glam[..., k, :]
        out[..., 3 + i, :, :] = 4 * (gj[..., :, None] * gk[..., None, :]
                                     + gk[..., :, None] * gj[..., None, :])
    return out


def p2_dofmap(mesh) -> tuple[np.ndarray, int]:
    """Global P2 dof ids per cell: vertices first, then one dof per mesh facet."""
    dofs = np.hstack([mesh.cells, mesh.n_points + mesh.cell_facets])
    return dofs, mesh.n_points + mesh.n_facets


def p2_dof_coordinates(mesh) -> np.ndarray:
    """Coordinates of all P2 dofs (vertices then facet midpoints)."""
    mid = mesh.points[mesh.facets].mean(axis=1)
    return np.vstack([mesh.points, mid])


def eval_basis(mesh, cell_ids: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shape-function values ``(Q, 6)`` and gradients ``(Q, 6, 2)`` at points ``x[Q]``."""
    lam = mesh.barycentric(cell_ids, x)
    glam = mesh.grad_lambda[cell_ids]
    return p2_values(lam), p2_gradients(lam, glam)


def symmetric_outer(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Pointwise ``a_i b_j + b_i a_j`` (or ``a_i a_j``) with exact symmetry.

    ``a`` has shape ``(..., n)``; the result has shape ``(..., n, n)``.
    """
    if b is None:
        return a[..., :, None] * a[..., None, :]
    return a[..., :, None] * b[..., None, :] + b[..., :, None] * a[..., None, :]
