"""Design variables, the level-set Poisson map and cut-cell geometry.

The design vector holds nodal Poisson sources on the free vertices of the
design region.  A piecewise-linear Galerkin solve turns it into the level-set
field ``phi`` (negative in air, positive in the solid plug), and
:func:`classify_and_cut` extracts the sub-cell geometry used by the acoustic
assembly and by the shape derivative.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FacetTag, Mesh, Region

log = logging.getLogger(__name__)


class CellState(IntEnum):
    INSIDE = 0
    OUTSIDE = 1
    CUT = 2


class LevelSetError(ValueError):
    pass


class ZeroVertexWarning(RuntimeWarning):
    """A level-set vertex value was numerically zero and got nudged."""


def p1_matrices(mesh: Mesh, cells: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Linear stiffness and mass matrices over ``cells`` (global vertex numbering)."""
    glam = mesh.grad_lambda[cells]
    area = mesh.cell_areas[cells]
    ke = np.einsum("cid,cjd->cij", glam, glam) * area[:, None, None]
    me = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    rows = np.repeat(mesh.cells[cells], 3, axis=1).ravel()
    cols = np.tile(mesh.cells[cells], (1, 3)).ravel()
    n = mesh.n_points
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((me.ravel(), (rows, cols)), shape=(n, n))
    return K, M


def line_signed_distance(points: np.ndarray, a, b) -> np.ndarray:
    """Signed distance to the infinite line through ``a`` and ``b``.

    Positive on the left of the direction ``a -> b``.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    t = (b - a) / np.linalg.norm(b - a)
    d = np.asarray(points) - a
    return t[0] * d[:, 1] - t[1] * d[:, 0]


class LevelSetProblem:
    """Discrete Poisson map from design vector to level-set field.

    Solves ``K phi = M phi_hat`` on the design region with Dirichlet data on
    the vertices of ``DESIGN_INTERFACE_DIRICHLET`` facets and natural
    conditions elsewhere.  ``free`` lists the design-vector vertices.
    """

    def __init__(self, mesh: Mesh, dirichlet_values: np.ndarray | None = None):
        self.mesh = mesh
        self.design_cells = mesh.design_cells()
        if len(self.design_cells) == 0:
            raise LevelSetError("mesh has no design region")
        self.vertices = np.unique(mesh.cells[self.design_cells])
        self.dirichlet = mesh.dirichlet_vertices()
        if len(self.dirichlet) == 0:
            raise LevelSetError("singular level-set system: no Dirichlet vertices")
        self.free = np.setdiff1d(self.vertices, self.dirichlet)
        K, M = p1_matrices(mesh, self.design_cells)
        self.K_ff = K[self.free][:, self.free].tocsc()
        self.K_fd = K[self.free][:, self.dirichlet].tocsr()
        self.M_ff = M[self.free][:, self.free].tocsc()
        self._K_lu = spla.splu(self.K_ff)
        self._M_lu = spla.splu(self.M_ff)
        self.dirichlet_values = np.zeros(len(self.dirichlet))
        if dirichlet_values is not None:
            self.set_dirichlet(dirichlet_values)
        # position of each free vertex inside the design vector
        self.design_index = np.full(mesh.n_points, -1)
        self.design_index[self.free] = np.arange(len(self.free))

    @property
    def n_design(self) -> int:
        return len(self.free)

    def set_dirichlet(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != self.dirichlet.shape or not np.all(np.isfinite(values)):
            raise LevelSetError("Dirichlet data must be finite, one value per Dirichlet vertex")
        self.dirichlet_values = values

    def solve(self, design: np.ndarray) -> np.ndarray:
        """Level-set values on all mesh vertices (NaN outside the design region)."""
        design = np.asarray(design, dtype=float)
        if design.shape != (self.n_design,):
            raise LevelSetError(f"design vector must have length {self.n_design}")
        if not np.all(np.isfinite(design)):
            raise LevelSetError("design vector has non-finite entries")
        rhs = self.M_ff @ design - self.K_fd @ self.dirichlet_values
        phi = np.full(self.mesh.n_points, np.nan)
        phi[self.free] = self._K_lu.solve(rhs)
        phi[self.dirichlet] = self.dirichlet_values
        return phi

    def residual(self, design: np.ndarray, phi: np.ndarray) -> float:
        rhs = self.M_ff @ design - self.K_fd @ self.dirichlet_values
        r = self.K_ff @ phi[self.free] - rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), np.finfo(float).tiny))

    def design_for(self, phi_target: np.ndarray) -> np.ndarray:
        """Design vector whose Poisson solution reproduces ``phi_target`` at the free vertices.

        The Dirichlet data is left untouched, so the match is exact only if
        ``phi_target`` agrees with it on the Dirichlet vertices.
        """
        g_f = phi_target[self.free]
        g_d = phi_target[self.dirichlet]
        return self._M_lu.solve(self.K_ff @ g_f + self.K_fd @ g_d)

    def chain(self, dj_free: np.ndarray) -> np.ndarray:
        """Map a derivative with respect to free nodal values to the design vector.

        Since ``phi_f = K_ff^-1 (M_ff phi_hat - K_fd phi_D)``, the adjoint map is
        ``M_ff K_ff^-1`` (both matrices symmetric).
        """
        dj_free = np.asarray(dj_free)
        if np.iscomplexobj(dj_free):
            return self.chain(dj_free.real) + 1j * self.chain(dj_free.imag)
        return self.M_ff @ self._K_lu.solve(dj_free)


def perturb_levelset(phi: np.ndarray, vertex: int, t: float) -> np.ndarray:
    """``phi + t * w_vertex`` for the nodal hat function of ``vertex``."""
    out = np.array(phi, dtype=float, copy=True)
    out[vertex] += t
    return out


@dataclass(frozen=True, eq=False)
class CutGeometry:
    """Cell classification and the explicit zero-level geometry.

    Per cut cell ``cut_cells[i]``: boundary facet from ``facet_a[i]`` to
    ``facet_b[i]`` lying on mesh facets ``facet_edges[i]``, unit outward
    normal ``normal[i]`` and ``grad_norm[i] = |grad phi|``.  The air part of
    the cell is the convex polygon ``polygon[i, :polygon_size[i]]``.

    Per cut mesh edge ``edge_ids[j]``: the crossing point, ``n_s`` along the
    edge towards the solid side, ``grad_edge = |d phi / d n_s|``, the
    parameter ``t`` from the edge's first vertex, the one or two adjacent cut
    cells (indices into ``cut_cells``, padded with -1) and the conormals of
    their boundary facets at the point.
    """

    phi: np.ndarray
    state: np.ndarray
    cut_cells: np.ndarray
    polygon: np.ndarray
    polygon_size: np.ndarray
    facet_a: np.ndarray
    facet_b: np.ndarray
    facet_edges: np.ndarray
    normal: np.ndarray
    grad_norm: np.ndarray
    edge_ids: np.ndarray
    edge_point: np.ndarray
    edge_t: np.ndarray
    n_s: np.ndarray
    grad_edge: np.ndarray
    edge_cut: np.ndarray
    conormal: np.ndarray
    perturbed: np.ndarray

    @property
    def active_cells(self) -> np.ndarray:
        return np.flatnonzero(self.state != CellState.OUTSIDE)

    @property
    def facet_length(self) -> np.ndarray:
        return np.linalg.norm(self.facet_b - self.facet_a, axis=1)

    def inside_area(self, mesh: Mesh) -> float:
        full = mesh.cell_areas[self.state == CellState.INSIDE].sum()
        return float(full + polygon_areas(self.polygon, self.polygon_size).sum())

    def subtriangles(self) -> tuple[np.ndarray, np.ndarray]:
        """Fan triangulation of the inside polygons from their centroids.

        Returns triangles ``(n, 3, 2)`` and the index into ``cut_cells`` of each.
        """
        tris, owner = [], []
        for size in (3, 4):
            sel = np.flatnonzero(self.polygon_size == size)
            if len(sel) == 0:
                continue
            poly = self.polygon[sel, :size]
            c = poly.mean(axis=1)
            for e in range(size):
                tri = np.stack([c, poly[:, e], poly[:, (e + 1) % size]], axis=1)
                tris.append(tri)
                owner.append(sel)
        if not tris:
            return np.zeros((0, 3, 2)), np.zeros(0, dtype=int)
        return np.concatenate(tris), np.concatenate(owner)

    def boundary_polyline(self) -> np.ndarray:
        """Segments ``(n, 4)`` as ``x0, y0, x1, y1``."""
        return np.hstack([self.facet_a, self.facet_b])


def polygon_areas(poly: np.ndarray, size: np.ndarray) -> np.ndarray:
    x, y = poly[..., 0], poly[..., 1]
    out = np.zeros(len(poly))
    for s in (3, 4):
        sel = size == s
        xs, ys = x[sel, :s], y[sel, :s]
        out[sel] = 0.5 * np.sum(xs * np.roll(ys, -1, axis=1) - np.roll(xs, -1, axis=1) * ys, axis=1)
    return out


def _nudge_zeros(mesh: Mesh, phi: np.ndarray, design_cells: np.ndarray, rel: float) -> tuple[np.ndarray, np.ndarray]:
    verts = mesh.cells[design_cells]
    cell_scale = np.abs(phi[verts]).max(axis=1)
    scale = np.zeros(mesh.n_points)
    np.maximum.at(scale, verts.ravel(), np.repeat(cell_scale, 3))
    ids = np.unique(verts)
    small = ids[np.abs(phi[ids]) < rel * scale[ids]]
    small = np.union1d(small, ids[phi[ids] == 0])
    if len(small):
        phi = phi.copy()
        bump = rel * scale[small]
        bump[bump == 0] = rel
        phi[small] = bump
        warnings.warn(f"{len(small)} level-set vertex value(s) numerically zero; "
                      f"perturbed to +{rel:g} x local scale", ZeroVertexWarning, stacklevel=3)
    return phi, small


def classify_and_cut(mesh: Mesh, phi: np.ndarray, rel_zero: float = 1e-12) -> CutGeometry:
    """Classify cells by the sign of ``phi`` and extract the cut geometry.

    Fixed-air cells are always INSIDE.  Design-region vertex values that are
    numerically zero are nudged to the solid side (a warning is emitted) so
    that the zero set never passes through a mesh node.
    """
    phi = np.asarray(phi, dtype=float)
    design = mesh.design_cells()
    if len(design) and not np.all(np.isfinite(phi[mesh.cells[design]])):
        raise LevelSetError("level-set values missing on design-region vertices")
    phi, perturbed = _nudge_zeros(mesh, phi, design, rel_zero)

    state = np.full(mesh.n_cells, CellState.INSIDE, dtype=np.int8)
    vals = phi[mesh.cells[design]]
    neg = (vals < 0).sum(axis=1)
    state[design[neg == 3]] = CellState.INSIDE
    state[design[neg == 0]] = CellState.OUTSIDE
    cut = design[(neg == 1) | (neg == 2)]
    state[cut] = CellState.CUT

    pts = mesh.points[mesh.cells[cut]]             # (n, 3, 2)
    v = phi[mesh.cells[cut]]                       # (n, 3)
    n = len(cut)
    # rotate local vertices so that vertex 0 is the one of odd sign out
    negm = v < 0
    lone = np.where(negm.sum(axis=1) == 1, np.argmax(negm, axis=1), np.argmax(~negm, axis=1))
    perm = (lone[:, None] + np.arange(3)[None, :]) % 3
    r = np.arange(n)[:, None]
    P = pts[r, perm]
    V = v[r, perm]
    lone_neg = V[:, 0] < 0

    def crossing(i, j):
        t = V[:, i] / (V[:, i] - V[:, j])
        return P[:, i] + t[:, None] * (P[:, j] - P[:, i])

    x01 = crossing(0, 1)
    x02 = crossing(0, 2)
    polygon = np.zeros((n, 4, 2))
    size = np.where(lone_neg, 3, 4)
    # counterclockwise order is inherited from the cell orientation
    tri = np.stack([P[:, 0], x01, x02], axis=1)
    quad = np.stack([x01, P[:, 1], P[:, 2], x02], axis=1)
    polygon[lone_neg, :3] = tri[lone_neg]
    polygon[~lone_neg] = quad[~lone_neg]

    glam = mesh.grad_lambda[cut]
    gphi = np.einsum("ci,cid->cd", v, glam)
    gnorm = np.linalg.norm(gphi, axis=1)
    normal = gphi / gnorm[:, None]
    # mesh facets holding the crossing points: edge (0,1) is opposite local vertex 2
    cf = mesh.cell_facets[cut]
    e01 = cf[np.arange(n), perm[:, 2]]
    e02 = cf[np.arange(n), perm[:, 1]]
    facet_a = x01.copy()
    facet_b = x02.copy()
    edges = np.stack([e01, e02], axis=1)

    # edge crossings
    all_edges = edges.ravel()
    edge_ids, first = np.unique(all_edges, return_index=True)
    m = len(edge_ids)
    edge_cut = np.full((m, 2), -1)
    pos = np.searchsorted(edge_ids, all_edges)
    owner = np.repeat(np.arange(n), 2)
    taken = np.zeros(m, dtype=int)
    for k in range(len(all_edges)):
        j = pos[k]
        edge_cut[j, taken[j]] = owner[k]
        taken[j] += 1
    ev = mesh.facets[edge_ids]
    pa, pb = mesh.points[ev[:, 0]], mesh.points[ev[:, 1]]
    fa, fb = phi[ev[:, 0]], phi[ev[:, 1]]
    t = fa / (fa - fb)
    point = pa + t[:, None] * (pb - pa)
    elen = np.linalg.norm(pb - pa, axis=1)
    tangent = (pb - pa) / elen[:, None]
    n_s = np.where((fb > fa)[:, None], tangent, -tangent)
    grad_edge = np.abs(fb - fa) / elen
    # snap the facet endpoints to the shared edge crossing so the polyline is exactly continuous
    ends = np.stack([facet_a, facet_b], axis=1).reshape(-1, 2)
    ends[:] = point[pos]
    facet_a = ends.reshape(n, 2, 2)[:, 0].copy()
    facet_b = ends.reshape(n, 2, 2)[:, 1].copy()
    polygon = _snap_polygon(polygon, size, lone_neg, facet_a, facet_b)
    # orient each facet so that (b - a) rotated clockwise equals the outward normal
    d = facet_b - facet_a
    flip = (d[:, 1] * normal[:, 0] - d[:, 0] * normal[:, 1]) < 0
    facet_a[flip], facet_b[flip] = facet_b[flip].copy(), facet_a[flip].copy()
    edges[flip] = edges[flip][:, ::-1]

    conormal = np.zeros((m, 2, 2))
    for s in range(2):
        c = edge_cut[:, s]
        ok = c >= 0
        cc = c[ok]
        # other endpoint of the boundary facet of cell cc
        at_a = edges[cc, 0] == edge_ids[ok]
        other = np.where(at_a[:, None], facet_b[cc], facet_a[cc])
        vec = point[ok] - other
        conormal[ok, s] = vec / np.linalg.norm(vec, axis=1)[:, None]

    return CutGeometry(
        phi=phi, state=state, cut_cells=cut, polygon=polygon, polygon_size=size,
        facet_a=facet_a, facet_b=facet_b, facet_edges=edges, normal=normal,
        grad_norm=gnorm, edge_ids=edge_ids, edge_point=point, edge_t=t, n_s=n_s,
        grad_edge=grad_edge, edge_cut=edge_cut, conormal=conormal, perturbed=perturbed,
    )


def _snap_polygon(polygon, size, lone_neg, a, b):
    polygon = polygon.copy()
    polygon[lone_neg, 1] = a[lone_neg]
    polygon[lone_neg, 2] = b[lone_neg]
    q = ~lone_neg
    polygon[q, 0] = a[q]
    polygon[q, 3] = b[q]
    return polygon


def baseline_levelset(mesh: Mesh, walls, points: np.ndarray | None = None) -> np.ndarray:
    """Signed distance (positive in the solid) to a union of straight channel walls.

    Each wall is a pair of points ``(a, b)`` with the solid on the left of
    ``a -> b``.  Several walls combine by taking the pointwise maximum.
    """
    x = mesh.points if points is None else points
    phi = np.full(len(x), -np.inf)
    for a, b in walls:
        phi = np.maximum(phi, line_signed_distance(x, a, b))
    return phi


def straight_channel_walls(geom, spacing: float, offset: float = 0.25):
    """Straight baseline channel walls from the slit edges to the waveguide.

    The upper wall runs from the top of the slit to the top waveguide
    corner; when the slit does not start on the symmetry line a lower wall
    joins its bottom edge to the bottom waveguide corner.  Ends are shifted by
    ``offset * spacing`` off the grid lines (outwards at the waveguide,
    inwards at the slit) so the walls avoid mesh nodes and every vertex of
    the chamber interface lies strictly inside the solid.
    """
    x0, x1 = geom.x_design
    s = offset * spacing
    walls = [(np.array([x0, geom.slit_top - s]), np.array([x1, geom.waveguide_width + s]))]
    if geom.slit_start > 0:
        walls.append((np.array([x1, -s]), np.array([x0, geom.slit_start + s])))
    return walls


def export_levelset_csv(mesh: Mesh, phi: np.ndarray, path) -> None:
    ids = np.flatnonzero(np.isfinite(phi))
    rows = np.column_stack([mesh.points[ids], phi[ids]])
    _write_csv(path, "x,y,phi", rows)


def export_polyline_csv(cut: CutGeometry, path) -> None:
    _write_csv(path, "x0,y0,x1,y1", cut.boundary_polyline())


def _write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
