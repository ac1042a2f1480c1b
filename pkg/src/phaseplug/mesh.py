"""Fixed simplicial triangulation of the hold-all.

The mesh never changes during optimization: the design boundary is carried by
the level-set field and cuts through cells.  Cells carry a region tag
(fixed air or design region) and every edge of the triangulation is stored
once as a :class:`Facet` with a boundary tag.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class MeshError(ValueError):
    """Raised for degenerate geometry or inconsistent connectivity."""


class Region(IntEnum):
    FIXED_AIR = 0
    DESIGN_REGION = 1


class FacetTag(IntEnum):
    INTERIOR = 0
    DIAPHRAGM = 1
    OUTLET = 2
    SYMMETRY_NEUMANN = 3
    FIXED_WALL = 4
    DESIGN_INTERFACE_DIRICHLET = 5


@dataclass(frozen=True)
class GeometryParams:
    """Dimensions of the 2D benchmark cross-section, in meters.

    The chamber occupies ``[0, d] x [0, l_c]`` with the diaphragm at ``x = 0``.
    The design region ``[d, d + l_p] x [0, design_height]`` sits between the
    chamber and the waveguide ``[d + l_p, d + l_p + l_wg] x [0, r_wg]``.
    The line ``y = 0`` is a symmetry axis.  The chamber opens into the design
    region through the slit ``x = d, slit_start <= y <= slit_start + slit_width``.
    """

    chamber_length: float = 28e-3
    chamber_depth: float = 0.5e-3
    waveguide_width: float = 13e-3
    waveguide_length: float = 33e-3
    plug_length: float = 17e-3
    slit_width: float = 4.6e-3
    slit_start: float = 0.0
    design_height: float | None = None
    symmetry_bottom: bool = True
    lossy_chamber_wall: bool = True

    @property
    def height(self) -> float:
        return self.waveguide_width if self.design_height is None else self.design_height

    @property
    def x_design(self) -> tuple[float, float]:
        d = self.chamber_depth
        return d, d + self.plug_length

    @property
    def x_outlet(self) -> float:
        return self.chamber_depth + self.plug_length + self.waveguide_length

    @property
    def diaphragm_to_outlet(self) -> float:
        return self.x_outlet

    @property
    def compression_ratio(self) -> float:
        """Diaphragm length over waveguide width (2D analogue of S_d/S_wg)."""
        return self.chamber_length / self.waveguide_width

    def area(self) -> float:
        return (self.chamber_depth * self.chamber_length
                + self.plug_length * self.height
                + self.waveguide_length * self.waveguide_width)

    def validate(self) -> None:
        names = ("chamber_length", "chamber_depth", "waveguide_width",
                 "waveguide_length", "plug_length", "slit_width")
        for name in names:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise MeshError(f"geometry: {name} must be positive, got {value!r}")
        h = self.height
        if not (math.isfinite(h) and h > 0):
            raise MeshError(f"geometry: design_height must be positive, got {h!r}")
        if h > self.chamber_length:
            raise MeshError("geometry: design region taller than the chamber")
        if h < self.waveguide_width:
            raise MeshError("geometry: design region lower than the waveguide")
        if not (math.isfinite(self.slit_start) and self.slit_start >= 0):
            raise MeshError(f"geometry: slit_start must be non-negative, got {self.slit_start!r}")
        if self.slit_start + self.slit_width >= h:
            raise MeshError(
                f"geometry: slit_width {self.slit_width} (from {self.slit_start}) does not "
                f"fit inside the chamber interface {h}")

    @property
    def slit_top(self) -> float:
        return self.slit_start + self.slit_width


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with region and facet tags.

    ``facets[f]`` holds the two vertex ids of edge ``f``; ``facet_cells[f]``
    holds its one or two adjacent cells (``-1`` pads boundary facets).
    ``cell_facets[c, i]`` is the facet opposite local vertex ``i``.
    """

    points: np.ndarray
    cells: np.ndarray
    cell_region: np.ndarray
    facets: np.ndarray
    facet_cells: np.ndarray
    facet_tag: np.ndarray
    facet_lossy: np.ndarray
    cell_facets: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- sizes ---------------------------------------------------------------
    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    # -- geometry ------------------------------------------------------------
    @property
    def cell_areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            p = self.points[self.cells]
            e1 = p[:, 1] - p[:, 0]
            e2 = p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return self._cache["areas"]

    @property
    def cell_diameters(self) -> np.ndarray:
        if "diam" not in self._cache:
            p = self.points[self.cells]
            lengths = np.stack([np.linalg.norm(p[:, (i + 1) % 3] - p[:, (i + 2) % 3], axis=1)
                                for i in range(3)], axis=1)
            self._cache["diam"] = lengths.max(axis=1)
        return self._cache["diam"]

    @property
    def facet_lengths(self) -> np.ndarray:
        if "flen" not in self._cache:
            p = self.points[self.facets]
            self._cache["flen"] = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        return self._cache["flen"]

    @property
    def grad_lambda(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape ``(n_cells, 3, 2)``."""
        if "glam" not in self._cache:
            p = self.points[self.cells]
            x0, x1, x2 = p[:, 0], p[:, 1], p[:, 2]
            twice_area = 2.0 * self.cell_areas
            # gradient of lambda_i is the inward normal of the opposite edge / (2 area)
            g = np.empty((self.n_cells, 3, 2))
            for i, (a, b) in enumerate(((x1, x2), (x2, x0), (x0, x1))):
                edge = b - a
                g[:, i, 0] = -edge[:, 1] / twice_area
                g[:, i, 1] = edge[:, 0] / twice_area
            self._cache["glam"] = g
        return self._cache["glam"]

    def barycentric(self, cell_ids: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points ``x[q]`` with respect to ``cell_ids[q]``."""
        cell_ids = np.asarray(cell_ids)
        x0 = self.points[self.cells[cell_ids, 0]]
        g = self.grad_lambda[cell_ids]
        dx = np.asarray(x) - x0
        lam12 = np.einsum("qid,qd->qi", g[:, 1:], dx)
        return np.column_stack([1.0 - lam12.sum(axis=1), lam12])

    # -- adjacency -------------------------------------------------------------
    @property
    def vertex_cells(self) -> list[np.ndarray]:
        """Cells incident to each vertex."""
        if "v2c" not in self._cache:
            order = np.argsort(self.cells.ravel(), kind="stable")
            counts = np.bincount(self.cells.ravel(), minlength=self.n_points)
            split = np.split(order // 3, np.cumsum(counts)[:-1])
            self._cache["v2c"] = split
        return self._cache["v2c"]

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] >= 0)

    def facets_with_tag(self, tag: FacetTag) -> np.ndarray:
        return np.flatnonzero(self.facet_tag == tag)

    def design_cells(self) -> np.ndarray:
        return np.flatnonzero(self.cell_region == Region.DESIGN_REGION)

    def design_vertices(self) -> np.ndarray:
        return np.unique(self.cells[self.design_cells()])

    def dirichlet_vertices(self) -> np.ndarray:
        ids = self.facets_with_tag(FacetTag.DESIGN_INTERFACE_DIRICHLET)
        return np.unique(self.facets[ids])

    def outward_normals(self, facet_ids: np.ndarray) -> np.ndarray:
        """Unit normals of boundary facets pointing out of their (first) cell."""
        facet_ids = np.asarray(facet_ids)
        p = self.points[self.facets[facet_ids]]
        t = p[:, 1] - p[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]]) / np.linalg.norm(t, axis=1)[:, None]
        cell = self.facet_cells[facet_ids, 0]
        centroid = self.points[self.cells[cell]].mean(axis=1)
        flip = np.einsum("qd,qd->q", centroid - p[:, 0], n) > 0
        n[flip] *= -1
        return n

    # -- construction ----------------------------------------------------------
    @classmethod
    def from_cells(
        cls,
        points: np.ndarray,
        cells: np.ndarray,
        cell_region: np.ndarray | None = None,
        boundary_tagger: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
        interface_tagger: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
        lossy_tagger: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None,
    ) -> "Mesh":
        """Build facets and adjacency from a cell list.

        Cells are reoriented counterclockwise.  ``boundary_tagger(midpoints,
        normals)`` returns a :class:`FacetTag` per boundary facet (default
        ``FIXED_WALL``).  ``interface_tagger(midpoints, facet_ids)`` returns
        tags for the interior facets separating the two regions (default
        ``INTERIOR``).  ``lossy_tagger(midpoints, tags, facet_ids)`` flags
        facets carrying viscothermal losses.
        """
        points = np.ascontiguousarray(points, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshError("cells must have shape (m, 3)")
        if not np.all(np.isfinite(points)):
            raise MeshError("non-finite point coordinates")
        if cell_region is None:
            cell_region = np.full(len(cells), Region.FIXED_AIR, dtype=np.int8)
        cell_region = np.asarray(cell_region, dtype=np.int8)

        p = points[cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(cross == 0):
            raise MeshError(f"degenerate cell {int(np.flatnonzero(cross == 0)[0])}")
        cw = cross < 0
        cells[cw] = cells[cw][:, [0, 2, 1]]
        if np.any(cells[:, 0] == cells[:, 1]) or np.any(cells[:, 1] == cells[:, 2]) \
                or np.any(cells[:, 0] == cells[:, 2]):
            raise MeshError("cell with repeated vertex")

        # local edge i is opposite local vertex i
        local = np.array([[1, 2], [2, 0], [0, 1]])
        edges = cells[:, local]                      # (m, 3, 2)
        key = np.sort(edges.reshape(-1, 2), axis=1)
        facets, inverse, counts = np.unique(key, axis=0, return_inverse=True,
                                            return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            bad = int(np.flatnonzero(counts > 2)[0])
            raise MeshError(f"facet {bad} shared by more than two cells")
        cell_facets = inverse.reshape(-1, 3)
        facet_cells = np.full((len(facets), 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(len(cells)), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_f = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_f[1:] != sorted_f[:-1]
        facet_cells[sorted_f[first], 0] = owner[order[first]]
        facet_cells[sorted_f[~first], 1] = owner[order[~first]]

        mid = points[facets].mean(axis=1)
        tags = np.full(len(facets), FacetTag.INTERIOR, dtype=np.int8)
        boundary = facet_cells[:, 1] < 0
        mesh = cls(points, cells, cell_region, facets, facet_cells, tags,
                   np.zeros(len(facets), dtype=bool), cell_facets)
        bids = np.flatnonzero(boundary)
        if boundary_tagger is None:
            tags[bids] = FacetTag.FIXED_WALL
        else:
            tags[bids] = boundary_tagger(mid[bids], mesh.outward_normals(bids))
        if np.any(tags[bids] == FacetTag.INTERIOR):
            raise MeshError("boundary facet tagged INTERIOR")
        if interface_tagger is not None:
            reg = cell_region[facet_cells]
            iface = np.flatnonzero(~boundary & (reg[:, 0] != reg[:, 1]))
            tags[iface] = interface_tagger(mid[iface], iface)
        if lossy_tagger is not None:
            mesh.facet_lossy[:] = lossy_tagger(mid, tags, np.arange(len(facets)))
        return mesh

    def validate(self) -> None:
        """Check orientation, region partition and the handshake identity."""
        if np.any(self.cell_areas <= 0):
            raise MeshError(f"cell {int(np.argmin(self.cell_areas))} has non-positive area")
        adjacency = facet_adjacency(self)
        n_int = sum(1 for cs in adjacency if len(cs) == 2)
        n_bnd = sum(1 for cs in adjacency if len(cs) == 1)
        if 2 * n_int + n_bnd != 3 * self.n_cells:
            raise MeshError("handshake identity violated")
        bnd = self.boundary_facets
        if np.any(self.facet_tag[bnd] == FacetTag.INTERIOR):
            raise MeshError("boundary facet without boundary tag")


def facet_adjacency(mesh: Mesh) -> list[tuple[int, ...]]:
    """Map every facet to the tuple of its adjacent cells.

    Interior facets map to two cells and boundary facets to one.  The map is
    cross-checked against ``cell_facets``; a mismatch raises :class:`MeshError`
    naming the facet.
    """
    out: list[tuple[int, ...]] = []
    for f, (c0, c1) in enumerate(mesh.facet_cells):
        cs = (int(c0),) if c1 < 0 else (int(c0), int(c1))
        if c0 < 0:
            raise MeshError(f"facet {f} has no adjacent cell")
        for c in cs:
            if f not in mesh.cell_facets[c]:
                raise MeshError(f"facet {f} not referenced by its cell {c}")
        out.append(cs)
    seen = np.bincount(mesh.cell_facets.ravel(), minlength=mesh.n_facets)
    expected = np.array([len(cs) for cs in out])
    bad = np.flatnonzero(seen != expected)
    if len(bad):
        raise MeshError(f"facet {int(bad[0])} has inconsistent connectivity")
    return out


def _grid_axis(breaks: Sequence[float], spacing: float) -> np.ndarray:
    coords = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((b - a) / spacing - 1e-9))
        coords.extend(np.linspace(a, b, n + 1)[1:])
    return np.asarray(coords)


def build_rectangles_mesh(
    rectangles: Sequence[tuple[float, float, float, float, Region]],
    spacing: float,
    boundary_tagger=None,
    interface_tagger=None,
    lossy_tagger=None,
    extra_x: Sequence[float] = (),
    extra_y: Sequence[float] = (),
) -> Mesh:
    """Structured triangulation of a union of axis-aligned rectangles.

    Each rectangle is ``(x0, x1, y0, y1, region)``.  A common tensor grid is
    laid through all rectangle corners (plus ``extra_x``/``extra_y`` break
    lines) with steps no larger than ``spacing``; each grid quad whose center
    lies in a rectangle is split along its rising diagonal.
    """
    if spacing <= 0:
        raise MeshError("spacing must be positive")
    for r in rectangles:
        if not (r[1] > r[0] and r[3] > r[2]):
            raise MeshError(f"degenerate rectangle {r[:4]}")
    xb = sorted({v for r in rectangles for v in r[:2]} | set(extra_x))
    yb = sorted({v for r in rectangles for v in r[2:4]} | set(extra_y))
    xs = _grid_axis(xb, spacing)
    ys = _grid_axis(yb, spacing)
    nx, ny = len(xs), len(ys)
    xc = 0.5 * (xs[:-1] + xs[1:])
    yc = 0.5 * (ys[:-1] + ys[1:])
    region = np.full((nx - 1, ny - 1), -1, dtype=np.int8)
    for x0, x1, y0, y1, reg in rectangles:
        inside = ((xc[:, None] > x0) & (xc[:, None] < x1)
                  & (yc[None, :] > y0) & (yc[None, :] < y1))
        region[inside & (region < 0)] = reg
    ii, jj = np.nonzero(region >= 0)
    used = np.zeros((nx, ny), dtype=bool)
    for di in (0, 1):
        for dj in (0, 1):
            used[ii + di, jj + dj] = True
    vid = np.full((nx, ny), -1, dtype=np.int64)
    vid[used] = np.arange(used.sum())
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([gx[used], gy[used]])
    a = vid[ii, jj]
    b = vid[ii + 1, jj]
    c = vid[ii + 1, jj + 1]
    d = vid[ii, jj + 1]
    cells = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    regs = np.concatenate([region[ii, jj], region[ii, jj]])
    return Mesh.from_cells(points, cells, regs, boundary_tagger, interface_tagger,
                           lossy_tagger)


def build_benchmark_mesh(geom: GeometryParams, h_target: float) -> Mesh:
    """Triangulate chamber, design region and waveguide.

    Every cell diameter is at most ``h_target``, which must be smaller than the
    chamber depth.
    """
    geom.validate()
    if not (h_target > 0 and h_target < geom.chamber_depth):
        raise MeshError(
            f"h_target {h_target!r} must be positive and smaller than the chamber "
            f"depth {geom.chamber_depth!r}")
    d = geom.chamber_depth
    xd0, xd1 = geom.x_design
    xo = geom.x_outlet
    H = geom.height
    rects = [
        (0.0, d, 0.0, geom.chamber_length, Region.FIXED_AIR),
        (xd0, xd1, 0.0, H, Region.DESIGN_REGION),
        (xd1, xo, 0.0, geom.waveguide_width, Region.FIXED_AIR),
    ]
    tol = 1e-9 * geom.chamber_length

    def boundary_tagger(mid, normal):
        tags = np.full(len(mid), FacetTag.FIXED_WALL, dtype=np.int8)
        tags[np.abs(mid[:, 0]) < tol] = FacetTag.DIAPHRAGM
        tags[np.abs(mid[:, 0] - xo) < tol] = FacetTag.OUTLET
        if geom.symmetry_bottom:
            tags[np.abs(mid[:, 1]) < tol] = FacetTag.SYMMETRY_NEUMANN
        return tags

    def interface_tagger(mid, ids):
        tags = np.full(len(mid), FacetTag.INTERIOR, dtype=np.int8)
        on_chamber = np.abs(mid[:, 0] - xd0) < tol
        in_slit = (mid[:, 1] > geom.slit_start) & (mid[:, 1] < geom.slit_top)
        tags[on_chamber & ~in_slit] = FacetTag.DESIGN_INTERFACE_DIRICHLET
        return tags

    def lossy_tagger(mid, tags, ids):
        lossy = tags == FacetTag.DIAPHRAGM
        if geom.lossy_chamber_wall:
            chamber_wall = (np.abs(mid[:, 0] - d) < tol) & (tags == FacetTag.FIXED_WALL)
            lossy |= chamber_wall
            lossy |= tags == FacetTag.DESIGN_INTERFACE_DIRICHLET
        return lossy

    # the slit ends are grid lines so that the opening is a union of facets
    spacing = h_target / math.sqrt(2.0)
    return build_rectangles_mesh(rects, spacing, boundary_tagger, interface_tagger,
                                 lossy_tagger, extra_y=[geom.slit_start, geom.slit_top])


def build_duct_mesh(length: float, width: float, h_target: float) -> Mesh:
    """Straight duct: diaphragm at ``x = 0``, outlet at ``x = length``, lossless walls."""
    if not (length > 0 and width > 0 and h_target > 0):
        raise MeshError("duct dimensions and h_target must be positive")
    tol = 1e-9 * length

    def boundary_tagger(mid, normal):
        tags = np.full(len(mid), FacetTag.FIXED_WALL, dtype=np.int8)
        tags[np.abs(mid[:, 0]) < tol] = FacetTag.DIAPHRAGM
        tags[np.abs(mid[:, 0] - length) < tol] = FacetTag.OUTLET
        return tags

    return build_rectangles_mesh([(0.0, length, 0.0, width, Region.FIXED_AIR)],
                                 h_target / math.sqrt(2.0), boundary_tagger,
                                 lossy_tagger=lambda mid, tags, ids: tags == FacetTag.DIAPHRAGM)


def export_mesh(mesh: Mesh, path: str | Path) -> None:
    """Write the plain-text POINTS / CELLS / FACETS format."""
    lines = [f"POINTS {mesh.n_points}"]
    lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.points)]
    lines.append(f"CELLS {mesh.n_cells}")
    lines += [f"{i} {a} {b} {c} {Region(r).name}"
              for i, ((a, b, c), r) in enumerate(zip(mesh.cells, mesh.cell_region))]
    lines.append(f"FACETS {mesh.n_facets}")
    lines += [f"{i} {a} {b} {FacetTag(t).name}"
              for i, ((a, b), t) in enumerate(zip(mesh.facets, mesh.facet_tag))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> Mesh:
    """Read a mesh written by :func:`export_mesh` (facet tags are restored)."""
    lines = Path(path).read_text().splitlines()
    pos = 0

    def section(name):
        nonlocal pos
        head = lines[pos].split()
        if head[0] != name:
            raise MeshError(f"line {pos + 1}: expected section {name}")
        n = int(head[1])
        body = [ln.split() for ln in lines[pos + 1:pos + 1 + n]]
        pos += n + 1
        return body

    pts = np.array([[float(r[1]), float(r[2])] for r in section("POINTS")])
    cell_rows = section("CELLS")
    cells = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in cell_rows])
    regs = np.array([Region[r[4]] for r in cell_rows], dtype=np.int8)
    facet_rows = section("FACETS")
    tag_of = {tuple(sorted((int(r[1]), int(r[2])))): FacetTag[r[3]] for r in facet_rows}
    mesh = Mesh.from_cells(pts, cells, regs)
    for f, (a, b) in enumerate(mesh.facets):
        mesh.facet_tag[f] = tag_of[(int(a), int(b))]
    return mesh
