"""Stabilized CutFEM discretization of the lossy Helmholtz problem.

The state matrix at wavenumber ``k`` is assembled from wavenumber-independent
parts::

    A = K - k^2 M + i k B_out + alpha_T W_mass + alpha_V W_tan + eps_s G

``K`` and ``M`` are integrated over the air part of every active cell, ``B_out``
over the outlet, ``W_*`` over the lossy walls (fixed lossy facets plus the cut
boundary) and ``G`` is the face ghost penalty.  Degrees of freedom whose
support misses the air domain get identity rows.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .levelset import CellState, CutGeometry
from .mesh import FacetTag, Mesh, Region

log = logging.getLogger(__name__)

PERMC_SPEC = "MMD_AT_PLUS_A"


class SolverError(RuntimeError):
    def __init__(self, msg: str, frequency: float | None = None):
        if frequency is not None:
            msg = f"{msg} (f = {frequency:.6g} Hz)"
        super().__init__(msg)
        self.frequency = frequency


@dataclass(frozen=True)
class PhysicsParams:
    """Air properties (SI units), diaphragm drive and loss switch.

    ``e_a`` is the direction of the diaphragm acceleration.  The default
    points into the air (``-x`` is the outward normal of the diaphragm), so
    the outlet pressure of a plain duct equals the lumped limit ``d = 0``.
    """

    c0: float = 343.20
    rho0: float = 1.2044
    nu: float = 1.5061e-5
    prandtl: float = 0.7078
    gamma: float = 1.4
    cp: float = 1004.9
    a_d: float = 1.0
    losses: bool = True
    e_a: tuple[float, float] = (-1.0, 0.0)

    def __post_init__(self):
        for name in ("c0", "rho0", "nu", "prandtl", "gamma", "cp"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"physics: {name} must be positive, got {v!r}")
        if not self.gamma > 1:
            raise ValueError("physics: gamma must exceed 1")
        if not math.isfinite(self.a_d):
            raise ValueError("physics: a_d must be finite")

    def wavenumber(self, f_hz):
        return 2 * np.pi * np.asarray(f_hz, dtype=float) / self.c0


def boundary_layer_thicknesses(physics: PhysicsParams, omega: float) -> tuple[float, float]:
    """Viscous and thermal boundary-layer thicknesses at angular frequency ``omega``."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    delta_v = math.sqrt(2 * physics.nu / omega)
    conductivity = physics.cp * physics.rho0 * physics.nu / physics.prandtl
    delta_t = math.sqrt(2 * conductivity / (omega * physics.rho0 * physics.cp))
    return delta_v, delta_t


@dataclass(frozen=True)
class WentzellCoeffs:
    k: float
    delta_V: float
    delta_T: float
    alpha_T: complex
    alpha_V: complex


def wentzell_coeffs(physics: PhysicsParams, k: float, losses: bool | None = None) -> WentzellCoeffs:
    losses = physics.losses if losses is None else losses
    if losses:
        dv, dt = boundary_layer_thicknesses(physics, k * physics.c0)
    else:
        dv = dt = 0.0
    return coeffs_from_thicknesses(k, dv, dt, physics.gamma)


def coeffs_from_thicknesses(k: float, delta_v: float, delta_t: float, gamma: float) -> WentzellCoeffs:
    alpha_t = delta_t * k * k * (1j - 1) * (gamma - 1) / 2
    alpha_v = delta_v * (1j - 1) / 2
    return WentzellCoeffs(k, delta_v, delta_t, alpha_t, alpha_v)


def psi(q, p, grad_q, grad_p, n, coeffs: WentzellCoeffs):
    """Pointwise wall integrand ``alpha_T q p + alpha_V (grad_T q . grad_T p)``."""
    nq = np.sum(grad_q * n, axis=-1)
    np_ = np.sum(grad_p * n, axis=-1)
    return coeffs.alpha_T * q * p + coeffs.alpha_V * (np.sum(grad_q * grad_p, axis=-1) - nq * np_)


def _assemble(dofs: np.ndarray, elem: np.ndarray, n: int) -> sp.csr_matrix:
    """Sparse assembly summing duplicates in element order.

    scipy's own duplicate summation may add the contributions to ``(i, j)``
    and ``(j, i)`` in different orders; a stable sort keeps them identical so
    symmetric element matrices give an exactly symmetric global matrix.
    """
    m = dofs.shape[1]
    rows = np.repeat(dofs, m, axis=1).ravel()
    cols = np.tile(dofs, (1, m)).ravel()
    vals = elem.ravel()
    if len(vals) == 0:
        return sp.csr_matrix((n, n), dtype=elem.dtype)
    key = rows.astype(np.int64) * n + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    start = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    summed = np.add.reduceat(vals[order], start)
    uk = key[start]
    return sp.csr_matrix((summed, (uk // n, uk % n)), shape=(n, n))


def _vector(dofs: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n, dtype=vals.dtype)
    np.add.at(out, dofs.ravel(), vals.ravel())
    return out


def _grad_products(ga: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_q w_q grad N_i . grad N_j`` from gradients ``(n, Q, m, 2)``."""
    x = fem.symmetric_outer(ga[..., 0]) + fem.symmetric_outer(ga[..., 1])
    return np.einsum("nq,nqij->nij", w, x)


def _mass_products(va: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("nq,nqij->nij", w, fem.symmetric_outer(va))


@dataclass(eq=False)
class SystemParts:
    """Wavenumber-independent pieces of the state system for one geometry."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    B: sp.csr_matrix
    W_mass: sp.csr_matrix
    W_tan: sp.csr_matrix
    G: sp.csr_matrix
    b: np.ndarray
    r: np.ndarray
    active: np.ndarray
    ghost_faces: np.ndarray
    eps_s: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.b)

    def matrix(self, coeffs: WentzellCoeffs, eps_s: float | None = None) -> sp.csr_matrix:
        eps = self.eps_s if eps_s is None else eps_s
        k = coeffs.k
        A = (self.K - (k * k) * self.M).astype(complex) + (1j * k) * self.B
        if coeffs.alpha_T != 0:
            A = A + coeffs.alpha_T * self.W_mass
        if coeffs.alpha_V != 0:
            A = A + coeffs.alpha_V * self.W_tan
        if self.G.nnz and eps != 0:
            A = A + eps * self.G
        inactive = np.flatnonzero(~self.active)
        if len(inactive):
            A = A + sp.csr_matrix((np.ones(len(inactive)), (inactive, inactive)),
                                  shape=A.shape)
        return A.tocsr()

    def rhs(self) -> np.ndarray:
        b = self.b.astype(complex)
        b[~self.active] = 0
        return b


@dataclass(eq=False)
class StateSolution:
    k: float
    p: np.ndarray
    A: sp.csr_matrix
    lu: object
    coeffs: WentzellCoeffs
    frequency: float | None = None

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        """Solve ``A^T z = r`` reusing the state factorization (``A`` is symmetric)."""
        return self.lu.solve(np.asarray(r, dtype=complex))


def factorize(A: sp.spmatrix, frequency: float | None = None):
    try:
        return spla.splu(sp.csc_matrix(A), permc_spec=PERMC_SPEC)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}", frequency) from exc


def solve_state(A: sp.spmatrix, b: np.ndarray, frequency: float | None = None,
                rtol: float = 1e-10):
    """Direct solve returning ``(x, lu)``; the factorization is kept for adjoints."""
    A = sp.csr_matrix(A)
    b = np.asarray(b)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise ValueError("matrix and right-hand side sizes do not match")
    lu = factorize(A, frequency)
    x = lu.solve(b.astype(complex))
    nb = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b) / nb if nb > 0 else np.linalg.norm(A @ x)
    if not np.all(np.isfinite(x)) or res > rtol:
        raise SolverError(f"ill-conditioned state system, relative residual {res:.3e}",
                          frequency)
    return x, lu


class HelmholtzAssembler:
    """Assembles :class:`SystemParts` for cut geometries on a fixed mesh."""

    def __init__(self, mesh: Mesh, physics: PhysicsParams, eps_s: float = 1e-2):
        if eps_s < 0:
            raise ValueError("eps_s must be non-negative")
        self.mesh = mesh
        self.physics = physics
        self.eps_s = eps_s
        self.dofs, self.ndof = fem.p2_dofmap(mesh)
        for f in np.flatnonzero(mesh.facet_lengths == 0):
            raise ValueError(f"facet {f} has zero length")
        self._element_matrices()
        self._fixed_parts()

    # -- wavenumber- and geometry-independent pieces ---------------------------
    def _element_matrices(self):
        mesh = self.mesh
        tri = mesh.points[mesh.cells]
        pts, w = fem.triangle_quadrature(tri)
        lam = np.broadcast_to(fem.TRI_BARY, (mesh.n_cells, 6, 3))
        vals = fem.p2_values(lam)
        grads = fem.p2_gradients(lam, mesh.grad_lambda[:, None])
        self.Ke = _grad_products(grads, w)
        self.Me = _mass_products(vals, w)

    def _facet_traces(self, facet_ids, cells, a=None, b=None):
        """Values, gradients, weights and unit tangents on (sub)facets."""
        mesh = self.mesh
        if a is None:
            ends = mesh.points[mesh.facets[facet_ids]]
            a, b = ends[:, 0], ends[:, 1]
        x, w = fem.segment_quadrature(a, b)
        nq = x.shape[1]
        cq = np.repeat(cells, nq)
        v, g = fem.eval_basis(mesh, cq, x.reshape(-1, 2))
        t = (b - a) / np.linalg.norm(b - a, axis=1)[:, None]
        return v.reshape(len(a), nq, 6), g.reshape(len(a), nq, 6, 2), w, t

    def _wall_matrices(self, cells, v, g, w, t):
        mass = _mass_products(v, w)
        tg = np.einsum("nqid,nd->nqi", g, t)
        tan = _mass_products(tg, w)
        return _assemble(self.dofs[cells], mass, self.ndof), _assemble(self.dofs[cells], tan, self.ndof)

    def _fixed_parts(self):
        mesh, n = self.mesh, self.ndof
        fixed = np.flatnonzero(mesh.cell_region == Region.FIXED_AIR)
        self.fixed_cells = fixed
        self.K_fixed = _assemble(self.dofs[fixed], self.Ke[fixed], n)
        self.M_fixed = _assemble(self.dofs[fixed], self.Me[fixed], n)

        out = mesh.facets_with_tag(FacetTag.OUTLET)
        if len(out) == 0:
            raise ValueError("mesh has no OUTLET facets")
        oc = mesh.facet_cells[out, 0]
        v, g, w, t = self._facet_traces(out, oc)
        self.B_out = _assemble(self.dofs[oc], _mass_products(v, w), n)
        self.outlet_length = float(mesh.facet_lengths[out].sum())
        self.r = _vector(self.dofs[oc], np.einsum("nq,nqi->ni", w, v), n) / self.outlet_length

        dia = mesh.facets_with_tag(FacetTag.DIAPHRAGM)
        dc = mesh.facet_cells[dia, 0]
        v, g, w, t = self._facet_traces(dia, dc)
        ndote = mesh.outward_normals(dia) @ np.asarray(self.physics.e_a, float)
        load = self.physics.rho0 * self.physics.a_d * ndote[:, None] * np.einsum("nq,nqi->ni", w, v)
        self.b = _vector(self.dofs[dc], load, n)

        lossy = np.flatnonzero(mesh.facet_lossy)
        # evaluate traces from an adjacent fixed-air cell (the trace and its
        # tangential derivative are continuous, so either side gives the same)
        fc = mesh.facet_cells[lossy]
        first_fixed = mesh.cell_region[fc[:, 0]] == Region.FIXED_AIR
        lc = np.where(first_fixed | (fc[:, 1] < 0), fc[:, 0], fc[:, 1])
        self.lossy_facets, self.lossy_cells = lossy, lc
        if len(lossy):
            v, g, w, t = self._facet_traces(lossy, lc)
            self.Wm_fixed, self.Wt_fixed = self._wall_matrices(lc, v, g, w, t)
        else:
            self.Wm_fixed = sp.csr_matrix((n, n))
            self.Wt_fixed = sp.csr_matrix((n, n))

    # -- geometry-dependent pieces ---------------------------------------------
    def uncut_geometry(self):
        """Geometry where every cell is air (for meshes without design cells)."""
        from .levelset import classify_and_cut
        phi = np.full(self.mesh.n_points, -1.0)
        return classify_and_cut(self.mesh, phi)

    def ghost_faces(self, cut: CutGeometry) -> np.ndarray:
        fc = self.mesh.facet_cells
        interior = fc[:, 1] >= 0
        st = np.where(fc >= 0, cut.state[np.maximum(fc, 0)], -1)
        both_active = interior & (st[:, 0] != CellState.OUTSIDE) & (st[:, 1] != CellState.OUTSIDE)
        any_cut = (st[:, 0] == CellState.CUT) | (st[:, 1] == CellState.CUT)
        return np.flatnonzero(both_active & any_cut)

    def ghost_matrix(self, faces: np.ndarray) -> sp.csr_matrix:
        mesh, n = self.mesh, self.ndof
        if len(faces) == 0:
            return sp.csr_matrix((n, n))
        c1, c2 = mesh.facet_cells[faces, 0], mesh.facet_cells[faces, 1]
        _, g1, w, t = self._facet_traces(faces, c1)
        _, g2, _, _ = self._facet_traces(faces, c2)
        nrm = np.column_stack([t[:, 1], -t[:, 0]])
        a1 = np.einsum("nqid,nd->nqi", g1, nrm)
        a2 = -np.einsum("nqid,nd->nqi", g2, nrm)
        # merge the three dofs shared by both cells so every dof appears once
        d1, d2 = self.dofs[c1], self.dofs[c2]
        match = d2[:, :, None] == d1[:, None, :]          # (n, 6, 6)
        own = ~match.any(axis=2)
        rows = np.arange(len(faces))
        extra = np.stack([np.flatnonzero(o) for o in own])   # (n, 3)
        a = np.concatenate([a1 + np.einsum("nqj,nji->nqi", a2, match.astype(float)),
                            a2[rows[:, None], :, extra].transpose(0, 2, 1)], axis=2)
        dofs = np.hstack([d1, d2[rows[:, None], extra]])
        h = np.maximum(mesh.cell_diameters[c1], mesh.cell_diameters[c2])
        elem = _mass_products(a, w * (h ** 3)[:, None])
        return _assemble(dofs, elem, n)

    def assemble(self, cut: CutGeometry) -> SystemParts:
        mesh, n = self.mesh, self.ndof
        design = mesh.cell_region == Region.DESIGN_REGION
        full = np.flatnonzero(design & (cut.state == CellState.INSIDE))
        K = self.K_fixed + _assemble(self.dofs[full], self.Ke[full], n)
        M = self.M_fixed + _assemble(self.dofs[full], self.Me[full], n)
        Wm, Wt = self.Wm_fixed, self.Wt_fixed
        if len(cut.cut_cells):
            tris, owner = cut.subtriangles()
            cells = cut.cut_cells[owner]
            x, w = fem.triangle_quadrature(tris)
            v, g = fem.eval_basis(mesh, np.repeat(cells, 6), x.reshape(-1, 2))
            v = v.reshape(len(tris), 6, 6)
            g = g.reshape(len(tris), 6, 6, 2)
            K = K + _assemble(self.dofs[cells], _grad_products(g, w), n)
            M = M + _assemble(self.dofs[cells], _mass_products(v, w), n)
            cc = cut.cut_cells
            v, g, w, t = self._facet_traces(None, cc, cut.facet_a, cut.facet_b)
            wm, wt = self._wall_matrices(cc, v, g, w, t)
            Wm, Wt = Wm + wm, Wt + wt
        faces = self.ghost_faces(cut)
        G = self.ghost_matrix(faces)
        active = np.zeros(n, dtype=bool)
        active[self.dofs[cut.active_cells].ravel()] = True
        if not active.any():
            raise ValueError("empty active set")
        return SystemParts(K.tocsr(), M.tocsr(), self.B_out, Wm.tocsr(), Wt.tocsr(), G,
                           self.b, self.r, active, faces, self.eps_s)

    # -- solves ----------------------------------------------------------------
    def solve(self, parts: SystemParts, k: float, frequency: float | None = None,
              losses: bool | None = None) -> StateSolution:
        coeffs = wentzell_coeffs(self.physics, k, losses)
        A = parts.matrix(coeffs)
        p, lu = solve_state(A, parts.rhs(), frequency)
        return StateSolution(k, p, A, lu, coeffs, frequency)

    def outlet_pressure(self, p: np.ndarray) -> complex:
        """Mean pressure over the outlet (exact for the quadratic trace)."""
        return complex(self.r @ p)


def power_terms(parts: SystemParts, sol: StateSolution, physics: PhysicsParams) -> dict:
    """Radiated, thermal and viscous wall powers and the input term."""
    p, c = sol.p, sol.coeffs
    pc = np.conj(p)
    out = c.k * float(np.real(pc @ (parts.B @ p)))
    thermal = c.alpha_T.imag * float(np.real(pc @ (parts.W_mass @ p)))
    viscous = c.alpha_V.imag * float(np.real(pc @ (parts.W_tan @ p)))
    inp = float(np.imag(pc @ parts.rhs()))
    return {"outlet": out, "thermal": thermal, "viscous": viscous, "input": inp}


def power_balance_residual(parts: SystemParts, sol: StateSolution, physics: PhysicsParams) -> float:
    t = power_terms(parts, sol, physics)
    return abs(t["outlet"] + t["thermal"] + t["viscous"] - t["input"]) / abs(t["input"])


@dataclass(frozen=True)
class FrequencyResponse:
    f: np.ndarray
    k: np.ndarray
    p_out: np.ndarray
    p_ideal: np.ndarray

    def __post_init__(self):
        if len(self.f) > 1 and np.any(np.diff(self.f) <= 0):
            raise ValueError("frequencies must be strictly increasing")


def geometric_frequencies(f_min: float, f_max: float, count: int) -> np.ndarray:
    """``count`` frequencies from ``f_min`` to ``f_max`` with a constant ratio."""
    if count < 1 or not (0 < f_min <= f_max):
        raise ValueError("need count >= 1 and 0 < f_min <= f_max")
    if count == 1:
        return np.array([float(f_min)])
    ratio = (f_max / f_min) ** (1.0 / (count - 1))
    return f_min * ratio ** np.arange(count)


def frequency_sweep(assembler: HelmholtzAssembler, parts: SystemParts, frequencies,
                    lumped_params=None, losses: bool | None = None) -> FrequencyResponse:
    """One direct solve per frequency; the lumped ideal target rides along."""
    from .lumped import ideal_outlet_target
    f = np.asarray(frequencies, dtype=float)
    if np.any(~(f > 0)):
        raise ValueError("frequencies must be positive")
    ks = assembler.physics.wavenumber(f)
    pout = np.empty(len(f), dtype=complex)
    for i, (fi, k) in enumerate(zip(f, ks)):
        sol = assembler.solve(parts, k, fi, losses)
        pout[i] = assembler.outlet_pressure(sol.p)
    ideal = (ideal_outlet_target(lumped_params, ks) if lumped_params is not None
             else np.full(len(f), np.nan + 0j))
    return FrequencyResponse(f, ks, pout, np.asarray(ideal, dtype=complex))


class CondensedSolver:
    """Static condensation of the design-independent far field.

    Degrees of freedom are split into ``R`` (those of design cells and of
    fixed cells sharing a facet with them) and the rest ``F``.  Entries
    coupling to ``F`` never depend on the level set, so per wavenumber the
    Schur complement data ``C = A_RF A_FF^-1 A_FR``, ``A_RF A_FF^-1 b_F`` and
    ``A_RF A_FF^-1 r_F`` are computed once.  Each geometry then needs only a
    sparse solve on the active part of ``R``; the outlet mean and the adjoint
    restricted to ``R`` are exact.
    """

    def __init__(self, assembler: HelmholtzAssembler, wavenumbers, losses: bool | None = None,
                 frequencies=None):
        self.assembler = assembler
        self.losses = assembler.physics.losses if losses is None else losses
        mesh = assembler.mesh
        design = mesh.cell_region == Region.DESIGN_REGION
        near = design.copy()
        fc = mesh.facet_cells
        interior = fc[:, 1] >= 0
        for s in (0, 1):
            sel = interior & design[fc[:, s]]
            near[fc[sel, 1 - s]] = True
        in_r = np.zeros(assembler.ndof, dtype=bool)
        in_r[assembler.dofs[near].ravel()] = True
        self.R = np.flatnonzero(in_r)
        self.F = np.flatnonzero(~in_r)
        self.position = np.full(assembler.ndof, -1)
        self.position[self.R] = np.arange(len(self.R))
        self.wavenumbers = np.atleast_1d(np.asarray(wavenumbers, dtype=float))
        self.frequencies = (np.full(len(self.wavenumbers), None) if frequencies is None
                            else np.asarray(frequencies, dtype=float))
        self._precompute()

    def _precompute(self):
        a = self.assembler
        base = a.assemble(a.uncut_geometry()) if not np.any(a.mesh.cell_region == Region.DESIGN_REGION) \
            else self._all_air_parts()
        F, R = self.F, self.R
        self.r_R = a.r[R].astype(complex)
        self.b_R = a.b[R].astype(complex)
        self.C, self.g_b, self.g_r, self.j0 = [], [], [], []
        self.I = None
        for k, f in zip(self.wavenumbers, self.frequencies):
            coeffs = wentzell_coeffs(a.physics, k, self.losses)
            A = base.matrix(coeffs)
            A_F = A[F]
            A_FF = A_F[:, F]
            A_FR = A_F[:, R]
            if self.I is None:
                self.I = np.unique(A_FR.nonzero()[1])
            lu = factorize(A_FF, f)
            X = lu.solve(A_FR[:, self.I].toarray())
            A_IF = A_FR[:, self.I].T
            y_b = lu.solve(a.b[F].astype(complex))
            y_r = lu.solve(a.r[F].astype(complex))
            self.C.append(np.asarray(A_IF @ X))
            self.g_b.append(A_IF @ y_b)
            self.g_r.append(A_IF @ y_r)
            self.j0.append(complex(a.r[F] @ y_b))

    def _all_air_parts(self) -> SystemParts:
        from .levelset import classify_and_cut
        phi = np.full(self.assembler.mesh.n_points, -1.0)
        return self.assembler.assemble(classify_and_cut(self.assembler.mesh, phi))

    def solve(self, parts: SystemParts, index: int, adjoint: bool = True):
        """Outlet mean, state and (optionally) adjoint on ``R`` for wavenumber ``index``.

        Returns ``(j, p, z, coeffs)`` with ``p`` and ``z`` full-length vectors
        that are exact on ``R`` and zero on ``F``.
        """
        a = self.assembler
        k = self.wavenumbers[index]
        f = self.frequencies[index]
        coeffs = wentzell_coeffs(a.physics, k, self.losses)
        A = parts.matrix(coeffs)
        R, I = self.R, self.I
        act = parts.active[R]
        ids = np.flatnonzero(act)
        A_RR = A[R][:, R]
        S = A_RR[ids][:, ids]
        # dense interface correction; interface dofs are always active
        pos = np.full(len(R), -1)
        pos[ids] = np.arange(len(ids))
        ii = pos[I]
        Cs = sp.coo_matrix(self.C[index])
        S = (S - sp.csr_matrix((Cs.data, (ii[Cs.row], ii[Cs.col])), shape=S.shape)).tocsc()
        rhs = self.b_R.copy()
        rhs[I] -= self.g_b[index]
        rt = self.r_R.copy()
        rt[I] -= self.g_r[index]
        lu = factorize(S, f)
        pr = lu.solve(rhs[ids])
        res = np.linalg.norm(S @ pr - rhs[ids]) / max(np.linalg.norm(rhs[ids]), 1e-300)
        if not np.all(np.isfinite(pr)) or res > 1e-10:
            raise SolverError(f"ill-conditioned reduced system, relative residual {res:.3e}", f)
        j = self.j0[index] + complex(rt[ids] @ pr)
        p = np.zeros(a.ndof, dtype=complex)
        p[R[ids]] = pr
        z = None
        if adjoint:
            z = np.zeros(a.ndof, dtype=complex)
            z[R[ids]] = lu.solve(rt[ids])
        return j, p, z, coeffs
