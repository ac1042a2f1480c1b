"""Adjoint-based shape derivative of the outlet pressure.

For ``j = r . p`` with ``A p = b``, the derivative in the direction of a
level-set perturbation ``phi + t w_l`` is ``-z^T (dA/dt) p`` where
``A^T z = r``.  Only the cut boundary moves, so ``dA/dt`` reduces to
integrals over the boundary facets plus point terms where the boundary
crosses mesh edges.  Every integrand is a polynomial on a straight facet, so
3-point Gauss quadrature makes the result exact for the discrete functional.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from . import fem
from .helmholtz import HelmholtzAssembler, StateSolution, WentzellCoeffs, psi
from .levelset import CutGeometry, LevelSetProblem


def solve_adjoint(sol: StateSolution, r: np.ndarray) -> np.ndarray:
    """Adjoint state for the outlet-mean functional, reusing the state LU."""
    r = np.asarray(r, dtype=complex)
    if not np.any(r):
        return np.zeros_like(r)
    return sol.adjoint(r)


def _fields(assembler: HelmholtzAssembler, cells, x, p, z):
    """Values and gradients of ``p`` and ``z`` at points ``x[n, q]`` of ``cells[n]``."""
    n, nq = x.shape[:2]
    v, g = fem.eval_basis(assembler.mesh, np.repeat(cells, nq), x.reshape(-1, 2))
    v = v.reshape(n, nq, 6)
    g = g.reshape(n, nq, 6, 2)
    pd = p[assembler.dofs[cells]]
    zd = z[assembler.dofs[cells]]
    return (np.einsum("nqi,ni->nq", v, pd), np.einsum("nqid,ni->nqd", g, pd),
            np.einsum("nqi,ni->nq", v, zd), np.einsum("nqid,ni->nqd", g, zd))


def dj_terms(assembler: HelmholtzAssembler, cut: CutGeometry, coeffs: WentzellCoeffs,
             p: np.ndarray, z: np.ndarray) -> dict[str, np.ndarray]:
    """The four contributions to ``dj(phi; w_l)`` for every mesh vertex ``l``.

    ``volume``: motion of the air region; ``tangential``: rotation of the
    facet normal inside the tangential-gradient term; ``normal``: normal
    derivative of the wall integrand; ``corner``: change of facet length at
    the points where the boundary crosses mesh edges.
    """
    mesh = assembler.mesh
    npts = mesh.n_points
    out = {name: np.zeros(npts, dtype=complex)
           for name in ("volume", "tangential", "normal", "corner")}
    cc = cut.cut_cells
    if len(cc) == 0:
        return out
    k = coeffs.k
    aT, aV = coeffs.alpha_T, coeffs.alpha_V

    x, w = fem.segment_quadrature(cut.facet_a, cut.facet_b)       # (n, 3, 2), (n, 3)
    P, gP, Z, gZ = _fields(assembler, cc, x, p, z)
    lam = mesh.barycentric(np.repeat(cc, 3), x.reshape(-1, 2)).reshape(len(cc), 3, 3)
    glam = mesh.grad_lambda[cc]                                      # (n, 3, 2)
    hess = fem.p2_hessians(glam)                                     # (n, 6, 2, 2)
    Hp = np.einsum("nide,ni->nde", hess, p[assembler.dofs[cc]])
    Hz = np.einsum("nide,ni->nde", hess, z[assembler.dofs[cc]])
    nrm = cut.normal
    wq = w / cut.grad_norm[:, None]

    dnp = np.einsum("nqd,nd->nq", gP, nrm)
    dnz = np.einsum("nqd,nd->nq", gZ, nrm)
    vol = np.einsum("nqd,nqd->nq", gZ, gP) - k * k * Z * P
    nHn_p = np.einsum("nd,nde,ne->n", nrm, Hp, nrm)[:, None]
    nHn_z = np.einsum("nd,nde,ne->n", nrm, Hz, nrm)[:, None]
    d_grad = (np.einsum("nd,nde,nqe->nq", nrm, Hz, gP)
              + np.einsum("nqd,nde,ne->nq", gZ, Hp, nrm))
    dpsi = aT * (dnz * P + Z * dnp) + aV * (d_grad - nHn_z * dnp - dnz * nHn_p)

    # tangential part of grad w_l (constant per cell)
    ptw = glam - np.einsum("nid,nd->ni", glam, nrm)[:, :, None] * nrm[:, None, :]
    tang = aV * (np.einsum("nid,nqd->nqi", ptw, gZ) * dnp[:, :, None]
                 + dnz[:, :, None] * np.einsum("nid,nqd->nqi", ptw, gP))

    verts = mesh.cells[cc]
    np.add.at(out["volume"], verts.ravel(), np.einsum("nq,nq,nqi->ni", wq, vol, lam).ravel())
    np.add.at(out["normal"], verts.ravel(), np.einsum("nq,nq,nqi->ni", wq, dpsi, lam).ravel())
    np.add.at(out["tangential"], verts.ravel(), np.einsum("nq,nqi->ni", wq, tang).ravel())

    # point terms at edge crossings, one per incident boundary facet
    ev = mesh.facets[cut.edge_ids]
    for s in range(2):
        sel = np.flatnonzero(cut.edge_cut[:, s] >= 0)
        if len(sel) == 0:
            continue
        i = cut.edge_cut[sel, s]
        cells = cc[i]
        xp = cut.edge_point[sel][:, None, :]
        P1, gP1, Z1, gZ1 = _fields(assembler, cells, xp, p, z)
        val = psi(Z1[:, 0], P1[:, 0], gZ1[:, 0], gP1[:, 0], nrm[i], coeffs)
        val = val * np.einsum("nd,nd->n", cut.n_s[sel], cut.conormal[sel, s]) / cut.grad_edge[sel]
        t = cut.edge_t[sel]
        np.add.at(out["corner"], ev[sel, 0], (1 - t) * val)
        np.add.at(out["corner"], ev[sel, 1], t * val)
    return out


def assemble_dj(assembler, cut, coeffs, p, z) -> np.ndarray:
    """Complex shape derivative ``dj(phi; w_l)`` for every mesh vertex."""
    terms = dj_terms(assembler, cut, coeffs, p, z)
    return terms["volume"] + terms["tangential"] + terms["normal"] + terms["corner"]


def chain_to_design(levelset: LevelSetProblem, dj_vertex: np.ndarray) -> np.ndarray:
    """Pull a per-vertex derivative back to the design vector."""
    return levelset.chain(np.asarray(dj_vertex)[levelset.free])


class Objective(str, Enum):
    TRACK = "track"
    POWER = "power"


def objective_value(kind, p_out, p_ideal=None) -> float:
    p_out = np.asarray(p_out)
    kind = Objective(kind)
    if kind is Objective.TRACK:
        return 0.5 * float(np.sum(np.abs(p_out - np.asarray(p_ideal)) ** 2))
    mag = np.abs(p_out)
    if np.any(mag == 0):
        raise ZeroDivisionError("degenerate objective point: |p_out| = 0")
    return 0.5 * float(np.sum(mag ** -2.0))


def objective_gradient(kind, p_out, p_ideal, dj_design, tikhonov_eps: float = 0.0,
                       design=None, design0=None, mass=None) -> np.ndarray:
    """Real gradient of the objective from per-frequency chained derivatives.

    ``dj_design`` has shape ``(n_freq, n_design)``; ``mass`` is the design
    mass matrix weighting the Tikhonov term.
    """
    kind = Objective(kind)
    p_out = np.atleast_1d(np.asarray(p_out, dtype=complex))
    dj = np.atleast_2d(np.asarray(dj_design))
    if kind is Objective.TRACK:
        res = p_out - np.atleast_1d(np.asarray(p_ideal, dtype=complex))
        g = np.real(np.conj(res) @ dj)
    else:
        mag = np.abs(p_out)
        if np.any(mag == 0):
            raise ZeroDivisionError("degenerate objective point: |p_out| = 0")
        g = -np.real((np.conj(p_out) / mag ** 4) @ dj)
    if tikhonov_eps:
        diff = np.asarray(design) - np.asarray(design0)
        g = g + tikhonov_eps * (mass @ diff if mass is not None else diff)
    return g


def tikhonov_value(design, design0, mass=None) -> float:
    diff = np.asarray(design) - np.asarray(design0)
    return 0.5 * float(diff @ (mass @ diff if mass is not None else diff))
