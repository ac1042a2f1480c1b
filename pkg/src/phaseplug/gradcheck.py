"""Adjoint versus finite-difference comparison through the full design map.

The finite differences perturb one design component at a time and rerun
the whole pipeline (Poisson solve, cut, assembly, state solve), so they
exercise the level-set chain rule as well as the shape derivative.

Step policy: the step for component ``l`` is chosen so that the level set
moves by at most ``eta * spacing`` at any vertex, for each ``eta`` in
``ETAS``.  The reported difference quotient is the one whose neighbour in
the sweep agrees with it best, which avoids both truncation (large steps)
and round-off (small steps) without looking at the adjoint value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shape_gradient import Objective, assemble_dj, objective_gradient, objective_value

ETAS = (1e-5, 1e-6, 1e-7, 1e-8)


@dataclass
class GradCheck:
    components: np.ndarray
    adjoint: np.ndarray
    fd: np.ndarray
    rel_err: np.ndarray
    steps: np.ndarray

    @property
    def max_rel_err(self) -> float:
        return float(np.max(self.rel_err)) if len(self.rel_err) else 0.0

    def rows(self):
        return zip(self.components, self.adjoint, self.fd, self.rel_err)


def outlet_functional(problem, index: int, losses: bool | None = None):
    """``design -> p_out`` at one objective frequency, always via the full system."""
    a = problem.assembler
    k, f = problem.wavenumbers[index], problem.frequencies[index]

    def j(design):
        _, cut = problem.geometry_for(design)
        parts = a.assemble(cut)
        sol = a.solve(parts, k, f, losses)
        return a.outlet_pressure(sol.p), cut, sol
    return j


def design_derivative(problem, design, index: int, losses: bool | None = None) -> np.ndarray:
    """Complex adjoint derivative of ``p_out`` with respect to every design component."""
    j = outlet_functional(problem, index, losses)
    _, cut, sol = j(design)
    z = sol.adjoint(problem.assembler.r)
    dj = assemble_dj(problem.assembler, cut, sol.coeffs, sol.p, z)
    return problem.levelset.chain(dj[problem.levelset.free])


def pick_components(grad: np.ndarray, count: int, seed: int = 0, rel: float = 1e-3) -> np.ndarray:
    """Random components among those carrying a non-negligible share of the gradient."""
    mag = np.abs(grad)
    pool = np.flatnonzero(mag >= rel * mag.max()) if mag.max() > 0 else np.arange(len(grad))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(pool, size=min(count, len(pool)), replace=False))


def gradient_check(problem, design=None, index: int | None = None, count: int = 10,
                   seed: int = 0, losses: bool | None = None, etas=ETAS,
                   objective: Objective | str | None = None) -> GradCheck:
    """Compare adjoint and FD derivatives at objective frequency ``index``.

    Without ``objective`` the complex outlet mean ``p_out`` is checked;
    otherwise the real single-frequency objective of that kind.
    """
    design = problem.design0 if design is None else np.asarray(design, dtype=float)
    if index is None:
        index = len(problem.frequencies) // 2
    j_out = outlet_functional(problem, index, losses)
    grad = design_derivative(problem, design, index, losses)
    j = j_out
    if objective is not None:
        target = problem.p_ideal[index:index + 1]
        pout = j_out(design)[0]
        grad = objective_gradient(objective, [pout], target, grad[None, :])

        def j(x):
            return (objective_value(objective, [j_out(x)[0]], target),)
    comps = pick_components(grad, count, seed)
    ls = problem.levelset
    spacing = problem.h / np.sqrt(2.0)
    fd = np.empty(len(comps), dtype=grad.dtype)
    steps = np.empty(len(comps))
    for n, l in enumerate(comps):
        e = np.zeros(ls.n_design)
        e[l] = 1.0
        reach = np.max(np.abs(ls._K_lu.solve(ls.M_ff @ e)))
        quotients = []
        for eta in etas:
            t = eta * spacing / reach
            jp = j(design + t * e)[0]
            jm = j(design - t * e)[0]
            quotients.append(((jp - jm) / (2 * t), t))
        diffs = [abs(quotients[i][0] - quotients[i + 1][0]) for i in range(len(quotients) - 1)]
        best = int(np.argmin(diffs)) if diffs else 0
        fd[n], steps[n] = quotients[best]
    g_floor = 1e-12 * np.max(np.abs(grad))
    adj = grad[comps]
    rel = np.abs(adj - fd) / np.maximum(np.abs(fd), g_floor)
    return GradCheck(comps, adj, fd, rel, steps)
