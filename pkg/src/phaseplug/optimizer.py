"""Objective evaluation over a frequency grid and a dense BFGS driver."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .helmholtz import (CondensedSolver, FrequencyResponse, HelmholtzAssembler,
                        PhysicsParams, geometric_frequencies)
from .levelset import (LevelSetProblem, ZeroVertexWarning, baseline_levelset,
                       classify_and_cut, straight_channel_walls)
from .lumped import LumpedParams, ideal_outlet_target
from .mesh import GeometryParams, Mesh, build_benchmark_mesh
from .shape_gradient import (Objective, assemble_dj, objective_value,
                             tikhonov_value)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: Objective = Objective.TRACK
    tikhonov_eps: float = 0.0
    f_min: float = 3750.0
    f_max: float = 15000.0
    count: int = 35

    def __post_init__(self):
        object.__setattr__(self, "kind", Objective(self.kind))
        if self.count < 1:
            raise ValueError("frequency count must be at least 1")
        if not (0 < self.f_min <= self.f_max):
            raise ValueError("need 0 < f_min <= f_max")
        if self.tikhonov_eps < 0:
            raise ValueError("tikhonov_eps must be non-negative")

    @property
    def ratio(self) -> float:
        return 1.0 if self.count == 1 else (self.f_max / self.f_min) ** (1 / (self.count - 1))

    def frequencies(self) -> np.ndarray:
        return geometric_frequencies(self.f_min, self.f_max, self.count)


@dataclass
class Evaluation:
    J: float
    grad: np.ndarray | None
    response: FrequencyResponse
    n_perturbed: int = 0


class PhasePlugProblem:
    """The composition design -> level set -> cut -> acoustic solves -> objective.

    ``solver="condensed"`` precomputes the far-field Schur complement for
    the objective frequencies; ``"direct"`` factorizes the full system.
    """

    def __init__(self, geometry: GeometryParams | None = None, physics: PhysicsParams | None = None,
                 spec: ObjectiveSpec | None = None, h: float = 0.45e-3, eps_s: float = 1e-2,
                 solver: str = "condensed", mesh: Mesh | None = None, wall_offset: float = 0.25):
        self.geometry = geometry or GeometryParams()
        self.physics = physics or PhysicsParams()
        self.spec = spec or ObjectiveSpec()
        self.h = h
        self.mesh = mesh if mesh is not None else build_benchmark_mesh(self.geometry, h)
        spacing = h / math.sqrt(2.0)
        self.walls = straight_channel_walls(self.geometry, spacing, wall_offset)
        self.phi_baseline = baseline_levelset(self.mesh, self.walls)
        self.levelset = LevelSetProblem(self.mesh, self.phi_baseline[self.mesh.dirichlet_vertices()])
        if np.any(self.levelset.dirichlet_values <= 0):
            raise ValueError("Dirichlet level-set data must be positive (solid) on the chamber interface")
        self.design0 = self.levelset.design_for(self.phi_baseline)
        self.assembler = HelmholtzAssembler(self.mesh, self.physics, eps_s)
        g = self.geometry
        self.lumped = LumpedParams(d=g.chamber_depth, kappa=g.compression_ratio,
                                   rho0=self.physics.rho0, c0=self.physics.c0,
                                   a_d=self.physics.a_d, L=g.diaphragm_to_outlet)
        self.frequencies = self.spec.frequencies()
        self.wavenumbers = self.physics.wavenumber(self.frequencies)
        self.p_ideal = np.asarray(ideal_outlet_target(self.lumped, self.wavenumbers), dtype=complex)
        if solver not in ("condensed", "direct"):
            raise ValueError(f"unknown solver {solver!r}")
        self.solver = solver
        self._condensed = None
        self.n_evals = 0

    @property
    def n_design(self) -> int:
        return self.levelset.n_design

    @property
    def condensed(self) -> CondensedSolver:
        if self._condensed is None:
            self._condensed = CondensedSolver(self.assembler, self.wavenumbers,
                                              frequencies=self.frequencies)
        return self._condensed

    def geometry_for(self, design):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ZeroVertexWarning)
            phi = self.levelset.solve(design)
            cut = classify_and_cut(self.mesh, phi)
        if caught:
            log.warning("level set touched mesh nodes; %d value(s) perturbed", len(cut.perturbed))
        return phi, cut

    def solve_frequency(self, parts, index: int, adjoint: bool):
        """Outlet mean, state, adjoint and coefficients at one objective frequency."""
        if self.solver == "condensed":
            return self.condensed.solve(parts, index, adjoint)
        a = self.assembler
        sol = a.solve(parts, self.wavenumbers[index], self.frequencies[index])
        z = sol.adjoint(a.r) if adjoint else None
        return a.outlet_pressure(sol.p), sol.p, z, sol.coeffs

    def per_frequency(self, design, adjoint: bool = True):
        """Outlet pressures and per-vertex complex derivatives for every frequency."""
        phi, cut = self.geometry_for(design)
        parts = self.assembler.assemble(cut)
        pout = np.empty(len(self.frequencies), dtype=complex)
        dj = [] if adjoint else None
        for i in range(len(self.frequencies)):
            j, p, z, coeffs = self.solve_frequency(parts, i, adjoint)
            pout[i] = j
            if adjoint:
                dj.append(assemble_dj(self.assembler, cut, coeffs, p, z)[self.levelset.free])
        return pout, (np.array(dj) if adjoint else None), cut

    def evaluate(self, design, gradient: bool = True) -> Evaluation:
        design = np.asarray(design, dtype=float)
        if design.shape != (self.n_design,):
            raise ValueError(f"design vector must have length {self.n_design}")
        self.n_evals += 1
        pout, dj, cut = self.per_frequency(design, gradient)
        response = FrequencyResponse(self.frequencies, self.wavenumbers, pout, self.p_ideal)
        kind, eps = self.spec.kind, self.spec.tikhonov_eps
        J = objective_value(kind, pout, self.p_ideal)
        M = self.levelset.M_ff
        if eps:
            J += eps * tikhonov_value(design, self.design0, M)
        g = None
        if gradient:
            if kind is Objective.TRACK:
                g_free = np.real(np.conj(pout - self.p_ideal) @ dj)
            else:
                g_free = -np.real((np.conj(pout) / np.abs(pout) ** 4) @ dj)
            g = self.levelset.chain(g_free)
            if eps:
                g = g + eps * (M @ (design - self.design0))
        return Evaluation(J, g, response, len(cut.perturbed))

    def response(self, design, frequencies, losses: bool | None = None) -> FrequencyResponse:
        """Direct frequency sweep of a design on an arbitrary grid."""
        from .helmholtz import frequency_sweep
        _, cut = self.geometry_for(design)
        parts = self.assembler.assemble(cut)
        return frequency_sweep(self.assembler, parts, frequencies, self.lumped, losses)


# ---------------------------------------------------------------------------
# BFGS


class Status(str, Enum):
    CONVERGED = "CONVERGED"
    MAX_ITERS = "MAX_ITERS"
    LINE_SEARCH_STALL = "LINE_SEARCH_STALL"


@dataclass
class IterationRecord:
    iteration: int
    J: float
    grad_inf_norm: float
    step: float
    extra: dict = field(default_factory=dict)


@dataclass
class BFGSResult:
    x: np.ndarray
    J: float
    grad: np.ndarray
    status: Status
    history: list[IterationRecord]
    skipped_updates: list[int]
    H: np.ndarray

    @property
    def n_iters(self) -> int:
        return len(self.history) - 1


def bfgs_minimize(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0, max_iters: int = 100,
                  grad_tol: float = 1e-8, c1: float = 1e-4, shrink: float = 0.5,
                  max_backtracks: int = 30, h0_scale: float = 1.0,
                  max_step: float | None = None, step_norm: Callable[[np.ndarray], float] | None = None,
                  metric: np.ndarray | None = None,
                  callback: Callable[[IterationRecord, np.ndarray], None] | None = None) -> BFGSResult:
    """Minimize ``fun`` (returning value and gradient) with dense inverse-Hessian BFGS.

    Backtracking line search from a unit step enforces the Armijo condition.
    Updates failing the curvature test ``s.y > 1e-12 |s||y|`` are skipped.
    The initial inverse Hessian is ``h0_scale * H0`` with ``H0`` the identity
    or the symmetric positive definite ``metric``; before the first accepted
    update it is rescaled to ``(s.y / y.H0 y) H0``.
    With ``max_step`` set, the trial step starts at
    ``min(1, max_step / step_norm(d))`` instead of 1 (``step_norm`` defaults
    to the max-norm), which keeps early quasi-Newton steps from jumping
    across the whole design space.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    x = np.array(x0, dtype=float)
    n = len(x)
    f, g = fun(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    H0 = np.eye(n) if metric is None else np.array(metric, dtype=float)
    if H0.shape != (n, n):
        raise ValueError("metric must be a square matrix matching x0")
    H = h0_scale * H0
    scaled = False
    history = [IterationRecord(0, float(f), float(np.max(np.abs(g))), 0.0)]
    if callback:
        callback(history[-1], x)
    skipped = []
    status = Status.MAX_ITERS
    for it in range(1, max_iters + 1):
        if np.max(np.abs(g)) < grad_tol:
            status = Status.CONVERGED
            break
        d = -H @ g
        slope = float(g @ d)
        if slope >= 0:
            log.info("iteration %d: not a descent direction, resetting H", it)
            H = h0_scale * H0
            d = -H @ g
            slope = float(g @ d)
        alpha = 1.0
        if max_step is not None:
            size = (step_norm or (lambda v: float(np.max(np.abs(v)))))(d)
            if size > max_step:
                alpha = max_step / size
        for _ in range(max_backtracks + 1):
            x_new = x + alpha * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * alpha * slope:
                break
            alpha *= shrink
        else:
            status = Status.LINE_SEARCH_STALL
            break
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = (sy / float(y @ (H0 @ y))) * H0
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H = (H - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                 + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s))
            H = 0.5 * (H + H.T)
        else:
            skipped.append(it)
            log.info("iteration %d: curvature condition failed, update skipped", it)
        x, f, g = x_new, f_new, g_new
        history.append(IterationRecord(it, float(f), float(np.max(np.abs(g))), alpha))
        if callback:
            callback(history[-1], x)
    else:
        if np.max(np.abs(g)) < grad_tol:
            status = Status.CONVERGED
    return BFGSResult(x, float(f), g, status, history, skipped, H)


def levelset_step_norm(problem: PhasePlugProblem) -> Callable[[np.ndarray], float]:
    """Largest level-set change (max over vertices) caused by a design step."""
    ls = problem.levelset
    return lambda d: float(np.max(np.abs(ls._K_lu.solve(ls.M_ff @ d))))


def design_metric(problem: PhasePlugProblem, kind: str) -> np.ndarray | None:
    if kind == "identity":
        return None
    ls = problem.levelset
    Minv = np.linalg.inv(ls.M_ff.toarray())
    if kind == "mass":
        return 0.5 * (Minv + Minv.T)
    if kind == "stiffness":
        H = Minv @ (ls.K_ff @ Minv)
        return 0.5 * (H + H.T)
    raise ValueError(f"unknown metric {kind!r}")


def optimize(problem: PhasePlugProblem, max_iters: int = 100, grad_tol: float = 1e-12,
             h0_frac: float = 0.1, max_step_frac: float | None = 0.5,
             metric: str = "identity", callback=None, on_eval=None) -> tuple[BFGSResult, Evaluation]:
    """BFGS on ``problem`` from its baseline design.

    Step sizes are measured by how far they move the level set, in units of
    the mesh spacing: the initial inverse Hessian is scaled so the first
    steepest-descent step moves it by ``h0_frac`` spacings, and trial steps
    are capped at ``max_step_frac`` spacings.  Returns the result and the
    initial evaluation.  ``on_eval(n, design, evaluation)`` sees every
    objective evaluation.  ``metric`` picks the initial inverse Hessian:
    ``"identity"``, ``"mass"`` (the inverse design mass matrix) or
    ``"stiffness"`` (``M^-1 K M^-1``, under which a steepest-descent step
    moves the level set by the inverse Laplacian of its nodal sensitivity).
    """
    spacing = problem.h / math.sqrt(2.0)
    norm = levelset_step_norm(problem)
    cache: dict = {}

    def fun(x):
        key = x.tobytes()
        if key not in cache:
            ev = problem.evaluate(x)
            if on_eval:
                on_eval(problem.n_evals, x, ev)
            cache.clear()
            cache[key] = ev
        ev = cache[key]
        return ev.J, ev.grad

    H0 = design_metric(problem, metric)
    x0 = problem.design0.copy()
    fun(x0)
    first = cache[x0.tobytes()]
    size = norm(first.grad if H0 is None else H0 @ first.grad)
    h0 = h0_frac * spacing / size if size > 0 else 1.0

    def record(rec, x):
        ev = cache.get(x.tobytes())
        if ev is not None:
            rec.extra["abs_pout"] = np.abs(ev.response.p_out)
        if callback:
            callback(rec, x)

    res = bfgs_minimize(fun, x0, max_iters=max_iters, grad_tol=grad_tol, h0_scale=h0,
                        max_step=None if max_step_frac is None else max_step_frac * spacing,
                        step_norm=norm, metric=H0, callback=record)
    return res, first
