"""scikit-learn style wrapper around the optimization run.

``fit()`` takes no training data: the "model" being fitted is the design
vector.  ``predict(frequencies)`` returns the outlet pressure of the fitted
design on any frequency grid.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .helmholtz import PhysicsParams
from .mesh import GeometryParams
from .optimizer import ObjectiveSpec, PhasePlugProblem, optimize


class PhasePlugDesigner(BaseEstimator):
    """Shape optimizer with estimator semantics.

    Fitted attributes: ``design_``, ``history_``, ``status_``, ``J_``,
    ``J0_``, ``problem_``.
    """

    def __init__(self, geometry: GeometryParams | None = None, physics: PhysicsParams | None = None,
                 objective: str = "track", tikhonov_eps: float = 0.0, f_min: float = 3750.0,
                 f_max: float = 15000.0, n_frequencies: int = 35, h: float = 0.45e-3,
                 eps_s: float = 1e-2, max_iters: int = 100, grad_tol: float = 1e-12,
                 h0_frac: float = 0.1, max_step_frac: float | None = 0.5,
                 solver: str = "condensed"):
        self.geometry = geometry
        self.physics = physics
        self.objective = objective
        self.tikhonov_eps = tikhonov_eps
        self.f_min = f_min
        self.f_max = f_max
        self.n_frequencies = n_frequencies
        self.h = h
        self.eps_s = eps_s
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.h0_frac = h0_frac
        self.max_step_frac = max_step_frac
        self.solver = solver

    def _validate(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.eps_s < 0:
            raise ValueError("eps_s must be non-negative")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be non-negative")
        if not self.h0_frac > 0:
            raise ValueError("h0_frac must be positive")
        if self.max_step_frac is not None and not self.max_step_frac > 0:
            raise ValueError("max_step_frac must be positive or None")

    def build_problem(self) -> PhasePlugProblem:
        self._validate()
        spec = ObjectiveSpec(self.objective, self.tikhonov_eps, self.f_min, self.f_max,
                             int(self.n_frequencies))
        return PhasePlugProblem(self.geometry, self.physics, spec, h=self.h, eps_s=self.eps_s,
                                solver=self.solver)

    def fit(self, X=None, y=None, callback=None):
        problem = self.build_problem()
        res, first = optimize(problem, int(self.max_iters), self.grad_tol, self.h0_frac,
                              self.max_step_frac, callback=callback)
        self.problem_ = problem
        self.design_ = res.x
        self.history_ = res.history
        self.status_ = res.status
        self.J_ = res.J
        self.J0_ = first.J
        self.n_iter_ = res.n_iters
        return self

    def predict(self, X=None, losses: bool | None = None) -> np.ndarray:
        """Complex outlet pressure at frequencies ``X`` (Hz); objective grid if omitted."""
        check_is_fitted(self, "design_")
        f = self.problem_.frequencies if X is None else np.ravel(np.asarray(X, dtype=float))
        return self.problem_.response(self.design_, f, losses).p_out

    def score(self, X=None, y=None) -> float:
        """Relative reduction of the objective, ``1 - J / J0``."""
        check_is_fitted(self, "design_")
        return 1.0 - self.J_ / self.J0_
