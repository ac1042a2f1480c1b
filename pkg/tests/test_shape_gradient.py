import numpy as np
import pytest

from phaseplug import fem
from phaseplug.helmholtz import wentzell_coeffs
from phaseplug.levelset import classify_and_cut
from phaseplug.shape_gradient import (Objective, assemble_dj, dj_terms, objective_gradient,
                                      objective_value, solve_adjoint, tikhonov_value)


def _state(problem, f, losses=None):
    phi, cut = problem.geometry_for(problem.design0)
    parts = problem.assembler.assemble(cut)
    sol = problem.assembler.solve(parts, problem.physics.wavenumber(f), f, losses)
    z = solve_adjoint(sol, problem.assembler.r)
    return cut, sol, z


def test_lossless_terms_are_exactly_zero(problem):
    cut, sol, z = _state(problem, 7000.0, losses=False)
    terms = dj_terms(problem.assembler, cut, sol.coeffs, sol.p, z)
    for name in ("tangential", "normal", "corner"):
        assert np.all(terms[name] == 0), name
    assert np.abs(terms["volume"]).max() > 0


def test_losses_contribute(problem):
    cut, sol, z = _state(problem, 7000.0)
    terms = dj_terms(problem.assembler, cut, sol.coeffs, sol.p, z)
    assert np.abs(terms["corner"]).max() > 0
    assert np.abs(terms["normal"]).max() > 0


def test_adjoint_reciprocity(problem):
    # r.p = z.b for A^T z = r, A p = b
    cut, sol, z = _state(problem, 9000.0)
    parts = problem.assembler.assemble(cut)
    lhs = problem.assembler.r @ sol.p
    rhs = z @ parts.rhs()
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_collinear_cutpoints_cancel(problem, geom):
    mesh = problem.mesh
    a = problem.assembler
    x0, x1 = geom.x_design
    pts = mesh.points
    # straight boundary inclined across the design region
    phi = 0.31 * (pts[:, 0] - x0) + (pts[:, 1] - 6.123e-3)
    cut = classify_and_cut(mesh, phi)
    xy = fem.p2_dof_coordinates(mesh)
    p = (1 + 300 * xy[:, 0] - 200 * xy[:, 1] + 4e4 * xy[:, 0] * xy[:, 1]).astype(complex)
    z = (2 - 100 * xy[:, 0] + 2e4 * xy[:, 1] ** 2).astype(complex) * (1 + 0.5j)
    coeffs = wentzell_coeffs(problem.physics, problem.physics.wavenumber(8000.0))
    corner = dj_terms(a, cut, coeffs, p, z)["corner"]
    lone = cut.edge_cut[:, 1] < 0
    touched = np.unique(mesh.facets[cut.edge_ids[lone]])
    rest = np.setdiff1d(np.unique(mesh.facets[cut.edge_ids]), touched)
    assert len(rest) > 10
    scale = np.abs(corner[touched]).max()
    assert scale > 0
    assert np.abs(corner[rest]).max() < 1e-12 * scale


def test_frequency_additivity(problem):
    rng = np.random.default_rng(3)
    cut, s1, z1 = _state(problem, 5000.0)
    _, s2, z2 = _state(problem, 11000.0)
    a = problem.assembler
    dj = np.array([assemble_dj(a, cut, s1.coeffs, s1.p, z1)[problem.levelset.free],
                   assemble_dj(a, cut, s2.coeffs, s2.p, z2)[problem.levelset.free]])
    pout = np.array([a.outlet_pressure(s1.p), a.outlet_pressure(s2.p)])
    ideal = pout + rng.standard_normal(2) * 0.01
    g = objective_gradient("track", pout, ideal, dj)
    parts = sum(objective_gradient("track", pout[i:i + 1], ideal[i:i + 1], dj[i:i + 1])
                for i in range(2))
    assert np.max(np.abs(g - parts)) <= 1e-12 * np.max(np.abs(g))


def test_objective_trivia():
    assert objective_value("power", [2.0]) == pytest.approx(1 / 8)
    assert objective_value(Objective.TRACK, [1 + 1j], [1 + 1j]) == 0
    with pytest.raises(ZeroDivisionError):
        objective_value("power", [0.0, 1.0])
    with pytest.raises(ZeroDivisionError):
        objective_gradient("power", [0.0], None, np.ones((1, 2)))


def test_track_gradient_orthogonal_residual():
    g = objective_gradient("track", [2.0 + 0j], [1.0 + 0j], np.array([[1j, 1.0]]))
    assert g[0] == 0 and g[1] == 1.0


def test_zero_residual_leaves_tikhonov_only():
    mass = np.diag([1.0, 2.0])
    d, d0 = np.array([1.0, 1.0]), np.array([0.0, 0.5])
    g = objective_gradient("track", [1j], [1j], np.ones((1, 2)), 0.3, d, d0, mass)
    np.testing.assert_allclose(g, 0.3 * mass @ (d - d0))
    assert tikhonov_value(d0, d0, mass) == 0


def test_power_gradient_formula():
    p = np.array([0.5 + 0.2j])
    dj = np.array([[1.0 + 2.0j]])
    g = objective_gradient("power", p, None, dj)
    t = 1e-7
    fd = (objective_value("power", p + t * dj[0]) - objective_value("power", p - t * dj[0])) / (2 * t)
    assert g[0] == pytest.approx(fd, rel=1e-7)
