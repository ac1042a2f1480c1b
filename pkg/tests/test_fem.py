import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phaseplug import fem
from phaseplug.mesh import build_duct_mesh

coef = st.floats(-3, 3, allow_nan=False)


def _monomial_integral(p, q):
    # integral of x^p y^q over the reference triangle (0,0),(1,0),(0,1)
    from math import factorial
    return factorial(p) * factorial(q) / factorial(p + q + 2)


@pytest.mark.parametrize("p,q", [(a, b) for a in range(5) for b in range(5) if a + b <= 4])
def test_triangle_rule_exact_to_degree_four(p, q):
    tri = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    x, w = fem.triangle_quadrature(tri)
    val = np.sum(w * x[..., 0] ** p * x[..., 1] ** q)
    assert val == pytest.approx(_monomial_integral(p, q), rel=1e-13, abs=1e-15)


@given(st.lists(coef, min_size=6, max_size=6))
def test_segment_rule_exact_to_degree_five(c):
    a = np.array([[0.3, -1.0]])
    b = np.array([[2.3, 0.5]])
    x, w = fem.segment_quadrature(a, b)
    # polynomial in arclength parameter s in [0, 1]
    s = (x[0, :, 0] - 0.3) / 2.0
    val = np.sum(w[0] * np.polyval(c, s))
    exact = 2.5 * np.polyval(np.polyint(c), 1.0)
    assert val == pytest.approx(exact, rel=1e-12, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1))
def test_p2_partition_of_unity(a, b):
    if a + b > 1:
        a, b = 1 - a, 1 - b
    lam = np.array([1 - a - b, a, b])
    glam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    assert fem.p2_values(lam).sum() == pytest.approx(1.0, abs=1e-14)
    assert np.abs(fem.p2_gradients(lam, glam).sum(axis=0)).max() < 1e-13


def test_p2_nodal_property():
    nodes = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1],
                      [0, .5, .5], [.5, 0, .5], [.5, .5, 0]], dtype=float)
    vals = np.array([fem.p2_values(l) for l in nodes])
    np.testing.assert_allclose(vals, np.eye(6), atol=1e-15)


def test_hessians_match_finite_differences():
    glam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    H = fem.p2_hessians(glam[None])[0]
    x0 = np.array([0.2, 0.3])
    eps = 1e-5

    def grad(x):
        lam = np.array([1 - x[0] - x[1], x[0], x[1]])
        return fem.p2_gradients(lam, glam)
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        fd = (grad(x0 + e) - grad(x0 - e)) / (2 * eps)
        np.testing.assert_allclose(fd, H[:, :, d], atol=1e-8)


def test_dofmap_counts_vertices_plus_edges():
    m = build_duct_mesh(0.004, 0.002, 1e-3)
    dofs, n = fem.p2_dofmap(m)
    assert n == m.n_points + m.n_facets
    assert dofs.shape == (m.n_cells, 6)
    assert set(np.unique(dofs)) == set(range(n))


def test_eval_basis_reproduces_quadratics():
    m = build_duct_mesh(0.004, 0.002, 1e-3)
    xy = fem.p2_dof_coordinates(m)
    dofs, _ = fem.p2_dofmap(m)
    u = xy[:, 0] ** 2 - 3 * xy[:, 0] * xy[:, 1] + xy[:, 1]
    cells = np.arange(m.n_cells)
    centroid = m.points[m.cells].mean(axis=1)
    v, g = fem.eval_basis(m, cells, centroid)
    val = np.einsum("ni,ni->n", v, u[dofs])
    x, y = centroid.T
    np.testing.assert_allclose(val, x ** 2 - 3 * x * y + y, atol=1e-15)
    grad = np.einsum("nid,ni->nd", g, u[dofs])
    np.testing.assert_allclose(grad, np.c_[2 * x - 3 * y, -3 * x + 1], atol=1e-12)


def test_symmetric_outer_is_symmetric(rng):
    a = rng.standard_normal((4, 6))
    out = fem.symmetric_outer(a)
    assert np.array_equal(out, np.transpose(out, (0, 2, 1)))
