import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokes_lab.mesh import build_structured_mesh
from stokes_lab.quadrature import (
    barycentric_monomial_integral,
    collapsed_gauss,
    dunavant6,
    graded_triangle_rule,
    mesh_quadrature,
    triangle_area,
    vertex_midpoint_rule,
)


def _exactness(rule, degree, tri=None):
    area = 0.5
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                got = 2 * area * np.dot(rule.weights, np.prod(rule.bary ** [a, b, c], axis=1))
                assert got == pytest.approx(barycentric_monomial_integral(a, b, c, area), abs=1e-13)


def test_monomial_formula_values():
    assert barycentric_monomial_integral(1, 1, 1, 0.5) == pytest.approx(1 / 120)
    assert barycentric_monomial_integral(2, 0, 0, 1.0) == pytest.approx(1 / 6)
    assert barycentric_monomial_integral(1, 1, 0, 1.0) == pytest.approx(1 / 12)


def test_dunavant6_exact_to_degree_6():
    r = dunavant6()
    assert len(r) == 12 and r.weights.sum() == pytest.approx(0.5, abs=1e-15)
    _exactness(r, 6)


@pytest.mark.parametrize("degree", [1, 2, 5, 8, 12])
def test_collapsed_gauss_exactness(degree):
    r = collapsed_gauss(degree)
    assert r.weights.sum() == pytest.approx(0.5, abs=1e-14)
    _exactness(r, degree)


def test_vertex_midpoint_rule():
    r = vertex_midpoint_rule()
    _exactness(r, 2)
    assert np.all(r.weights[:3] == 0) and np.all(r.weights[3:] > 0)
    # int lambda_1^2 = |T|/6, int lambda_1 lambda_2 = |T|/12, on |T| = 1/2
    assert 2 * 0.5 * np.dot(r.weights, r.bary[:, 0] ** 2) == pytest.approx(0.5 / 6)
    assert 2 * 0.5 * np.dot(r.weights, r.bary[:, 0] * r.bary[:, 1]) == pytest.approx(0.5 / 12)


def test_integrate_on_physical_triangle():
    tri = np.array([[0.2, 0.1], [1.3, 0.4], [0.5, 1.7]])
    r = collapsed_gauss(4)
    # exact integral of x over T is |T| times centroid x
    assert r.integrate(lambda x: x[:, 0], tri) == pytest.approx(triangle_area(tri) * tri[:, 0].mean(), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.05, 0.9), st.floats(0.05, 0.9),
    st.floats(-1.5, 2.0),  # strongly singular but integrable
)
def test_graded_rule_radial_power(l1, l2, beta):
    """Integral of |x - s|^beta over a triangle, graded vs an independent polar oracle."""
    if l1 + l2 >= 0.95:
        l1, l2 = l1 / 2, l2 / 2
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    s = (1 - l1 - l2) * tri[0] + l1 * tri[1] + l2 * tri[2]
    x, w = graded_triangle_rule(tri, s, degree=8, levels=14)
    got = np.dot(w, np.linalg.norm(x - s, axis=1) ** beta)
    # polar oracle: sum over the three sub-triangles of int_theta rho(theta)^(beta+2)/(beta+2)
    total = 0.0
    g, gw = np.polynomial.legendre.leggauss(2000)
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        th_a = np.arctan2(*(a - s)[::-1])
        th_b = np.arctan2(*(b - s)[::-1])
        dth = (th_b - th_a) % (2 * np.pi)
        if dth >= np.pi:  # s on this edge
            continue
        th = th_a + dth * (g + 1) / 2
        u = np.stack([np.cos(th), np.sin(th)], axis=1)
        n = np.array([(b - a)[1], -(b - a)[0]])
        rho = ((a - s) @ n) / (u @ n)
        total += np.sum(gw * dth / 2 * rho ** (beta + 2) / (beta + 2))
    assert got == pytest.approx(total, rel=1e-8 if beta >= -1 else 1e-6)


@pytest.mark.parametrize("s", [(0.0, 0.0), (0.5, 0.0), (0.5, 0.001)])
def test_graded_rule_singular_point_on_boundary(s):
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    x, w = graded_triangle_rule(tri, s, degree=6, levels=10)
    assert w.sum() == pytest.approx(0.5, rel=1e-13)
    assert np.all(w > 0)


def test_mesh_quadrature_area_and_grading():
    m = build_structured_mesh("criss-cross", 4)
    q = mesh_quadrature(m, 6)
    assert q.integrate(np.ones(len(q))) == pytest.approx(1.0, rel=1e-13)
    qs = mesh_quadrature(m, 6, [(0.5, 0.5)])
    # cells touching the grid vertex (0.5, 0.5): 8 in a criss-cross mesh
    assert len(qs.singular_cells) == 8
    np.testing.assert_allclose(qs.cell_sums_full(np.ones(len(qs))), m.areas, rtol=1e-13)
    assert mesh_quadrature(m, 6, [(0.5, 0.5)]) is qs
