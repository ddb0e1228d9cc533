import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokes_lab.fem_spaces import (
    ElementPair,
    bubble,
    bubble_cell_integral,
    eval_basis,
    make_space,
    p1_basis,
    p1_to_velocity,
    p2_basis,
)
from stokes_lab.mesh import build_structured_mesh, mesh_hierarchy
from stokes_lab.quadrature import collapsed_gauss

VERTS = np.eye(3)
MIDS = np.array([[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]])


def test_pair_parse():
    assert ElementPair.parse("th") is ElementPair.TAYLOR_HOOD
    assert ElementPair.parse("taylor-hood") is ElementPair.TAYLOR_HOOD
    assert ElementPair.parse("P2P1") is ElementPair.TAYLOR_HOOD
    assert ElementPair.parse(ElementPair.MINI) is ElementPair.MINI
    with pytest.raises(ValueError):
        ElementPair.parse("crouzeix")


def test_dof_counts_right_n1():
    m = build_structured_mesh("right", 1)
    mini, th = make_space(m, "mini"), make_space(m, "th")
    assert (mini.n_velocity, mini.n_pressure) == (12, 4)
    assert (th.n_velocity, th.n_pressure) == (18, 4)
    assert mini.scalar_boundary[:4].all() and not mini.scalar_boundary[4:].any()
    # 4 boundary edges, 1 interior diagonal
    assert th.scalar_boundary.sum() == 8


@pytest.mark.parametrize("pair", ["mini", "th"])
def test_dof_counts_general(pair):
    m = build_structured_mesh("criss-cross", 3)
    dm = make_space(m, pair)
    extra = m.n_cells if pair == "mini" else m.n_edges
    assert dm.n_velocity == 2 * (m.n_vertices + extra)
    assert dm.n_pressure == m.n_vertices
    assert len(dm.free_velocity) == dm.n_velocity - dm.velocity_boundary.sum()


def test_shared_dofs_agree():
    m = build_structured_mesh("criss-cross", 2)
    dm = make_space(m, "th")
    pts = dm.scalar_dof_points
    # every local P2 node maps to the global node at the same physical point
    for c in range(m.n_cells):
        local = np.concatenate([VERTS, MIDS]) @ m.cell_coords[c]
        np.testing.assert_allclose(pts[dm.cell_dofs[c]], local, atol=1e-14)


def test_lagrange_properties():
    v, _ = p1_basis(VERTS)
    np.testing.assert_allclose(v, np.eye(3), atol=1e-15)
    v, _ = p2_basis(np.concatenate([VERTS, MIDS]))
    np.testing.assert_allclose(v, np.eye(6), atol=1e-15)
    b, _ = bubble(np.array([[1 / 3, 1 / 3, 1 / 3]]))
    assert b[0] == pytest.approx(1.0)
    edge = np.array([[0.0, 0.3, 0.7], [0.2, 0.0, 0.8], [0.6, 0.4, 0.0]])
    assert np.all(bubble(edge)[0] == 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_partition_of_unity(a, b):
    if a + b > 1:
        a, b = 1 - a, 1 - b
    lam = np.array([[1 - a - b, a, b]])
    for basis in (p1_basis, p2_basis):
        v, d = basis(lam)
        assert v.sum() == pytest.approx(1.0, abs=1e-13)


def test_physical_gradients_match_finite_differences():
    m = build_structured_mesh("right", 2)
    cell = 3
    tri = m.cell_coords[cell]
    lam0 = np.array([0.2, 0.5, 0.3])
    _, g = eval_basis(m, "th", "velocity", cell, lam0)
    eps = 1e-6
    for d in range(2):
        x = lam0 @ tri
        e = np.zeros(2)
        e[d] = eps
        lp = m.barycentric(np.array([cell]), (x + e)[None])[0]
        lm = m.barycentric(np.array([cell]), (x - e)[None])[0]
        fd = (p2_basis(lp)[0] - p2_basis(lm)[0])[0] / (2 * eps)
        np.testing.assert_allclose(g[0, :, d], fd, atol=1e-7)


def test_bubble_gradient_integrates_to_zero():
    m = build_structured_mesh("criss-cross", 1)
    r = collapsed_gauss(6)
    for c in range(m.n_cells):
        _, g = eval_basis(m, "mini", "velocity", c, r.bary)
        integral = 2 * m.areas[c] * np.einsum("n,nd->d", r.weights, g[:, 3])
        np.testing.assert_allclose(integral, 0.0, atol=1e-15)


def test_eval_basis_rejects_bad_bary():
    m = build_structured_mesh("right", 1)
    with pytest.raises(ValueError):
        eval_basis(m, "th", "velocity", 0, [0.5, 0.6, -0.1])
    with pytest.raises(ValueError):
        eval_basis(m, "th", "velocity", 0, [0.5, 0.6, 0.1])
    with pytest.raises(ValueError):
        eval_basis(m, "th", "stress", 0, [1.0, 0.0, 0.0])


def test_bubble_cell_integral():
    assert bubble_cell_integral(0.5, normalized=False) == pytest.approx(1 / 120)
    assert bubble_cell_integral(0.5) == pytest.approx(27 / 120)
    assert bubble_cell_integral(0.3) == pytest.approx(27 * 0.3 / 60)
    # quarter area under red refinement
    ms = mesh_hierarchy("criss-cross", 1, 2)
    np.testing.assert_allclose(bubble_cell_integral(ms[1].areas), np.repeat(bubble_cell_integral(ms[0].areas), 4) / 4)


@pytest.mark.parametrize("pair", ["mini", "th"])
def test_p1_embedding_reproduces_linear_field(pair):
    m = build_structured_mesh("criss-cross", 2)
    dm = make_space(m, pair)
    vv = np.stack([1 + m.vertices[:, 0], 2 * m.vertices[:, 1] - m.vertices[:, 0]], axis=1)
    c = dm.split_velocity(p1_to_velocity(dm, vv))
    pts = dm.scalar_dof_points
    exact = np.stack([1 + pts[:, 0], 2 * pts[:, 1] - pts[:, 0]], axis=1)
    if pair == "mini":
        np.testing.assert_allclose(c[: m.n_vertices], exact[: m.n_vertices])
        assert np.all(c[m.n_vertices :] == 0)
    else:
        np.testing.assert_allclose(c, exact, atol=1e-14)


def test_split_join_roundtrip():
    dm = make_space(build_structured_mesh("right", 2), "th")
    x = np.arange(dm.n_velocity, dtype=float)
    assert np.array_equal(dm.join_velocity(dm.split_velocity(x)), x)
    assert dm.split_velocity(x)[1, 1] == dm.n_scalar + 1
