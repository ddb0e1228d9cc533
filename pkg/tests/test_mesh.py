import math

import numpy as np
import pytest
import shapely.geometry as sg

from stokes_lab.mesh import (
    Mesh,
    PointOutsideDomain,
    build_structured_mesh,
    interior_edge_count,
    locate_point,
    mesh_hierarchy,
    read_mesh,
    refine_uniform,
    shape_metrics,
    star,
    th_mesh_ok,
    write_mesh,
)


def _polys(mesh):
    return [sg.Polygon(p) for p in mesh.cell_coords]


def _brute_star(mesh, cell):
    # closed triangles intersect iff they share a vertex on a conforming mesh; use shapely as oracle
    polys = _polys(mesh)
    return {k for k, p in enumerate(polys) if p.intersects(polys[cell])}


def _assert_conforming(mesh):
    polys = _polys(mesh)
    for a in range(len(polys)):
        for b in range(a + 1, len(polys)):
            inter = polys[a].intersection(polys[b])
            if inter.is_empty:
                continue
            assert inter.area < 1e-14
            shared = set(mesh.cells[a]) & set(mesh.cells[b])
            if inter.geom_type == "Point":
                assert len(shared) == 1
            else:
                assert inter.geom_type == "LineString" and len(shared) == 2


def test_right_n1_counts():
    m = build_structured_mesh("right", 1)
    assert (m.n_cells, m.n_vertices) == (2, 4)
    assert m.h == pytest.approx(math.sqrt(2))


def test_criss_cross_n1_counts():
    m = build_structured_mesh("criss-cross", 1)
    assert (m.n_cells, m.n_vertices) == (4, 5)


@pytest.mark.parametrize("pattern,factor", [("right", 2), ("criss-cross", 4)])
@pytest.mark.parametrize("n", [1, 2, 5])
def test_cell_counts_and_area(pattern, n, factor):
    m = build_structured_mesh(pattern, n, (0.0, 2.0, -1.0, 0.5))
    assert m.n_cells == factor * n * n
    assert m.total_area == pytest.approx(3.0, rel=1e-12)
    assert np.all(m.signed_areas > 0)


def test_criss_cross_n4_interior_edges():
    m = build_structured_mesh("criss-cross", 4)
    assert m.n_cells == 64
    assert all(interior_edge_count(m, c) >= 2 for c in range(m.n_cells))
    assert th_mesh_ok(m)


def test_right_corner_cell_has_one_interior_edge():
    for n in (1, 3, 4):
        m = build_structured_mesh("right", n)
        # lower triangle of the square at (1, 0)
        corner = locate_point(m, (1 - 0.1 / n, 0.05 / n))
        assert interior_edge_count(m, corner) == 1
        assert not th_mesh_ok(m)


def test_fully_interior_cell_three_interior_edges():
    m = build_structured_mesh("criss-cross", 4)
    c = locate_point(m, (0.4, 0.45))
    assert interior_edge_count(m, c) == 3


def test_bad_input_rejected():
    with pytest.raises(ValueError):
        build_structured_mesh("right", 0)
    with pytest.raises(ValueError):
        build_structured_mesh("right", 2, (0.0, 0.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        build_structured_mesh("hexagonal", 2)


def test_refine_halves_h_and_nests():
    m = build_structured_mesh("right", 1)
    r = refine_uniform(m)
    assert r.n_cells == 8
    assert r.h == pytest.approx(math.sqrt(2) / 2)
    np.testing.assert_allclose(r.cell_diameters, np.repeat(m.cell_diameters, 4) / 2, rtol=1e-14)
    assert np.array_equal(r.vertices[: m.n_vertices], m.vertices)
    assert r.total_area == pytest.approx(m.total_area, rel=1e-12)


def test_refined_criss_cross_vertex_set():
    r = refine_uniform(build_structured_mesh("criss-cross", 1))
    c2 = build_structured_mesh("criss-cross", 2)
    key = lambda v: {tuple(np.round(p, 12)) for p in v}  # noqa: E731
    assert key(c2.vertices) <= key(r.vertices)
    # the extra refined vertices are centres of the n=2 subsquares' half-diagonals
    assert len(key(r.vertices)) == 13 and len(key(c2.vertices)) == 13


@pytest.mark.parametrize("pattern", ["right", "criss-cross"])
def test_conformity_after_refinement(pattern):
    for m in mesh_hierarchy(pattern, 2, 3):
        _assert_conforming(m)
        loop = m.boundary_loop()
        ring = sg.Polygon(m.vertices[loop])
        assert ring.area == pytest.approx(m.total_area, rel=1e-12)


def test_star_matches_brute_force():
    m = build_structured_mesh("right", 4)
    c = locate_point(m, (0.4, 0.3))
    assert len(star(m, c)) == 13
    for cell in range(m.n_cells):
        assert set(star(m, cell).members) == _brute_star(m, cell)


def test_star_corner_n1_and_symmetry():
    m = build_structured_mesh("right", 1)
    assert star(m, 0).members == frozenset({0, 1})
    m = build_structured_mesh("criss-cross", 3)
    for a in range(m.n_cells):
        for b in star(m, a).members:
            assert a in star(m, b).members
            assert a in star(m, a).members


def test_star_size_constant_across_levels():
    sizes = []
    for n in (4, 8, 16):
        m = build_structured_mesh("right", n)
        sizes.append(len(star(m, locate_point(m, (0.5 + 0.3 / n, 0.5 + 0.1 / n)))))
    assert len(set(sizes)) == 1


def test_star_out_of_range():
    m = build_structured_mesh("right", 1)
    with pytest.raises(IndexError):
        star(m, 2)


def test_locate_point_examples():
    m = build_structured_mesh("criss-cross", 1)
    assert locate_point(m, (0.5, 0.5)) == 0
    r = build_structured_mesh("right", 1)
    lower = locate_point(r, (0.1, 0.05))
    assert r.cells[lower].tolist() == [0, 1, 3]
    with pytest.raises(PointOutsideDomain):
        locate_point(r, (1.5, 0.0))


def test_locate_points_vectorised_agrees():
    m = build_structured_mesh("criss-cross", 4)
    rng = np.random.default_rng(0)
    pts = np.concatenate([rng.random((50, 2)), m.vertices[:20]])
    got = m.locate_points(pts)
    want = [locate_point(m, p) for p in pts]
    assert got.tolist() == want


def test_shape_metrics():
    for n in (1, 2, 4):
        ratio_h, ratio_r = shape_metrics(build_structured_mesh("right", n))
        assert ratio_h == 1.0
        assert ratio_r == pytest.approx(math.sqrt(2) * (2 + math.sqrt(2)), rel=1e-12)
    base = shape_metrics(build_structured_mesh("criss-cross", 2))
    for m in mesh_hierarchy("criss-cross", 2, 3)[1:]:
        assert shape_metrics(m) == pytest.approx(base, rel=1e-12)


def test_mesh_roundtrip(tmp_path):
    m = build_structured_mesh("criss-cross", 3)
    write_mesh(m, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.cells, m.cells)
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == f"d=2 nv={m.n_vertices} nc={m.n_cells}"


def test_rejects_clockwise_cells():
    with pytest.raises(ValueError):
        Mesh(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([[0, 1, 2]]))


def test_ancestor_map():
    ms = mesh_hierarchy("right", 1, 3)
    anc = ms[2].ancestor_map(ms[0])
    cent = ms[2].centroids
    lam = ms[0].barycentric(anc, cent)
    assert np.all(lam > 0)
