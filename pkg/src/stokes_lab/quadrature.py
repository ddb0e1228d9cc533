"""Triangle quadrature.

Smooth integrands use a symmetric degree-6 rule or collapsed Gauss rules of
any degree.  Integrands singular at a point get geometrically graded rules.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import ceil, factorial

import numpy as np

#: reference triangle (0,0), (1,0), (0,1)
REFERENCE_AREA = 0.5
DEFAULT_DEGREE = 6
DEFAULT_GRADING_LEVELS = 8


def barycentric_monomial_integral(a: int, b: int, c: int, area: float = REFERENCE_AREA) -> float:
    """Exact value of the integral of l1^a l2^b l3^c over a triangle of the given area."""
    return 2.0 * area * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)


@dataclass(frozen=True)
class Quadrature:
    """Rule on the reference triangle.

    ``bary`` holds barycentric points (n, 3); ``weights`` sum to the reference
    area 1/2.  A physical integral over T is ``2|T| * sum(w_i f(x_i))``.
    """

    bary: np.ndarray
    weights: np.ndarray
    degree: int
    name: str = ""

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, f, tri) -> float:
        """Integrate ``f(x)`` (vectorised over (n, 2) points) over triangle ``tri`` (3, 2)."""
        tri = np.asarray(tri, dtype=float)
        x = self.bary @ tri
        area = triangle_area(tri)
        return float(2.0 * area * np.dot(self.weights, f(x)))


def _perms(a, b, c):
    return sorted({(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)})


@lru_cache(maxsize=None)
def dunavant6() -> Quadrature:
    """12-point symmetric rule of degree 6 (Dunavant 1985)."""
    orbits = [
        (0.116786275726379, (0.501426509658179, 0.249286745170910, 0.249286745170910)),
        (0.050844906370207, (0.873821971016996, 0.063089014491502, 0.063089014491502)),
        (0.082851075618374, (0.053145049844817, 0.310352451033784, 0.636502499121399)),
    ]
    pts, wts = [], []
    for w, abc in orbits:
        for p in _perms(*abc):
            pts.append(p)
            wts.append(w)
    bary = np.array(pts)
    bary /= bary.sum(axis=1, keepdims=True)
    wts = np.array(wts)
    wts *= REFERENCE_AREA / wts.sum()
    return Quadrature(bary, wts, 6, "dunavant6")


@lru_cache(maxsize=None)
def collapsed_gauss(degree: int) -> Quadrature:
    """Conical product (Duffy) Gauss rule exact for polynomials of ``degree``."""
    n_x = max(1, ceil((degree + 2) / 2))
    n_y = max(1, ceil((degree + 1) / 2))
    gx, wx = np.polynomial.legendre.leggauss(n_x)
    gy, wy = np.polynomial.legendre.leggauss(n_y)
    xi, wxi = 0.5 * (gx + 1), 0.5 * wx
    eta, weta = 0.5 * (gy + 1), 0.5 * wy
    X, E = np.meshgrid(xi, eta, indexing="ij")
    W = np.outer(wxi * (1 - xi), weta)
    x = X.ravel()
    y = (E * (1 - X)).ravel()
    bary = np.stack([1 - x - y, x, y], axis=1)
    return Quadrature(bary, W.ravel(), degree, f"collapsed{degree}")


def rule_for_degree(degree: int) -> Quadrature:
    return dunavant6() if degree == 6 else collapsed_gauss(degree)


@lru_cache(maxsize=None)
def vertex_midpoint_rule() -> Quadrature:
    """Vertices (weight 0) and edge midpoints (weight |T|/3); exact on P2.

    Midpoint k is the midpoint of the edge opposite vertex k.
    """
    bary = np.array(
        [[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]], dtype=float
    )
    w = np.array([0, 0, 0, 1, 1, 1], dtype=float) * REFERENCE_AREA / 3
    return Quadrature(bary, w, 2, "vertex-midpoint")


# ---------------------------------------------------------------------------
# graded rules
# ---------------------------------------------------------------------------
@lru_cache(maxsize=None)
def _radial_rule(degree: int, levels: int):
    """Points and weights on [0, 1] for ``int_0^1 g(t) t dt`` with g ~ t^beta, beta > -2.

    Geometric panels [2^-(k+1), 2^-k] for k < levels, plus [0, 2^-levels]
    under the substitution t = c tau^4.  The quartic map turns t^(beta + 1)
    into tau^(4 beta + 7), which stays smooth enough for Gauss down to
    beta near -1.5.  Weights include the Jacobian t.
    """
    n_t = max(1, ceil((degree + 2) / 2))
    gt, wt = np.polynomial.legendre.leggauss(n_t)
    tau = 0.5 * (gt + 1)
    edges = [2.0 ** (-k) for k in range(levels, -1, -1)]
    c = edges[0]
    ts, tws = [c * tau**4], [2 * c * tau**3 * wt]
    for a, b in zip(edges[:-1], edges[1:]):
        ts.append(a + (b - a) * tau)
        tws.append(0.5 * (b - a) * wt)
    t = np.concatenate(ts)
    return t, np.concatenate(tws) * t


@lru_cache(maxsize=None)
def _edge_rule(degree: int, ratio_level: int):
    """Points and weights on [0, 1] graded geometrically toward u = 0 over ``ratio_level`` panels."""
    n_u = max(1, ceil((degree + 1) / 2)) + 1
    gu, wu = np.polynomial.legendre.leggauss(n_u)
    edges = [0.0] + [2.0 ** (-k) for k in range(ratio_level, -1, -1)]
    us, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        us.append(a + (b - a) * 0.5 * (gu + 1))
        ws.append(0.5 * (b - a) * wu)
    return np.concatenate(us), np.concatenate(ws)


def triangle_area(tri) -> float:
    tri = np.asarray(tri, dtype=float)
    return 0.5 * abs((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0]))


def _fan_triangle(s, a, b, degree: int, levels: int):
    """Collapsed rule on triangle (s, a, b) with apex s, graded in u toward ``a``.

    ``x = s + t ((1 - u)(a - s) + u (b - s))``.  For a radial power about s
    the integrand is ``t^beta |a - s + u (b - a)|^beta``; the u-panels are
    graded toward u = 0 down to ``|a - s| / |b - a|``, which resolves the
    near-singularity when ``a`` is the foot of the perpendicular from s.
    """
    t, wt = _radial_rule(degree, levels)
    ratio = np.linalg.norm(a - s) / max(np.linalg.norm(b - a), 1e-300)
    lvl = int(np.clip(np.ceil(-np.log2(max(ratio, 1e-300))), 0, 40))
    u, wu = _edge_rule(degree, lvl)
    T, U = np.meshgrid(t, u, indexing="ij")
    dirs = (1 - U.ravel())[:, None] * (a - s) + U.ravel()[:, None] * (b - s)
    area = triangle_area(np.stack([s, a, b]))
    return s + T.ravel()[:, None] * dirs, 2.0 * area * np.outer(wt, wu).ravel()


def _fan_rule(apex, poly, degree: int, levels: int, tol: float):
    """Graded rule on the fan of triangles (apex, poly[k], poly[k+1]).

    Each fan triangle is split at the foot of the perpendicular from the
    apex when that foot lies inside the edge, so both halves are graded
    toward their point closest to the apex.
    """
    xs, ws = [], []
    m = len(poly)
    for k in range(m):
        a, b = poly[k], poly[(k + 1) % m]
        if triangle_area(np.stack([apex, a, b])) <= tol:
            continue
        e = b - a
        r = float(np.dot(apex - a, e) / np.dot(e, e))
        if 0.0 < r < 1.0:
            f = a + r * e
            parts = [(f, a), (f, b)]
        else:
            parts = [(a, b)] if r <= 0.0 else [(b, a)]
        for near, far in parts:
            x, w = _fan_triangle(apex, near, far, degree, levels)
            xs.append(x)
            ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def graded_triangle_rule(tri, s, degree: int = DEFAULT_DEGREE, levels: int = DEFAULT_GRADING_LEVELS):
    """Physical points and weights on triangle ``tri`` graded toward ``s``.

    ``s`` must lie in the closed triangle.  The triangle is fanned into
    sub-triangles with apex ``s`` (see ``_fan_rule``); the counter-clockwise
    vertex order of ``tri`` is used.
    """
    tri = np.asarray(tri, dtype=float)
    s = np.asarray(s, dtype=float)
    if (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) < (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0]):
        tri = tri[::-1]
    return _fan_rule(s, tri, degree, levels, 1e-14 * triangle_area(tri))


def polygon_fan_rule(poly, s, degree: int = DEFAULT_DEGREE, levels: int = DEFAULT_GRADING_LEVELS):
    """Graded rule on a convex counter-clockwise polygon (m, 2) containing ``s``."""
    return _fan_rule(np.asarray(s, dtype=float), np.asarray(poly, dtype=float), degree, levels, 1e-15)


# ---------------------------------------------------------------------------
# mesh-wide rules
# ---------------------------------------------------------------------------
class MeshQuadrature:
    """Flattened quadrature over all cells of a mesh.

    Entries are sorted by cell, so per-cell sums use ``np.add.reduceat``.
    Cells whose closure contains one of ``singular_points`` get a graded rule
    toward the first such point.

    Attributes
    ----------
    cell : (ne,) owning cell of every entry
    bary : (ne, 3) barycentric coordinates inside the owning cell
    x : (ne, 2) physical points
    w : (ne,) physical weights
    offsets : (nc,) index of the first entry of every cell
    """

    def __init__(self, mesh, degree: int = DEFAULT_DEGREE, singular_points=(), levels: int = DEFAULT_GRADING_LEVELS,
                 cells=None):
        self.mesh = mesh
        self.degree = degree
        self.levels = levels
        rule = rule_for_degree(degree)
        all_cells = np.arange(mesh.n_cells) if cells is None else np.asarray(cells, dtype=np.int64)
        sing = np.asarray(singular_points, dtype=float).reshape(-1, 2)

        special: dict[int, np.ndarray] = {}
        for s in sing:
            lam = mesh.barycentric(all_cells, np.broadcast_to(s, (len(all_cells), 2)))
            for c in all_cells[np.all(lam >= -1e-12, axis=1)]:
                special.setdefault(int(c), s)
        self.singular_cells = np.array(sorted(special), dtype=np.int64)

        regular = np.setdiff1d(all_cells, self.singular_cells)
        nq = len(rule)
        cell_parts = [np.repeat(regular, nq)]
        bary_parts = [np.tile(rule.bary, (len(regular), 1))]
        w_parts = [np.outer(2.0 * mesh.areas[regular], rule.weights).ravel()]
        for c, s in special.items():
            x, w = graded_triangle_rule(mesh.cell_coords[c], s, degree, levels)
            cell_parts.append(np.full(len(w), c, dtype=np.int64))
            bary_parts.append(mesh.barycentric(np.full(len(w), c), x))
            w_parts.append(w)
        cell = np.concatenate(cell_parts)
        order = np.argsort(cell, kind="stable")
        self.cell = cell[order]
        self.bary = np.concatenate(bary_parts)[order]
        self.w = np.concatenate(w_parts)[order]
        self.x = mesh.to_physical(self.cell, self.bary)
        starts = np.ones(len(self.cell), dtype=bool)
        starts[1:] = self.cell[1:] != self.cell[:-1]
        self.offsets = np.flatnonzero(starts)
        self.cells = self.cell[self.offsets]

    def __len__(self) -> int:
        return len(self.w)

    def cell_sums(self, values: np.ndarray) -> np.ndarray:
        """Per-cell sums of ``w * values``; returns an array indexed like ``self.cells``."""
        v = np.asarray(values)
        wv = v * self.w.reshape((-1,) + (1,) * (v.ndim - 1))
        return np.add.reduceat(wv, self.offsets, axis=0)

    def cell_sums_full(self, values: np.ndarray) -> np.ndarray:
        """Like :meth:`cell_sums` but scattered into an array of length ``n_cells``."""
        part = self.cell_sums(values)
        out = np.zeros((self.mesh.n_cells,) + part.shape[1:])
        out[self.cells] = part
        return out

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.w, values))


_QCACHE: dict = {}


def mesh_quadrature(mesh, degree: int = DEFAULT_DEGREE, singular_points=(), levels: int = DEFAULT_GRADING_LEVELS) -> MeshQuadrature:
    """Cached :class:`MeshQuadrature` (meshes are immutable, keyed by identity)."""
    sing = tuple(map(tuple, np.asarray(singular_points, dtype=float).reshape(-1, 2).tolist()))
    key = (id(mesh), degree, sing, levels)
    hit = _QCACHE.get(key)
    if hit is not None and hit.mesh is mesh:
        return hit
    if len(_QCACHE) > 64:
        _QCACHE.clear()
    q = MeshQuadrature(mesh, degree, sing, levels)
    _QCACHE[key] = q
    return q
