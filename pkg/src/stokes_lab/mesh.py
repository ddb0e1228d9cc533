"""Conforming triangulations of axis-aligned rectangles.

Meshes are built from a structured lattice (``right`` diagonal or
``criss-cross``) and refined uniformly by red refinement, which keeps the
family nested and quasiuniform.  A :class:`Mesh` is immutable; every derived
quantity (edges, areas, barycentric gradients, ...) is computed lazily and
cached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

PATTERNS = ("right", "criss-cross")
_PATTERN_ALIASES = {
    "right": "right",
    "right-diagonal": "right",
    "criss-cross": "criss-cross",
    "crisscross": "criss-cross",
}


class PointOutsideDomain(ValueError):
    """Raised when a point does not lie in the closed mesh domain."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Star:
    """Patch of cells touching ``center_cell``."""

    center_cell: int
    members: frozenset[int]

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with counter-clockwise cells.

    Parameters
    ----------
    vertices : (nv, 2) array
    cells : (nc, 3) integer array of vertex indices
    domain : (x0, x1, y0, y1) of the rectangle covered, if known
    parent : for refined meshes, index of the parent cell of every cell
    """

    vertices: np.ndarray
    cells: np.ndarray
    domain: tuple[float, float, float, float] | None = None
    parent: np.ndarray | None = field(default=None, repr=False)
    coarse: "Mesh | None" = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        c = np.asarray(self.cells, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if c.ndim != 2 or c.shape[1] != 3:
            raise ValueError("cells must have shape (nc, 3)")
        if c.size and (c.min() < 0 or c.max() >= len(v)):
            raise ValueError("cell references an unknown vertex")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "cells", _frozen(c))
        if self.parent is not None:
            object.__setattr__(self, "parent", _frozen(np.asarray(self.parent, dtype=np.int64)))
        if np.any(self.signed_areas <= 0):
            raise ValueError("cells must have positive signed area")

    # -- sizes -------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    # -- geometry ----------------------------------------------------------
    @cached_property
    def cell_coords(self) -> np.ndarray:
        """(nc, 3, 2) vertex coordinates of every cell."""
        return _frozen(self.vertices[self.cells])

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return _frozen(0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]))

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        p = self.cell_coords
        lengths = np.stack(
            [np.linalg.norm(p[:, (k + 1) % 3] - p[:, (k + 2) % 3], axis=1) for k in range(3)],
            axis=1,
        )
        return _frozen(lengths.max(axis=1))

    @cached_property
    def h(self) -> float:
        return float(self.cell_diameters.max())

    @cached_property
    def inradii(self) -> np.ndarray:
        p = self.cell_coords
        perimeter = sum(np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3))
        return _frozen(2.0 * self.areas / perimeter)

    @cached_property
    def centroids(self) -> np.ndarray:
        return _frozen(self.cell_coords.mean(axis=1))

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """(nc, 3, 2) gradients of the barycentric coordinates of every cell."""
        p = self.cell_coords
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = 2.0 * self.signed_areas
        g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
        g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
        return _frozen(np.stack([-g1 - g2, g1, g2], axis=1))

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def diameter(self) -> float:
        if self.domain is not None:
            x0, x1, y0, y1 = self.domain
            return float(np.hypot(x1 - x0, y1 - y0))
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None] - v[None], axis=-1)))

    # -- topology ----------------------------------------------------------
    @cached_property
    def _edge_data(self):
        c = self.cells
        # local edge k is opposite local vertex k
        local = np.stack([c[:, [1, 2]], c[:, [2, 0]], c[:, [0, 1]]], axis=1).reshape(-1, 2)
        edges, inverse, counts = np.unique(
            np.sort(local, axis=1), axis=0, return_inverse=True, return_counts=True
        )
        return edges, inverse.reshape(-1, 3), counts

    @cached_property
    def edges(self) -> np.ndarray:
        """(ne, 2) sorted vertex pairs."""
        return _frozen(self._edge_data[0])

    @cached_property
    def cell_edges(self) -> np.ndarray:
        """(nc, 3) global edge index of the edge opposite each local vertex."""
        return _frozen(self._edge_data[1])

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Boolean flag per edge: edge lies on the domain boundary."""
        counts = self._edge_data[2]
        if np.any(counts > 2):
            raise ValueError("non-manifold edge: mesh is not conforming")
        return _frozen(counts == 1)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        flag = np.zeros(self.n_vertices, dtype=bool)
        flag[self.edges[self.boundary_edges].ravel()] = True
        return _frozen(flag)

    @cached_property
    def edge_cells(self) -> np.ndarray:
        """(ne, 2) incident cells of every edge, lower index first; -1 if absent."""
        out = np.full((self.n_edges, 2), -1, dtype=np.int64)
        ce = self.cell_edges.ravel()
        cell_of = np.repeat(np.arange(self.n_cells), 3)
        order = np.lexsort((cell_of, ce))
        ce, cell_of = ce[order], cell_of[order]
        first = np.ones(len(ce), dtype=bool)
        first[1:] = ce[1:] != ce[:-1]
        out[ce[first], 0] = cell_of[first]
        out[ce[~first], 1] = cell_of[~first]
        return _frozen(out)

    @cached_property
    def vertex_cell_incidence(self) -> sp.csr_matrix:
        """Sparse (nv, nc) 0/1 incidence matrix."""
        rows = self.cells.ravel()
        cols = np.repeat(np.arange(self.n_cells), 3)
        m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices, self.n_cells))
        return m

    @cached_property
    def star_matrix(self) -> sp.csr_matrix:
        """Sparse (nc, nc) 0/1 matrix with ``S[T, T'] = 1`` iff T and T' share a vertex."""
        inc = self.vertex_cell_incidence
        s = (inc.T @ inc).tocsr()
        s.data[:] = 1.0
        return s

    def boundary_loop(self) -> list[int]:
        """Boundary vertices in traversal order; raises unless they form one closed loop."""
        be = self.edges[self.boundary_edges]
        nbrs: dict[int, list[int]] = {}
        for a, b in be:
            nbrs.setdefault(int(a), []).append(int(b))
            nbrs.setdefault(int(b), []).append(int(a))
        if any(len(v) != 2 for v in nbrs.values()):
            raise ValueError("boundary is not a simple closed curve")
        start = min(nbrs)
        loop, prev, cur = [start], None, start
        while True:
            a, b = nbrs[cur]
            nxt = a if a != prev else b
            if nxt == start:
                break
            loop.append(nxt)
            prev, cur = cur, nxt
        if len(loop) != len(nbrs):
            raise ValueError("boundary consists of more than one loop")
        return loop

    # -- hierarchy ---------------------------------------------------------
    def ancestor_map(self, coarse: "Mesh") -> np.ndarray:
        """Index of the cell of ``coarse`` containing each cell of this mesh.

        ``coarse`` must be an ancestor in the refinement chain of this mesh.
        """
        m, idx = self, np.arange(self.n_cells)
        while m is not coarse:
            if m.parent is None or m.coarse is None:
                raise ValueError("mesh is not a refinement of the given coarse mesh")
            idx = m.parent[idx]
            m = m.coarse
        return idx

    def barycentric(self, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points ``x`` (N, 2) in ``cells`` (N,)."""
        cells = np.asarray(cells)
        x = np.asarray(x, dtype=float)
        p0 = self.vertices[self.cells[cells, 0]]
        g = self.grad_lambda[cells]
        l1 = np.einsum("nd,nd->n", g[:, 1], x - p0)
        l2 = np.einsum("nd,nd->n", g[:, 2], x - p0)
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def to_physical(self, cells: np.ndarray, bary: np.ndarray) -> np.ndarray:
        return np.einsum("nk,nkd->nd", bary, self.cell_coords[cells])

    @cached_property
    def _centroid_tree(self):
        from scipy.spatial import cKDTree

        return cKDTree(self.centroids)

    def locate_points(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Vectorised point location (floating point); lowest containing cell index wins.

        Raises :class:`PointOutsideDomain` if any point is not covered.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = min(self.n_cells, 16)
        _, cand = self._centroid_tree.query(x, k=k)
        cand = np.asarray(cand).reshape(len(x), k)
        best = np.full(len(x), -1, dtype=np.int64)
        for j in range(k):
            lam = self.barycentric(cand[:, j], x)
            inside = np.all(lam >= -tol, axis=1)
            better = inside & ((best < 0) | (cand[:, j] < best))
            best[better] = cand[better, j]
        missing = best < 0
        if np.any(missing):
            # fall back to exhaustive search for the rare far candidates
            for i in np.flatnonzero(missing):
                best[i] = locate_point(self, x[i])
        return best


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------
def _canonical_pattern(pattern: str) -> str:
    try:
        return _PATTERN_ALIASES[pattern]
    except KeyError:
        raise ValueError(f"unknown mesh pattern {pattern!r}; expected one of {PATTERNS}") from None


def build_structured_mesh(
    pattern: str = "criss-cross",
    n: int = 4,
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0),
) -> Mesh:
    """Structured triangulation of the rectangle ``domain = (x0, x1, y0, y1)``.

    ``right`` splits each of the n x n squares along its positive-slope
    diagonal (2 n^2 cells); ``criss-cross`` adds the square centre and splits
    along both diagonals (4 n^2 cells).
    """
    pattern = _canonical_pattern(pattern)
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    n = int(n)
    xs = x0 + (x1 - x0) * np.arange(n + 1) / n
    ys = y0 + (y1 - y0) * np.arange(n + 1) / n
    gx, gy = np.meshgrid(xs, ys)
    verts = [np.stack([gx.ravel(), gy.ravel()], axis=1)]

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    p00 = j * (n + 1) + i
    p10 = p00 + 1
    p01 = p00 + n + 1
    p11 = p01 + 1
    if pattern == "right":
        lower = np.stack([p00, p10, p11], axis=1)
        upper = np.stack([p00, p11, p01], axis=1)
        cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    else:
        centres = np.stack([(xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2], axis=1)
        verts.append(centres)
        c = (n + 1) ** 2 + np.arange(n * n)
        cells = np.stack(
            [
                np.stack([p00, p10, c], axis=1),
                np.stack([p10, p11, c], axis=1),
                np.stack([p11, p01, c], axis=1),
                np.stack([p01, p00, c], axis=1),
            ],
            axis=1,
        ).reshape(-1, 3)
    return Mesh(np.concatenate(verts), cells, domain=(x0, x1, y0, y1))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every cell is split into four similar children.

    New vertices are edge midpoints, numbered ``nv + edge index``.  Children
    of cell ``c`` are ``4c .. 4c+3``; child ``4c+3`` is the central one.
    """
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.concatenate([mesh.vertices, mids])
    v = mesh.cells
    m = nv + mesh.cell_edges  # m[:, k] is the midpoint opposite vertex k
    children = np.stack(
        [
            np.stack([v[:, 0], m[:, 2], m[:, 1]], axis=1),
            np.stack([m[:, 2], v[:, 1], m[:, 0]], axis=1),
            np.stack([m[:, 1], m[:, 0], v[:, 2]], axis=1),
            np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_cells), 4)
    return Mesh(verts, children, domain=mesh.domain, parent=parent, coarse=mesh)


def mesh_hierarchy(pattern: str = "criss-cross", n0: int = 2, levels: int = 4, domain=(0.0, 1.0, 0.0, 1.0)) -> list[Mesh]:
    """``levels`` nested meshes, the first built structurally with ``n0`` subdivisions."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    meshes = [build_structured_mesh(pattern, n0, domain)]
    for _ in range(levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def refine_times(mesh: Mesh, k: int) -> Mesh:
    for _ in range(k):
        mesh = refine_uniform(mesh)
    return mesh


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------
def _check_cell(mesh: Mesh, cell: int) -> int:
    if int(cell) != cell or not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell index {cell} out of range [0, {mesh.n_cells})")
    return int(cell)


def star(mesh: Mesh, cell: int) -> Star:
    """All cells whose closure meets the closure of ``cell``."""
    cell = _check_cell(mesh, cell)
    row = mesh.star_matrix.getrow(cell)
    return Star(cell, frozenset(int(c) for c in row.indices))


def interior_edge_count(mesh: Mesh, cell: int) -> int:
    cell = _check_cell(mesh, cell)
    return int(3 - mesh.boundary_edges[mesh.cell_edges[cell]].sum())


def th_mesh_ok(mesh: Mesh, d: int = 2) -> bool:
    """True iff every cell has at least ``d`` edges not on the boundary."""
    n_int = 3 - mesh.boundary_edges[mesh.cell_edges].sum(axis=1)
    return bool(np.all(n_int >= d))


def _orient(a, b, c) -> Fraction:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def locate_point(mesh: Mesh, x) -> int:
    """Lowest-index cell whose closure contains ``x``.

    Candidate cells are found in floating point; containment is then decided
    with exact rational orientation tests on the float inputs.
    """
    x = np.asarray(x, dtype=float).reshape(2)
    if not np.all(np.isfinite(x)):
        raise PointOutsideDomain(f"point {tuple(x)} is not finite")
    lam = mesh.barycentric(np.arange(mesh.n_cells), np.broadcast_to(x, (mesh.n_cells, 2)))
    cand = np.flatnonzero(np.all(lam >= -1e-9, axis=1))
    xf = (Fraction(x[0]), Fraction(x[1]))
    for c in cand:
        pts = [(Fraction(p[0]), Fraction(p[1])) for p in mesh.cell_coords[c]]
        if all(_orient(pts[k], pts[(k + 1) % 3], xf) >= 0 for k in range(3)):
            return int(c)
    raise PointOutsideDomain(f"point {tuple(x)} lies outside the mesh domain")


def shape_metrics(mesh: Mesh) -> tuple[float, float]:
    """(max h_T / min h_T, max h_T / min inradius)."""
    hT = mesh.cell_diameters
    return float(hT.max() / hT.min()), float(hT.max() / mesh.inradii.min())


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------
def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"d=2 nv={mesh.n_vertices} nc={mesh.n_cells}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty mesh file")
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    try:
        d, nv, nc = int(header["d"]), int(header["nv"]), int(header["nc"])
    except (KeyError, ValueError):
        raise ValueError(f"malformed mesh header: {lines[0]!r}") from None
    if d != 2:
        raise ValueError("only d=2 meshes are supported")
    if len(lines) != 1 + nv + nc:
        raise ValueError(f"expected {nv} vertex and {nc} cell lines, found {len(lines) - 1} lines")
    verts = np.array([[float(t) for t in ln.split()] for ln in lines[1 : 1 + nv]])
    cells = np.array([[int(t) for t in ln.split()] for ln in lines[1 + nv :]])
    v = verts
    domain = (v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max())
    return Mesh(verts, cells, domain=tuple(float(t) for t in domain))
