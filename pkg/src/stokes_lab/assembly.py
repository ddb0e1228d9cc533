"""Assembly of the Stokes forms and right-hand sides.

``a(u, v) = int grad u : grad v`` and ``b(v, q) = -int q div v``.  Matrices
are assembled over all dofs; boundary velocity dofs are eliminated by
restriction to ``SaddleSystem.free``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem_spaces import DofMap, ElementPair, bubble, make_space, p1_basis, physical_gradients, velocity_basis
from .mesh import Mesh, PointOutsideDomain, locate_point
from .quadrature import DEFAULT_DEGREE, DEFAULT_GRADING_LEVELS, MeshQuadrature, collapsed_gauss, mesh_quadrature
from .weights import Conjugate, WeightSpec


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------
def basis_on_quadrature(dofmap: DofMap, q: MeshQuadrature):
    """Velocity basis values (ne, nloc) and physical gradients (ne, nloc, 2) at every entry."""
    val, der = velocity_basis(dofmap.pair, q.bary)
    return val, physical_gradients(der, dofmap.mesh.grad_lambda[q.cell])


def pressure_basis_on_quadrature(mesh: Mesh, q: MeshQuadrature):
    val, der = p1_basis(q.bary)
    return val, physical_gradients(der, mesh.grad_lambda[q.cell])


def evaluate_on(obj, q: MeshQuadrature, order: str = "value"):
    """Evaluate ``obj`` at the entries of ``q``.

    ``obj`` is either a callable of points ``x`` (n, 2) or an object with an
    ``evaluate_on(q, order)`` method (discrete fields).
    """
    if hasattr(obj, "evaluate_on"):
        return obj.evaluate_on(q, order)
    return np.asarray(obj(q.x), dtype=float)


def _scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
    """Sum per-cell blocks ``local`` (nc, r, c) into a sparse matrix."""
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()


def _full_cells(q: MeshQuadrature, part: np.ndarray, n_cells: int) -> np.ndarray:
    out = np.zeros((n_cells,) + part.shape[1:])
    out[q.cells] = part
    return out


def scalar_stiffness(dofmap: DofMap, weight: WeightSpec | None = None, degree: int = DEFAULT_DEGREE) -> sp.csr_matrix:
    """``int w grad phi_i . grad phi_j`` over scalar velocity dofs."""
    mesh = dofmap.mesh
    sing = () if weight is None else weight.singular_points
    q = mesh_quadrature(mesh, degree, sing)
    _, g = basis_on_quadrature(dofmap, q)
    wv = 1.0 if weight is None else weight(q.x)[:, None, None]
    local = q.cell_sums(wv * np.einsum("eid,ejd->eij", g, g))
    local = _full_cells(q, local, mesh.n_cells)
    cd = dofmap.cell_dofs
    return _scatter(local, cd, cd, (dofmap.n_scalar, dofmap.n_scalar))


def vector_stiffness(dofmap: DofMap, weight: WeightSpec | None = None, degree: int = DEFAULT_DEGREE) -> sp.csr_matrix:
    k = scalar_stiffness(dofmap, weight, degree)
    return sp.block_diag([k, k], format="csr")


def pressure_mass(mesh: Mesh, weight: WeightSpec | None = None, degree: int = DEFAULT_DEGREE) -> sp.csr_matrix:
    """``int w psi_i psi_j`` for the continuous P1 pressure basis."""
    sing = () if weight is None else weight.singular_points
    q = mesh_quadrature(mesh, degree, sing)
    v, _ = pressure_basis_on_quadrature(mesh, q)
    wv = 1.0 if weight is None else weight(q.x)[:, None, None]
    local = _full_cells(q, q.cell_sums(wv * v[:, :, None] * v[:, None, :]), mesh.n_cells)
    return _scatter(local, mesh.cells, mesh.cells, (mesh.n_vertices, mesh.n_vertices))


def divergence_matrix(dofmap: DofMap, degree: int = DEFAULT_DEGREE) -> sp.csr_matrix:
    """``B[j, c*ns + i] = -int psi_j d_c phi_i``."""
    mesh = dofmap.mesh
    q = mesh_quadrature(mesh, degree)
    _, g = basis_on_quadrature(dofmap, q)
    psi, _ = pressure_basis_on_quadrature(mesh, q)
    blocks = []
    for c in range(2):
        local = _full_cells(q, q.cell_sums(-psi[:, :, None] * g[:, None, :, c]), mesh.n_cells)
        blocks.append(_scatter(local, mesh.cells, dofmap.cell_dofs, (mesh.n_vertices, dofmap.n_scalar)))
    return sp.hstack(blocks, format="csr")


def pressure_integrals(mesh: Mesh) -> np.ndarray:
    """``m_j = int psi_j`` (exact: |T|/3 per incident cell)."""
    return np.bincount(mesh.cells.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=mesh.n_vertices)


# ---------------------------------------------------------------------------
# saddle-point system
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class SaddleSystem:
    """Assembled Stokes blocks over all dofs, with the free-dof index set.

    Weighted blocks (present when a weight was given): ``A_w`` with ``w``,
    ``A_wc`` with the conjugate ``w^(-1)``, pressure masses ``M_w``, ``M_wc``.
    """

    dofmap: DofMap
    A: sp.csr_matrix
    B: sp.csr_matrix
    m: np.ndarray
    weight: WeightSpec | None = None
    A_w: sp.csr_matrix | None = field(default=None, repr=False)
    A_wc: sp.csr_matrix | None = field(default=None, repr=False)
    M_w: sp.csr_matrix | None = field(default=None, repr=False)
    M_wc: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def mesh(self) -> Mesh:
        return self.dofmap.mesh

    @property
    def pair(self) -> ElementPair:
        return self.dofmap.pair

    @property
    def free(self) -> np.ndarray:
        return self.dofmap.free_velocity

    @property
    def A_ff(self) -> sp.csr_matrix:
        f = self.free
        return self.A[f][:, f]

    @property
    def B_f(self) -> sp.csr_matrix:
        return self.B[:, self.free]

    @property
    def n_velocity(self) -> int:
        return self.dofmap.n_velocity

    @property
    def n_pressure(self) -> int:
        return self.dofmap.n_pressure


def assemble(mesh: Mesh, pair="th", weight: WeightSpec | None = None, degree: int = DEFAULT_DEGREE) -> SaddleSystem:
    """Assemble ``a``, ``b``, the mean row and (if ``weight`` is given) the p = 2 weighted blocks."""
    dm = make_space(mesh, pair)
    sys = SaddleSystem(dm, vector_stiffness(dm, None, degree), divergence_matrix(dm, degree), pressure_integrals(mesh))
    if weight is not None:
        wc = Conjugate(weight, 2.0)
        sys.weight = weight
        sys.A_w = vector_stiffness(dm, weight, degree)
        sys.A_wc = vector_stiffness(dm, wc, degree)
        sys.M_w = pressure_mass(mesh, weight, degree)
        sys.M_wc = pressure_mass(mesh, wc, degree)
    return sys


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------
def _dofmap(obj) -> DofMap:
    return obj.dofmap if isinstance(obj, SaddleSystem) else obj


def rhs_regular(space, f, degree: int = DEFAULT_DEGREE, singular_points=()) -> np.ndarray:
    """``int f . phi_i`` for a vector field ``f`` (callable on (n, 2) points)."""
    dm = _dofmap(space)
    q = mesh_quadrature(dm.mesh, degree, singular_points)
    val, _ = basis_on_quadrature(dm, q)
    fv = evaluate_on(f, q).reshape(len(q), 2)
    load = np.zeros(dm.n_velocity)
    for c in range(2):
        local = _full_cells(q, q.cell_sums(fv[:, c, None] * val), dm.mesh.n_cells)
        np.add.at(load, dm.velocity_cell_dofs(c).ravel(), local.ravel())
    return load


def _on_domain_boundary(mesh: Mesh, z) -> bool:
    if mesh.domain is None:
        return False
    x0, x1, y0, y1 = mesh.domain
    tol = 1e-12 * mesh.diameter
    return min(abs(z[0] - x0), abs(z[0] - x1), abs(z[1] - y0), abs(z[1] - y1)) <= tol


def rhs_dirac(space, points) -> np.ndarray:
    """Load of ``sum_z F_z delta_z``: entry ``F_z^c phi_i(z)`` (exact point evaluation).

    ``points`` is an iterable of ``(z, F)`` pairs with ``z`` interior.
    """
    dm = _dofmap(space)
    mesh = dm.mesh
    load = np.zeros(dm.n_velocity)
    for z, F in points:
        z = np.asarray(z, dtype=float)
        F = np.asarray(F, dtype=float).reshape(2)
        cell = locate_point(mesh, z)
        if _on_domain_boundary(mesh, z):
            raise PointOutsideDomain(f"Dirac point {tuple(z)} lies on the boundary")
        lam = mesh.barycentric(np.array([cell]), z[None])
        if np.any(lam < 1e-12):
            warnings.warn(f"Dirac point {tuple(z)} lies on a cell interface; using cell {cell}", stacklevel=2)
        val, _ = velocity_basis(dm.pair, np.clip(lam, 0.0, 1.0))
        for c in range(2):
            np.add.at(load, dm.velocity_cell_dofs(c)[cell], F[c] * val[0])
    return load


def rhs_projection(space, grad_u, pi, degree: int = DEFAULT_DEGREE, singular_points=(),
                   levels: int = DEFAULT_GRADING_LEVELS) -> np.ndarray:
    """``int grad u : grad phi_i - pi div phi_i``.

    ``grad_u`` returns (n, 2, 2) with ``[:, i, k] = d_k u_i``; ``pi`` returns (n,).
    Cells containing ``singular_points`` use graded quadrature.
    """
    dm = _dofmap(space)
    q = mesh_quadrature(dm.mesh, degree, singular_points, levels)
    _, g = basis_on_quadrature(dm, q)
    G = evaluate_on(grad_u, q, "gradient").reshape(len(q), 2, 2)
    P = evaluate_on(pi, q).reshape(len(q))
    load = np.zeros(dm.n_velocity)
    for c in range(2):
        integrand = np.einsum("ed,eld->el", G[:, c, :], g) - P[:, None] * g[:, :, c]
        local = _full_cells(q, q.cell_sums(integrand), dm.mesh.n_cells)
        np.add.at(load, dm.velocity_cell_dofs(c).ravel(), local.ravel())
    return load


# ---------------------------------------------------------------------------
# regularized delta
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class RegularizedDelta:
    """``b_T^2 q`` supported on the cell ``cell`` of ``mesh``.

    ``q`` is a combination of the local velocity basis of ``pair`` and of its
    first partial derivatives (scaled by ``h_T``), stored in ``coef``.
    """

    mesh: Mesh
    pair: ElementPair
    z: tuple
    cell: int
    coef: np.ndarray

    def candidates(self, bary: np.ndarray) -> np.ndarray:
        bary = np.atleast_2d(bary)
        val, der = velocity_basis(self.pair, bary)
        g = physical_gradients(der, np.broadcast_to(self.mesh.grad_lambda[self.cell], (len(bary), 3, 2)))
        hT = self.mesh.cell_diameters[self.cell]
        return np.concatenate([val, hT * g[:, :, 0], hT * g[:, :, 1]], axis=1)

    def at_bary(self, bary: np.ndarray) -> np.ndarray:
        bary = np.atleast_2d(bary)
        b, _ = bubble(bary)
        return b**2 * (self.candidates(bary) @ self.coef)

    def __call__(self, x) -> np.ndarray:
        """Values at physical points; zero outside the support cell."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lam = self.mesh.barycentric(np.full(len(x), self.cell), x)
        inside = np.all(lam >= -1e-12, axis=1)
        out = np.zeros(len(x))
        if np.any(inside):
            out[inside] = self.at_bary(np.clip(lam[inside], 0.0, 1.0))
        return out

    def sup_norm(self, n: int = 40) -> float:
        """Max of |delta| over a barycentric lattice with ``n`` subdivisions."""
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = i + j <= n
        l1, l2 = i[keep] / n, j[keep] / n
        bary = np.stack([1 - l1 - l2, l1, l2], axis=1)
        return float(np.abs(self.at_bary(bary)).max())

    def integral(self, degree: int = 14) -> float:
        r = collapsed_gauss(degree)
        return float(2.0 * self.mesh.areas[self.cell] * np.dot(r.weights, self.at_bary(r.bary)))


def build_regularized_delta(mesh: Mesh, pair, z, degree: int = 14) -> RegularizedDelta:
    """Regularized Dirac delta at ``z`` reproducing values and first derivatives of the local velocity space.

    The moment conditions ``int b^2 q r = r(z)`` for every ``r`` in the local
    space are solved in the least-squares sense via the pseudo-inverse of the
    weighted Gram matrix; the candidate set is linearly dependent (the
    derivatives of P2 lie in P2), which the pseudo-inverse absorbs.
    """
    pair = ElementPair.parse(pair)
    z = np.asarray(z, dtype=float).reshape(2)
    cell = locate_point(mesh, z)
    proto = RegularizedDelta(mesh, pair, tuple(z), cell, np.zeros(3 * pair.n_local))
    r = collapsed_gauss(degree)
    C = proto.candidates(r.bary)
    b, _ = bubble(r.bary)
    W = 2.0 * mesh.areas[cell] * r.weights * b**2
    G = C.T @ (W[:, None] * C)
    lam_z = np.clip(mesh.barycentric(np.array([cell]), z[None]), 0.0, 1.0)
    cz = proto.candidates(lam_z)[0]
    evals, evecs = np.linalg.eigh(G)
    keep = evals > 1e-10 * evals.max()
    if keep.sum() < 6:
        raise np.linalg.LinAlgError("moment Gram matrix is unexpectedly singular")
    coef = evecs[:, keep] @ ((evecs[:, keep].T @ cz) / evals[keep])
    return RegularizedDelta(mesh, pair, tuple(z), cell, coef)


def rhs_green(space, delta: RegularizedDelta, i: int, j: int, degree: int = 12) -> np.ndarray:
    """``int delta d_{x_i} phi^j`` (0-based ``i``, ``j``).

    ``space`` may live on the mesh of ``delta`` or on a nested refinement of
    it; in the latter case the integral runs over the descendants of the
    support cell.
    """
    if i not in (0, 1) or j not in (0, 1):
        raise ValueError("i and j must be 0 or 1")
    dm = _dofmap(space)
    mesh = dm.mesh
    if mesh is delta.mesh:
        cells = np.array([delta.cell])
    else:
        cells = np.flatnonzero(mesh.ancestor_map(delta.mesh) == delta.cell)
    q = MeshQuadrature(mesh, degree, cells=cells)
    _, g = basis_on_quadrature(dm, q)
    dv = delta(q.x)
    local = q.cell_sums(dv[:, None] * g[:, :, i])
    load = np.zeros(dm.n_velocity)
    np.add.at(load, dm.velocity_cell_dofs(j)[q.cells].ravel(), local.ravel())
    return load
