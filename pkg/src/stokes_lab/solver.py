"""Saddle-point solves and discrete inf-sup constants.

The KKT matrix

    [ A_ff  B_f^T  0 ]
    [ B_f   0      m ]
    [ 0     m^T    0 ]

(free velocity dofs, pressure, one multiplier enforcing zero pressure mean)
is solved by iterative refinement against a factorisation of a slightly
regularised, symmetric quasi-definite copy (``-delta m_j`` on the pressure
diagonal, ``-delta |Omega|`` on the multiplier).  Quasi-definite matrices
factor stably under any symmetric ordering, so SuperLU can use a minimum
degree ordering on ``A + A^T`` without pivoting, which cuts fill by an order
of magnitude compared with the default column ordering.  The factorisation
is cached on the system.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import RegularizedDelta, SaddleSystem, assemble, build_regularized_delta, pressure_mass, rhs_green
from .mesh import Mesh


class SolverError(RuntimeError):
    """Factorisation or eigen-solve failure."""


@dataclass
class Solution:
    """Discrete velocity (all dofs, zero on the boundary) and zero-mean pressure."""

    velocity: np.ndarray
    pressure: np.ndarray
    multiplier: float
    residual: float
    info: dict = field(default_factory=dict)


def kkt_matrix(system: SaddleSystem) -> sp.csc_matrix:
    A, B = system.A_ff, system.B_f
    m = sp.csr_matrix(system.m[:, None])
    return sp.bmat([[A, B.T, None], [B, None, m], [None, m.T, None]], format="csc")


REGULARIZATION = 1e-8
MAX_REFINEMENT = 30


def symmetric_splu(M: sp.spmatrix):
    """SuperLU with a minimum degree ordering on ``M + M^T`` and no pivoting (symmetric mode)."""
    return spla.splu(sp.csc_matrix(M), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options=dict(SymmetricMode=True))


def _factor(system: SaddleSystem):
    lu = getattr(system, "_kkt_lu", None)
    if lu is None:
        t0 = time.perf_counter()
        K = kkt_matrix(system)
        nf, npr = len(system.free), system.n_pressure
        d = np.zeros(K.shape[0])
        d[nf : nf + npr] = -REGULARIZATION * system.m
        d[-1] = -REGULARIZATION * system.m.sum()
        try:
            lu = symmetric_splu(K + sp.diags(d))
            kind = "superlu-quasidefinite"
        except RuntimeError:
            lu, kind = None, ""
        system._kkt = K
        system._kkt_lu = lu
        system._kkt_kind = kind
        system._kkt_time = time.perf_counter() - t0
    return system._kkt, lu


def _exact_factor(system: SaddleSystem):
    """Fallback: pivoting SuperLU on the unregularised matrix."""
    try:
        lu = spla.splu(system._kkt)
    except RuntimeError as exc:
        raise SolverError(f"KKT factorisation failed: {exc}") from exc
    system._kkt_lu, system._kkt_kind = lu, "superlu"
    return lu


def _refine(K, lu, rhs, tol=1e-13, accept=1e-10):
    """Iterative refinement; stops at ``tol`` or on stagnation below ``accept`` (relative)."""
    x = np.zeros_like(rhs)
    nb = np.linalg.norm(rhs)
    if nb == 0:
        return x, 0
    prev = np.inf
    for it in range(MAX_REFINEMENT):
        r = rhs - K @ x
        rel = np.linalg.norm(r) / nb
        if rel <= tol or (rel > 0.5 * prev and rel <= accept):
            return x, it
        prev = rel
        x += lu.solve(r)
        if not np.all(np.isfinite(x)):
            break
    return x, -1


def solve_saddle(system: SaddleSystem, load: np.ndarray, pressure_load: np.ndarray | None = None) -> Solution:
    """Solve ``a(u, v) + b(v, p) = load(v)``, ``b(u, q) = pressure_load(q)``, ``int p = 0``.

    ``load`` is indexed over all velocity dofs; boundary entries are ignored.
    """
    K, lu = _factor(system)
    free = system.free
    nf, npr = len(free), system.n_pressure
    rhs = np.zeros(nf + npr + 1)
    rhs[:nf] = np.asarray(load, dtype=float)[free]
    if pressure_load is not None:
        rhs[nf : nf + npr] = pressure_load
    t0 = time.perf_counter()
    x, iters = (np.zeros_like(rhs), -1) if lu is None else _refine(K, lu, rhs)
    if iters < 0 and system._kkt_kind != "superlu":
        lu = _exact_factor(system)
        x, iters = _refine(K, lu, rhs)
    if iters < 0 or not np.all(np.isfinite(x)):
        raise SolverError("refinement did not converge; the saddle-point system is singular")
    r = K @ x - rhs
    scale = max(np.linalg.norm(rhs), 1e-300)
    residual = float(np.linalg.norm(r) / scale) if np.linalg.norm(rhs) > 0 else float(np.linalg.norm(r))
    u = np.zeros(system.n_velocity)
    u[free] = x[:nf]
    p = x[nf : nf + npr]
    p = p - (system.m @ p) / system.m.sum()
    info = {
        "factorization": system._kkt_kind,
        "refinement_steps": iters,
        "factor_time": getattr(system, "_kkt_time", 0.0),
        "solve_time": time.perf_counter() - t0,
        "n_unknowns": int(K.shape[0]),
    }
    return Solution(u, p, float(x[-1]), residual, info)


# ---------------------------------------------------------------------------
# inf-sup
# ---------------------------------------------------------------------------
def infsup_beta(mesh: Mesh | None = None, pair="th", weight=None, system: SaddleSystem | None = None,
                chunk: int = 256) -> float:
    """Discrete inf-sup constant at p = 2, optionally weighted.

    ``beta^2`` is the smallest eigenvalue of ``B A_{w'}^{-1} B^T q = lam M_w q``
    over pressures that are ``M_w``-orthogonal to constants (the quotient
    norm of ``L^2(w)/R``).  The Schur complement is formed densely, column
    block by column block, from one sparse factorisation.
    """
    if system is None:
        if mesh is None:
            raise ValueError("give a mesh or an assembled system")
        system = assemble(mesh, pair, weight)
    if system.weight is not None:
        Ac = system.A_wc[system.free][:, system.free]
        M = system.M_w
    else:
        Ac = system.A_ff
        M = pressure_mass(system.mesh)
    Bf = system.B_f
    try:
        lu = symmetric_splu(Ac)
    except RuntimeError as exc:
        raise SolverError(f"velocity block factorisation failed: {exc}") from exc
    npr = Bf.shape[0]
    BT = Bf.T.tocsc()
    S = np.empty((npr, npr))
    for s in range(0, npr, chunk):
        cols = BT[:, s : s + chunk].toarray()
        S[:, s : s + chunk] = Bf @ lu.solve(cols)
    S = 0.5 * (S + S.T)
    Md = M.toarray()
    c = Md.sum(axis=1)
    Z = sla.null_space(c[None, :])
    try:
        lam = sla.eigh(Z.T @ S @ Z, Z.T @ Md @ Z, eigvals_only=True, subset_by_index=[0, 0])[0]
    except (sla.LinAlgError, ValueError) as exc:
        raise SolverError(f"generalized eigensolve failed: {exc}") from exc
    if lam < -1e-10:
        raise SolverError(f"negative eigenvalue {lam:.3e}: assembly is inconsistent")
    return float(np.sqrt(max(lam, 0.0)))


# ---------------------------------------------------------------------------
# regularized Green's function
# ---------------------------------------------------------------------------
@dataclass
class GreenSolution:
    solution: Solution
    delta: RegularizedDelta
    system: SaddleSystem
    i: int
    j: int


def solve_green(system: SaddleSystem, z=None, i: int = 0, j: int = 0, delta: RegularizedDelta | None = None) -> GreenSolution:
    """Discrete regularized Green's function with load ``int delta d_i v^j``.

    ``delta`` defaults to the regularized delta at ``z`` on the system's own mesh.
    """
    if delta is None:
        if z is None:
            raise ValueError("give z or a prebuilt delta")
        delta = build_regularized_delta(system.mesh, system.pair, z)
    sol = solve_saddle(system, rhs_green(system, delta, i, j))
    return GreenSolution(sol, delta, system, i, j)


def reference_green(fine_system: SaddleSystem, delta: RegularizedDelta, i: int = 0, j: int = 0) -> GreenSolution:
    """Green's function for the same ``delta`` on a nested finer mesh."""
    return solve_green(fine_system, i=i, j=j, delta=delta)
