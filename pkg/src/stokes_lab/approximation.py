"""Star-average quasi-interpolation with the two inf-sup transfer tools built on it.

The mini element gets a Fortin operator.  Taylor-Hood gets a perturbation field.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import ExperimentReport, cell_weight_measures, pointwise_power
from .assembly import basis_on_quadrature, evaluate_on
from .fem_spaces import DofMap, ElementPair, bubble_cell_integral, make_space
from .mesh import Mesh, th_mesh_ok
from .quadrature import DEFAULT_DEGREE, mesh_quadrature
from .weights import Conjugate, WeightSpec

TARGETS = ("velocity", "pressure", "plain")


# ---------------------------------------------------------------------------
# quasi-interpolation
# ---------------------------------------------------------------------------
def star_averages(field, mesh: Mesh, degree: int = DEFAULT_DEGREE, singular_points=()) -> np.ndarray:
    """Average of ``field`` over the union of cells sharing each vertex: (nv,) or (nv, k)."""
    q = mesh_quadrature(mesh, degree, singular_points)
    vals = evaluate_on(field, q)
    cell_int = q.cell_sums_full(vals)
    inc = mesh.vertex_cell_incidence
    num = inc @ cell_int.reshape(mesh.n_cells, -1)
    den = inc @ mesh.areas
    out = num / den[:, None]
    return out[:, 0] if vals.ndim == 1 else out


def p1_integral(mesh: Mesh, vertex_values: np.ndarray) -> np.ndarray:
    """Exact integral of a continuous P1 function given by vertex values."""
    v = np.asarray(vertex_values)
    return np.tensordot(mesh.areas / 3.0, v[mesh.cells].sum(axis=1), axes=(0, 0))


def quasi_interpolate(field, mesh: Mesh, target: str = "velocity", degree: int = DEFAULT_DEGREE,
                      singular_points=()) -> np.ndarray:
    """Vertex values of the star-average quasi-interpolant.

    ``velocity``: boundary vertices are set to 0.  ``pressure``: a constant is
    added so the P1 result has zero mean.  ``plain``: no modification.
    """
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}")
    vals = star_averages(field, mesh, degree, singular_points)
    if target == "velocity":
        vals = vals.copy()
        vals[mesh.boundary_vertices] = 0.0
    elif target == "pressure":
        vals = vals - p1_integral(mesh, vals) / mesh.total_area
    return vals


def _p1_cell_gradients(mesh: Mesh, vertex_values: np.ndarray) -> np.ndarray:
    """(nc, 2) or (nc, k, 2) cellwise gradients of a P1 function."""
    v = np.asarray(vertex_values)[mesh.cells]  # (nc, 3[, k])
    if v.ndim == 2:
        return np.einsum("ck,ckd->cd", v, mesh.grad_lambda)
    return np.einsum("cki,ckd->cid", v, mesh.grad_lambda)


def _p1_values(mesh: Mesh, vertex_values: np.ndarray, cells, bary) -> np.ndarray:
    v = np.asarray(vertex_values)[mesh.cells[cells]]
    if v.ndim == 2:
        return np.einsum("nk,nk->n", bary, v)
    return np.einsum("nk,nki->ni", bary, v)


def interp_estimates_report(field, grad, meshes, weight: WeightSpec | None = None, p: float = 2.0,
                            target: str = "velocity", degree: int = DEFAULT_DEGREE, config=None) -> ExperimentReport:
    """Per-level maxima of the local stability and approximation ratios of the quasi-interpolant.

    Per cell T with star S_T:

    * ``C_stab = |grad Pi v|_{p,w,T} / |grad v|_{p,w,S_T}``
    * ``C_err = |v - Pi v|_{p,w,T} / (h_T |grad v|_{p,w,S_T})``
    * ``C_mixed = |v - Pi v|_{p,T} / (h_T^(1+2/p) w(S_T)^(-1/p) |grad v|_{p,w,S_T})``

    Cells where the star gradient norm vanishes are skipped.  Global L2 and
    H1-seminorm errors are recorded with EOC columns.
    """
    rep = ExperimentReport("interpolation", dict(config or {}), eoc_of=["err_l2", "err_h1"])
    sing = () if weight is None else tuple(map(tuple, weight.singular_points))
    for k, mesh in enumerate(meshes):
        q = mesh_quadrature(mesh, degree, sing)
        pv = quasi_interpolate(field, mesh, target, degree, sing)
        v = evaluate_on(field, q)
        gv = np.asarray(grad(q.x), dtype=float)
        piv = _p1_values(mesh, pv, q.cell, q.bary)
        gpi = _p1_cell_gradients(mesh, pv)[q.cell]
        w = np.ones(len(q)) if weight is None else weight(q.x)
        I_gpi = q.cell_sums_full(w * pointwise_power(gpi, p))
        I_g = q.cell_sums_full(w * pointwise_power(gv, p))
        I_e = q.cell_sums_full(w * pointwise_power(v - piv, p))
        I_e0 = q.cell_sums_full(pointwise_power(v - piv, p))
        wT = cell_weight_measures(mesh, weight, degree)
        S = mesh.star_matrix
        Sg, Sw = S @ I_g, S @ wT
        ok = Sg > 1e-14 * Sg.max()
        hT = mesh.cell_diameters
        c_stab = (I_gpi[ok] / Sg[ok]) ** (1 / p)
        c_err = I_e[ok] ** (1 / p) / (hT[ok] * Sg[ok] ** (1 / p))
        c_mix = I_e0[ok] ** (1 / p) / (hT[ok] ** (1 + 2 / p) * Sw[ok] ** (-1 / p) * Sg[ok] ** (1 / p))
        e_l2 = float(np.sqrt(q.integrate(pointwise_power(v - piv, 2))))
        e_h1 = float(np.sqrt(q.integrate(pointwise_power(gv - gpi, 2))))
        rep.add_row(k, mesh.h, mesh.n_vertices, C_stab=float(c_stab.max()), C_err=float(c_err.max()),
                    C_mixed=float(c_mix.max()), err_l2=e_l2, err_h1=e_h1, skipped=int((~ok).sum()))
    return rep


# ---------------------------------------------------------------------------
# Fortin operator (mini element)
# ---------------------------------------------------------------------------
def fortin_mini(v, mesh: Mesh, degree: int = 14) -> np.ndarray:
    """Mini-element coefficients of ``F_h v = Pi_h v + sum_T gamma_T b_T``.

    ``gamma_T = int_T (v - Pi_h v) / int_T b_T`` per component, so cell means
    of ``v`` are preserved.  ``v`` is a vector field vanishing on the boundary.
    """
    dm = make_space(mesh, ElementPair.MINI)
    pv = quasi_interpolate(v, mesh, "velocity", degree)  # (nv, 2)
    q = mesh_quadrature(mesh, degree)
    int_v = q.cell_sums_full(evaluate_on(v, q).reshape(len(q), 2))
    int_pi = mesh.areas[:, None] * pv[mesh.cells].mean(axis=1)
    gamma = (int_v - int_pi) / bubble_cell_integral(mesh.areas)[:, None]
    return dm.join_velocity(np.concatenate([pv, gamma]))


def mini_cell_integrals(dofmap: DofMap, coeffs: np.ndarray) -> np.ndarray:
    """Exact cell integrals (nc, 2) of a mini-element velocity."""
    mesh = dofmap.mesh
    c = dofmap.split_velocity(coeffs)
    lin = mesh.areas[:, None] * c[mesh.cells].mean(axis=1)
    return lin + bubble_cell_integral(mesh.areas)[:, None] * c[mesh.n_vertices :]


# ---------------------------------------------------------------------------
# Taylor-Hood perturbation field
# ---------------------------------------------------------------------------
@dataclass
class PerturbationResult:
    """Coefficients of ``w_h`` with the two measured ratios (``None`` if vacuous)."""

    coeffs: np.ndarray
    r1: float | None
    r2: float | None
    b_value: float
    denominator: float


def _conjugate_cell_measures(mesh: Mesh, weight: WeightSpec | None, p: float, degree: int) -> np.ndarray:
    if weight is None:
        return np.asarray(mesh.areas, dtype=float).copy()
    return cell_weight_measures(mesh, Conjugate(weight, p), degree)


def th_perturbation_field(q_h: np.ndarray, mesh: Mesh, weight: WeightSpec | None = None, p: float = 2.0,
                          degree: int = DEFAULT_DEGREE) -> np.ndarray:
    """Taylor-Hood velocity with zero vertex values and, at each interior edge midpoint,

    ``-|e|^p' tau_e sign(d_tau q_h) |d_tau q_h|^(p'-1) w'(T) / |T|``

    where ``T`` is the lower-indexed cell sharing the edge and ``w' = w^(1/(1-p))``.
    """
    if not th_mesh_ok(mesh):
        raise ValueError("every cell needs at least two interior edges")
    pp = p / (p - 1)
    dm = make_space(mesh, ElementPair.TAYLOR_HOOD)
    q_h = np.asarray(q_h, dtype=float)
    e = mesh.edges
    vec = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    length = np.linalg.norm(vec, axis=1)
    tau = vec / length[:, None]
    dtau = (q_h[e[:, 1]] - q_h[e[:, 0]]) / length
    T = mesh.edge_cells[:, 0]
    wc = _conjugate_cell_measures(mesh, weight, p, degree)
    amp = -length**pp * np.sign(dtau) * np.abs(dtau) ** (pp - 1) * wc[T] / mesh.areas[T]
    amp[mesh.boundary_edges] = 0.0
    scal = np.zeros((dm.n_scalar, 2))
    scal[mesh.n_vertices :] = amp[:, None] * tau
    return dm.join_velocity(scal)


def th_perturbation_ratios(q_h: np.ndarray, mesh: Mesh, weight: WeightSpec | None = None, p: float = 2.0,
                           degree: int = DEFAULT_DEGREE) -> PerturbationResult:
    """``r1 = |grad w_h|^p_{p,w} / (h^p' |grad q_h|^p'_{p',w'})`` and
    ``r2 = -b(w_h, q_h) / (h^p' sum_T w'(T) |grad q_h|_T|^p')``.

    ``b(w_h, q_h) = int grad q_h . w_h`` is non-positive for this field, so
    ``r2`` reports its magnitude.
    """
    pp = p / (p - 1)
    coeffs = th_perturbation_field(q_h, mesh, weight, p, degree)
    dm = make_space(mesh, ElementPair.TAYLOR_HOOD)
    gq = _p1_cell_gradients(mesh, q_h)
    wc = _conjugate_cell_measures(mesh, weight, p, degree)
    denom = mesh.h**pp * float(np.sum(wc * np.linalg.norm(gq, axis=1) ** pp))
    # b(w, q) = -int q div w, evaluated exactly with the vertex-midpoint rule on each cell
    c = dm.split_velocity(coeffs)
    mids = c[dm.cell_dofs[:, 3:]]  # (nc, 3, 2); vertex values vanish
    b_val = float(np.sum(mesh.areas / 3.0 * np.einsum("cd,ckd->c", gq, mids)))
    if denom == 0.0:
        return PerturbationResult(coeffs, None, None, b_val, denom)
    sing = () if weight is None else weight.singular_points
    q = mesh_quadrature(mesh, degree, sing)
    _, g = basis_on_quadrature(dm, q)
    cd = dm.cell_dofs[q.cell]
    cw = np.stack([coeffs[cd], coeffs[cd + dm.n_scalar]], axis=1)
    gw = np.einsum("nil,nld->nid", cw, g)
    wv = np.ones(len(q)) if weight is None else weight(q.x)
    num1 = q.integrate(wv * pointwise_power(gw, p))
    return PerturbationResult(coeffs, num1 / denom, -b_val / denom, b_val, denom)
