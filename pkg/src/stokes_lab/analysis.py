"""Discrete fields, exact solutions, weighted norms, EOC and the ratio experiments."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .assembly import assemble, evaluate_on, rhs_dirac, rhs_projection, rhs_regular
from .fem_spaces import DofMap, ElementPair, make_space, p1_basis, p1_to_velocity, physical_gradients, velocity_basis
from .mesh import Mesh, refine_times, th_mesh_ok
from .quadrature import DEFAULT_DEGREE, DEFAULT_GRADING_LEVELS, MeshQuadrature, mesh_quadrature
from .weights import (
    Conjugate,
    Constant,
    DistPower,
    Natterer,
    Power,
    WeightSpec,
    ap_restricted_check,
    as_distance_power,
    in_a1_range,
    in_ap_range,
)


class GateError(ValueError):
    """A configuration outside the hypotheses of the experiment."""


# ---------------------------------------------------------------------------
# discrete fields
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class DiscreteField:
    """A finite element function: velocity (vector) or pressure (scalar P1).

    Velocity coefficients use the component-major layout of :class:`DofMap`.
    """

    dofmap: DofMap
    kind: str
    coeffs: np.ndarray

    def __post_init__(self):
        if self.kind not in ("velocity", "pressure"):
            raise ValueError("kind must be 'velocity' or 'pressure'")
        n = self.dofmap.n_velocity if self.kind == "velocity" else self.dofmap.n_pressure
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (n,):
            raise ValueError(f"expected {n} coefficients, got {self.coeffs.shape}")

    @property
    def mesh(self) -> Mesh:
        return self.dofmap.mesh

    def eval_cells(self, cells: np.ndarray, bary: np.ndarray, order: str = "value") -> np.ndarray:
        """Values ((n,) or (n, 2)) or gradients ((n, 2) or (n, 2, 2), ``[:, i, k] = d_k v_i``)."""
        cells = np.asarray(cells)
        mesh = self.mesh
        if self.kind == "pressure":
            val, der = p1_basis(bary)
            c = self.coeffs[mesh.cells[cells]]
            if order == "value":
                return np.einsum("nl,nl->n", val, c)
            g = physical_gradients(der, mesh.grad_lambda[cells])
            return np.einsum("nl,nld->nd", c, g)
        val, der = velocity_basis(self.dofmap.pair, bary)
        ns = self.dofmap.n_scalar
        cd = self.dofmap.cell_dofs[cells]
        c = np.stack([self.coeffs[cd], self.coeffs[cd + ns]], axis=1)  # (n, 2, nloc)
        if order == "value":
            return np.einsum("nl,nil->ni", val, c)
        g = physical_gradients(der, mesh.grad_lambda[cells])
        return np.einsum("nil,nld->nid", c, g)

    def evaluate_on(self, q: MeshQuadrature, order: str = "value") -> np.ndarray:
        """Evaluate at the entries of a quadrature on this mesh or on a nested refinement."""
        if q.mesh is self.mesh:
            return self.eval_cells(q.cell, q.bary, order)
        try:
            cells = q.mesh.ancestor_map(self.mesh)[q.cell]
        except ValueError:
            cells = self.mesh.locate_points(q.x)
        bary = np.clip(self.mesh.barycentric(cells, q.x), 0.0, 1.0)
        bary /= bary.sum(axis=1, keepdims=True)
        return self.eval_cells(cells, bary, order)

    def __call__(self, x, order: str = "value") -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cells = self.mesh.locate_points(x)
        bary = np.clip(self.mesh.barycentric(cells, x), 0.0, 1.0)
        return self.eval_cells(cells, bary, order)

    def gradient(self, x) -> np.ndarray:
        return self(x, "gradient")


def velocity_field(dofmap: DofMap, coeffs) -> DiscreteField:
    return DiscreteField(dofmap, "velocity", coeffs)


def pressure_field(dofmap: DofMap, coeffs) -> DiscreteField:
    return DiscreteField(dofmap, "pressure", coeffs)


class _Component:
    """Adapter exposing one order of an exact or discrete field as a plain evaluator."""

    def __init__(self, f, order):
        self.f, self.order = f, order

    def evaluate_on(self, q, order="value"):
        return evaluate_on(self.f, q, self.order)


# ---------------------------------------------------------------------------
# exact solutions
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ExactSolution:
    """Closed-form velocity, velocity gradient, pressure (and forcing, if smooth)."""

    name: str
    velocity: Callable
    grad: Callable
    pressure: Callable
    forcing: Callable | None = None
    solenoidal: bool = True
    zero_trace: bool = True
    singular_points: tuple = ()

    def velocity_evaluator(self):
        return _ExactPart(self.velocity, self.grad)

    def pressure_evaluator(self):
        return _ExactPart(self.pressure, None)


class _ExactPart:
    def __init__(self, value, grad):
        self.value, self.grad = value, grad

    def __call__(self, x):
        return self.value(x)

    def evaluate_on(self, q, order="value"):
        if order == "value":
            return np.asarray(self.value(q.x), dtype=float)
        if self.grad is None:
            raise ValueError("no gradient available")
        return np.asarray(self.grad(q.x), dtype=float)


def _smooth_curl() -> ExactSolution:
    # psi = X(x) Y(y) with X = x^2 (1-x)^2, u = (psi_y, -psi_x)
    X = lambda t: t**2 * (1 - t) ** 2  # noqa: E731
    X1 = lambda t: 2 * t * (1 - t) * (1 - 2 * t)  # noqa: E731
    X2 = lambda t: 2 * (1 - 6 * t + 6 * t**2)  # noqa: E731
    X3 = lambda t: 2 * (-6 + 12 * t)  # noqa: E731
    tau = 2 * math.pi

    def velocity(x):
        a, b = x[:, 0], x[:, 1]
        return np.stack([X(a) * X1(b), -X1(a) * X(b)], axis=1)

    def grad(x):
        a, b = x[:, 0], x[:, 1]
        g = np.empty((len(x), 2, 2))
        g[:, 0, 0] = X1(a) * X1(b)
        g[:, 0, 1] = X(a) * X2(b)
        g[:, 1, 0] = -X2(a) * X(b)
        g[:, 1, 1] = -X1(a) * X1(b)
        return g

    def pressure(x):
        return np.sin(tau * x[:, 0]) * np.cos(tau * x[:, 1])

    def forcing(x):
        a, b = x[:, 0], x[:, 1]
        lap1 = X2(a) * X1(b) + X(a) * X3(b)
        lap2 = -(X3(a) * X(b) + X1(a) * X2(b))
        dpx = tau * np.cos(tau * a) * np.cos(tau * b)
        dpy = -tau * np.sin(tau * a) * np.sin(tau * b)
        return np.stack([-lap1 + dpx, -lap2 + dpy], axis=1)

    return ExactSolution("smooth_curl", velocity, grad, pressure, forcing, True, True, ())


def _stokeslet(z, F) -> ExactSolution:
    z = np.asarray(z, dtype=float).reshape(2)
    F = np.asarray(F, dtype=float).reshape(2)
    c = 1.0 / (4 * math.pi)

    def _d(x):
        d = np.atleast_2d(x) - z
        r2 = np.sum(d * d, axis=1)
        if np.any(r2 == 0):
            raise ValueError("Stokeslet evaluated at its pole")
        return d, r2

    def velocity(x):
        d, r2 = _d(x)
        return c * (-0.5 * np.log(r2)[:, None] * F + d * ((d @ F) / r2)[:, None])

    def grad(x):
        # d_k U_ij = c(-d_k delta_ij / r^2 + (delta_ik d_j + d_i delta_jk)/r^2 - 2 d_i d_j d_k / r^4)
        d, r2 = _d(x)
        dF = d @ F
        g = np.empty((len(d), 2, 2))
        for i in range(2):
            for k in range(2):
                g[:, i, k] = c * (
                    -d[:, k] * F[i] / r2
                    + ((i == k) * dF + d[:, i] * F[k]) / r2
                    - 2 * d[:, i] * dF * d[:, k] / r2**2
                )
        return g

    def pressure(x):
        d, r2 = _d(x)
        return (d @ F) / (2 * math.pi * r2)

    return ExactSolution("stokeslet", velocity, grad, pressure, None, True, False, (tuple(z),))


def manufactured_solution(name: str = "smooth_curl", z=(0.5, 0.5), F=(1.0, 0.0)) -> ExactSolution:
    """``smooth_curl`` (smooth and solenoidal with zero trace) or ``stokeslet`` (fundamental pair at ``z``)."""
    if name == "smooth_curl":
        return _smooth_curl()
    if name == "stokeslet":
        return _stokeslet(z, F)
    raise ValueError(f"unknown manufactured solution {name!r}")


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------
def _norm_quadrature(mesh, weight, singular_points, degree, levels):
    sing = [tuple(s) for s in np.asarray(singular_points, dtype=float).reshape(-1, 2)]
    if weight is not None:
        sing += [tuple(s) for s in weight.singular_points]
    return mesh_quadrature(mesh, degree, tuple(dict.fromkeys(sing)), levels)


def pointwise_power(values: np.ndarray, p: float) -> np.ndarray:
    """``sum_i |v_i|^p`` for values (n,), (n, k) or gradients (n, k, 2) (Euclidean per row)."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        return np.abs(v) ** p
    if v.ndim == 2:
        return np.sum(np.abs(v) ** p, axis=1)
    return np.sum(np.linalg.norm(v, axis=2) ** p, axis=1)


def weighted_norm(f, weight: WeightSpec | None = None, p: float = 2.0, order: str = "value", mesh: Mesh | None = None,
                  degree: int = DEFAULT_DEGREE, singular_points=(), levels: int = DEFAULT_GRADING_LEVELS,
                  minus=None, return_cells: bool = False):
    """``(sum_T int_T w |f|^p)^(1/p)``.

    For vector fields the integrand is ``sum_i |f_i|^p`` (values) or
    ``sum_i |grad f_i|^p`` (gradients).  ``minus`` is subtracted first, so
    errors between non-nested fields are computed pointwise on ``mesh``.
    ``f`` is any object with an ``evaluate_on`` method (discrete fields and
    exact-solution parts) or a plain callable of points.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if mesh is None:
        mesh = f.mesh
    q = _norm_quadrature(mesh, weight, singular_points, degree, levels)
    vals = evaluate_on(f, q, order)
    if minus is not None:
        vals = vals - evaluate_on(minus, q, order)
    integrand = pointwise_power(vals, p)
    if weight is not None:
        integrand = integrand * weight(q.x)
    if not np.all(np.isfinite(integrand)):
        raise ArithmeticError("non-finite integrand; the weighted norm does not exist")
    if return_cells:
        return q.cell_sums_full(integrand)
    return float(q.integrate(integrand) ** (1.0 / p))


# ---------------------------------------------------------------------------
# EOC and reports
# ---------------------------------------------------------------------------
def eoc(errors, hs) -> list[float]:
    """``log(e_k / e_{k+1}) / log(h_k / h_{k+1})`` for consecutive levels."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if e.shape != h.shape or len(e) < 2:
        raise ValueError("need equal-length sequences of at least two entries")
    if np.any(e <= 0):
        raise ValueError("errors must be positive")
    if np.any(np.diff(h) >= 0):
        raise ValueError("h must be strictly decreasing")
    return list(np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:]))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10e}"
    return str(v)


@dataclass
class ExperimentReport:
    """Per-level rows with optional EOC columns and the run configuration."""

    experiment: str
    config: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    quantities: list = field(default_factory=list)
    eoc_of: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_row(self, level: int, h: float, dofs: int, **values) -> None:
        if self.rows and not h < self.rows[-1]["h"]:
            raise ValueError("h must be strictly decreasing across rows")
        for k in values:
            if k not in self.quantities:
                self.quantities.append(k)
        self.rows.append({"level": level, "h": float(h), "dofs": int(dofs), **values})

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    def eoc(self, name: str) -> list:
        """EOC of column ``name``; ``None`` before the first row or where undefined."""
        out = [None]
        for a, b in zip(self.rows[:-1], self.rows[1:]):
            ea, eb = a.get(name), b.get(name)
            if ea is None or eb is None or ea <= 0 or eb <= 0:
                out.append(None)
            else:
                out.append(math.log(ea / eb) / math.log(a["h"] / b["h"]))
        return out

    @property
    def columns(self) -> list[str]:
        return ["level", "h", "dofs", *self.quantities, *[f"eoc_{q}" for q in self.eoc_of]]

    def table(self) -> list[dict]:
        eocs = {q: self.eoc(q) for q in self.eoc_of}
        out = []
        for k, r in enumerate(self.rows):
            row = dict(r)
            for q in self.eoc_of:
                row[f"eoc_{q}"] = eocs[q][k]
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# experiment: {self.experiment}\n# version: {__version__}\n")
        for k in sorted(self.config):
            buf.write(f"# {k} = {self.config[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.table():
            w.writerow([_fmt(row.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            self.experiment: {
                "version": __version__,
                "config": self.config,
                "columns": self.columns,
                "rows": self.table(),
                "meta": self.meta,
            }
        }
        return json.dumps(doc, indent=2, sort_keys=True, default=float)

    def write(self, out_dir) -> tuple:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        pc, pj = d / f"{self.experiment}.csv", d / f"{self.experiment}.json"
        pc.write_text(self.to_csv())
        pj.write_text(self.to_json())
        return pc, pj

    def summary(self) -> str:
        cols = self.columns
        lines = ["  ".join(f"{c:>14s}" for c in cols)]
        for row in self.table():
            cells = []
            for c in cols:
                v = row.get(c)
                cells.append(f"{'-':>14s}" if v is None else (f"{v:>14d}" if isinstance(v, int) else f"{v:>14.6g}"))
            lines.append("  ".join(cells))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# gates
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Gate:
    ok: bool
    reason: str = ""

    def __bool__(self):
        return self.ok


def _is_interior_point_weight(w, domain, eps=1e-12) -> bool:
    red = as_distance_power(w)
    if red is None or red[0].segments:
        return False
    x0, x1, y0, y1 = domain
    return all(min(z[0] - x0, x1 - z[0], z[1] - y0, y1 - z[1]) > eps for z in red[0].points)


def _bounded_weight(w) -> bool:
    if isinstance(w, (Constant, Natterer)):
        return True
    if isinstance(w, Conjugate):
        return _bounded_weight(w.inner)
    return False


def condition_s(weight: WeightSpec | None, p: float = 2.0, domain=(0.0, 1.0, 0.0, 1.0)) -> Gate:
    """Implementable instance of the (p, weight) compatibility condition.

    Bounded weights bounded away from zero pass for every p.  Point-distance
    powers ``dist^alpha`` (d = 2, k = 0) are decided by exponent arithmetic:

    * p > 2: ``w in A_1``, i.e. ``alpha in (-2, 0]``;
    * p = 2: ``w in A_1`` or ``w^-1 in A_2(D) cap A_1``, i.e. ``alpha in (-2, 0]``
      or ``alpha in [0, 2)`` with the points interior;
    * p < 2: ``w' in A_p'(D) cap A_1`` with ``w' = dist^(alpha/(1-p))``.
    """
    if weight is None or _bounded_weight(weight):
        return Gate(True)
    red = as_distance_power(weight)
    if red is None or red[0].segments:
        return Gate(False, "only bounded and point-distance weights can be certified")
    alpha = red[1]
    if p > 2:
        if in_a1_range(alpha, 2, 0):
            return Gate(True)
        return Gate(False, f"p > 2 requires w in A_1: alpha must lie in (-2, 0], got {alpha:g}")
    if p == 2:
        if in_a1_range(alpha, 2, 0):
            return Gate(True)
        if in_a1_range(-alpha, 2, 0) and in_ap_range(-alpha, 2, 0, 2.0):
            if _is_interior_point_weight(weight, domain) and ap_restricted_check(Power(weight, -1.0), domain, eps=_collar(weight, domain)).ok:
                return Gate(True)
            return Gate(False, "w^-1 in A_2(D) needs the singular points in the interior")
        return Gate(False, f"p = 2 requires alpha in (-2, 2), got {alpha:g}")
    if p <= 1:
        return Gate(False, "p must exceed 1")
    beta = alpha / (1 - p)
    pp = p / (p - 1)
    if in_a1_range(beta, 2, 0) and in_ap_range(beta, 2, 0, pp) and _is_interior_point_weight(weight, domain):
        return Gate(True)
    return Gate(False, f"p < 2 requires w' = dist^{beta:g} in A_p'(D) cap A_1")


def _collar(w, domain) -> float:
    x0, x1, y0, y1 = domain
    red = as_distance_power(w)
    m = min(min(z[0] - x0, x1 - z[0], z[1] - y0, y1 - z[1]) for z in red[0].points)
    return float(min(m / 2, min(x1 - x0, y1 - y0) / 4))


def dirac_alpha_gate(alpha: float, d: int = 2) -> Gate:
    """Admissible weight exponents for a Dirac source: ``alpha in (d-2, 2)``."""
    lo, hi = d - 2, 2
    if lo < alpha < hi:
        return Gate(True)
    return Gate(False, f"alpha = {alpha:g} lies outside the admissible interval ({lo}, {hi})")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------
def _pair(pair) -> ElementPair:
    return ElementPair.parse(pair)


def _check_th(mesh, pair):
    if pair is ElementPair.TAYLOR_HOOD and not th_mesh_ok(mesh):
        raise GateError("Taylor-Hood needs every cell to have at least two interior edges (use criss-cross)")


def stokes_projection(system, exact: ExactSolution, degree: int = DEFAULT_DEGREE):
    from .solver import solve_saddle

    load = rhs_projection(system, exact.velocity_evaluator(), exact.pressure_evaluator(), degree,
                          singular_points=exact.singular_points)
    return solve_saddle(system, load)


def convergence_experiment(exact: ExactSolution, pair, meshes, degree: int = DEFAULT_DEGREE, config=None) -> ExperimentReport:
    """Stokes solve with the smooth forcing of ``exact``; H1/L2 velocity and L2 pressure errors."""
    from .solver import solve_saddle

    pair = _pair(pair)
    rep = ExperimentReport("convergence", dict(config or {}), eoc_of=["err_h1_u", "err_l2_u", "err_l2_p"])
    if exact.forcing is None:
        raise ValueError("exact solution has no smooth forcing")
    t0 = time.perf_counter()
    for k, mesh in enumerate(meshes):
        _check_th(mesh, pair)
        sys = assemble(mesh, pair)
        sol = solve_saddle(sys, rhs_regular(sys, exact.forcing, degree))
        u = velocity_field(sys.dofmap, sol.velocity)
        p = pressure_field(sys.dofmap, sol.pressure)
        ue, pe = exact.velocity_evaluator(), exact.pressure_evaluator()
        rep.add_row(
            k, mesh.h, sys.n_velocity + sys.n_pressure,
            err_h1_u=weighted_norm(u, order="gradient", minus=ue, degree=degree),
            err_l2_u=weighted_norm(u, minus=ue, degree=degree),
            err_l2_p=weighted_norm(p, minus=pe, degree=degree),
            residual=sol.residual,
        )
    rep.meta["elapsed"] = time.perf_counter() - t0
    return rep


def stability_experiment(exact: ExactSolution, pair, weight: WeightSpec | None, p: float, meshes,
                         force: bool = False, capture: bool = False, config=None) -> ExperimentReport:
    """Weighted stability ratio of the Stokes projection per level.

    ``rho = (|grad u_h|_w + |pi_h|_w) / (|grad u|_w + |pi|_w)``.  With
    ``capture=True`` the exact pair is replaced by its own projection on each
    level, which must give ``rho = 1``.
    """
    pair = _pair(pair)
    dom = meshes[0].domain or (0.0, 1.0, 0.0, 1.0)
    gate = condition_s(weight, p, dom)
    if not gate and not force:
        raise GateError(f"condition (S) fails: {gate.reason}")
    if not exact.solenoidal:
        raise GateError("the exact velocity must be solenoidal")
    rep = ExperimentReport("stability", dict(config or {}), eoc_of=[])
    rep.meta["gate"] = {"ok": gate.ok, "reason": gate.reason}
    for k, mesh in enumerate(meshes):
        _check_th(mesh, pair)
        sys = assemble(mesh, pair)
        sol = stokes_projection(sys, exact)
        uh = velocity_field(sys.dofmap, sol.velocity)
        ph = pressure_field(sys.dofmap, sol.pressure)
        if capture:
            from .solver import solve_saddle

            ue, pe = uh, ph
            sol = solve_saddle(sys, rhs_projection(sys, uh, ph))
            uh = velocity_field(sys.dofmap, sol.velocity)
            ph = pressure_field(sys.dofmap, sol.pressure)
        else:
            ue, pe = exact.velocity_evaluator(), exact.pressure_evaluator()
        kw = dict(weight=weight, p=p, mesh=mesh, singular_points=exact.singular_points)
        num = weighted_norm(uh, order="gradient", **kw) + weighted_norm(ph, **kw)
        den = weighted_norm(ue, order="gradient", **kw) + weighted_norm(pe, **kw)
        rep.add_row(k, mesh.h, sys.n_velocity + sys.n_pressure, rho=num / den, numerator=num, denominator=den)
    rho = rep.column("rho")
    rep.meta["rho_max"] = max(rho)
    rep.meta["rho_variation"] = (max(rho) - min(rho)) / max(rho)
    return rep


def best_approx_experiment(exact: ExactSolution, pair, weight: WeightSpec | None, p: float, meshes,
                           force: bool = False, config=None) -> ExperimentReport:
    """Projection error over quasi-interpolation error (an upper proxy for the best approximation)."""
    from .approximation import quasi_interpolate

    pair = _pair(pair)
    dom = meshes[0].domain or (0.0, 1.0, 0.0, 1.0)
    gate = condition_s(weight, p, dom)
    if not gate and not force:
        raise GateError(f"condition (S) fails: {gate.reason}")
    rep = ExperimentReport("best_approx", dict(config or {}), eoc_of=["proj_error"])
    for k, mesh in enumerate(meshes):
        _check_th(mesh, pair)
        sys = assemble(mesh, pair)
        sol = stokes_projection(sys, exact)
        uh = velocity_field(sys.dofmap, sol.velocity)
        ph = pressure_field(sys.dofmap, sol.pressure)
        ue, pe = exact.velocity_evaluator(), exact.pressure_evaluator()
        pu = quasi_interpolate(exact.velocity, mesh, "velocity")
        pp = quasi_interpolate(exact.pressure, mesh, "pressure")
        iu = velocity_field(sys.dofmap, p1_to_velocity(sys.dofmap, pu))
        ip = pressure_field(sys.dofmap, pp)
        kw = dict(weight=weight, p=p, mesh=mesh, singular_points=exact.singular_points)
        proj = weighted_norm(uh, order="gradient", minus=ue, **kw) + weighted_norm(ph, minus=pe, **kw)
        interp = weighted_norm(iu, order="gradient", minus=ue, **kw) + weighted_norm(ip, minus=pe, **kw)
        captured = proj <= 1e-12 * max(1.0, interp)
        rep.add_row(k, mesh.h, sys.n_velocity + sys.n_pressure, proj_error=proj, interp_error=interp,
                    ratio=0.0 if captured else proj / interp, exact_capture=int(captured))
    return rep


def cell_weight_measures(mesh: Mesh, weight: WeightSpec | None, degree: int = DEFAULT_DEGREE) -> np.ndarray:
    """``w(T)`` for every cell (graded quadrature on singular cells)."""
    if weight is None:
        return np.asarray(mesh.areas, dtype=float).copy()
    q = mesh_quadrature(mesh, degree, weight.singular_points)
    return q.cell_sums_full(weight(q.x))


def dirac_convergence_experiment(sources, pair, alpha: float, meshes, ref_extra: int = 2, force: bool = False,
                                 config=None, degree: int = DEFAULT_DEGREE) -> ExperimentReport:
    """Dirac-forced Stokes: L2 velocity error against a nested reference ``ref_extra`` levels finer.

    Also records ``|grad u_h|`` and ``|pi_h|`` in ``L^2(dist^alpha)``, the
    unweighted ``|grad u_h|`` (divergent negative control) and
    ``w(h) = max_T w(T)``.
    """
    from .solver import solve_saddle

    pair = _pair(pair)
    gate = dirac_alpha_gate(alpha)
    if not gate and not force:
        raise GateError(gate.reason)
    sources = [(tuple(map(float, z)), tuple(map(float, F))) for z, F in sources]
    zs = tuple(z for z, _ in sources)
    weight = DistPower(zs, alpha)
    ref_mesh = refine_times(meshes[-1], ref_extra)
    _check_th(ref_mesh, pair)
    t0 = time.perf_counter()
    ref_sys = assemble(ref_mesh, pair)
    ref = solve_saddle(ref_sys, rhs_dirac(ref_sys, sources))
    u_ref = velocity_field(ref_sys.dofmap, ref.velocity)
    rep = ExperimentReport("dirac", dict(config or {}), eoc_of=["err_l2_u"])
    rep.meta["reference"] = {"h": ref_mesh.h, "dofs": ref_sys.n_velocity + ref_sys.n_pressure,
                             "time": time.perf_counter() - t0}
    for k, mesh in enumerate(meshes):
        _check_th(mesh, pair)
        sys = assemble(mesh, pair)
        sol = solve_saddle(sys, rhs_dirac(sys, sources))
        uh = velocity_field(sys.dofmap, sol.velocity)
        ph = pressure_field(sys.dofmap, sol.pressure)
        err = weighted_norm(uh, mesh=ref_mesh, minus=u_ref, degree=degree, singular_points=zs)
        kw = dict(weight=weight, p=2.0, mesh=mesh)
        rep.add_row(
            k, mesh.h, sys.n_velocity + sys.n_pressure,
            err_l2_u=err,
            grad_u_weighted=weighted_norm(uh, order="gradient", **kw),
            p_weighted=weighted_norm(ph, **kw),
            grad_u_plain=weighted_norm(uh, order="gradient", mesh=mesh),
            omega_h=float(cell_weight_measures(mesh, weight).max()),
        )
    return rep


def green_decay_experiment(pair, zs, i: int, j: int, lam: float, kappa: float, meshes, ref_extra: int = 2,
                           config=None, degree: int = DEFAULT_DEGREE) -> ExperimentReport:
    """Weighted Green's-function error against a nested reference with the same regularized delta.

    ``q = max_z |sigma_z^(mu/2) grad(G_ref - G_h)|_{L^2} / h^(lam/2)`` with
    ``mu = 2 + lam``; ``q_plain`` drops the Natterer weight.  ``i``, ``j`` are 0-based.
    """
    from .assembly import build_regularized_delta
    from .solver import reference_green, solve_green

    pair = _pair(pair)
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    mu = 2.0 + lam
    rep = ExperimentReport("green", dict(config or {}), eoc_of=[])
    for k, mesh in enumerate(meshes):
        if kappa * mesh.h > mesh.diameter:
            raise GateError(f"kappa*h = {kappa * mesh.h:g} exceeds diam = {mesh.diameter:g}")
        _check_th(mesh, pair)
        sys = assemble(mesh, pair)
        fine = refine_times(mesh, ref_extra)
        fsys = assemble(fine, pair)
        q_w, q_p = 0.0, 0.0
        for z in zs:
            delta = build_regularized_delta(mesh, pair, z)
            g = solve_green(sys, i=i, j=j, delta=delta)
            gr = reference_green(fsys, delta, i, j)
            gh = velocity_field(sys.dofmap, g.solution.velocity)
            gref = velocity_field(fsys.dofmap, gr.solution.velocity)
            sigma_mu = _SigmaPower(Natterer(tuple(z), kappa, mesh.h), mu)
            ew = weighted_norm(gh, weight=sigma_mu, order="gradient", mesh=fine, minus=gref, degree=degree)
            ep = weighted_norm(gh, order="gradient", mesh=fine, minus=gref, degree=degree)
            q_w = max(q_w, ew / mesh.h ** (lam / 2))
            q_p = max(q_p, ep / mesh.h ** (lam / 2))
        rep.add_row(k, mesh.h, sys.n_velocity + sys.n_pressure, q=q_w, q_plain=q_p)
    return rep


@dataclass(frozen=True)
class _SigmaPower(WeightSpec):
    sigma: Natterer
    mu: float

    def _eval(self, x):
        return self.sigma._eval(x) ** self.mu


def infsup_experiment(pair, meshes, weight: WeightSpec | None = None, config=None) -> ExperimentReport:
    from .solver import infsup_beta

    pair = _pair(pair)
    rep = ExperimentReport("infsup", dict(config or {}), eoc_of=[])
    for k, mesh in enumerate(meshes):
        _check_th(mesh, pair)
        t0 = time.perf_counter()
        sys = assemble(mesh, pair, weight)
        beta = infsup_beta(system=sys)
        rep.add_row(k, mesh.h, sys.n_velocity + sys.n_pressure, beta=beta)
        rep.meta.setdefault("times", []).append(time.perf_counter() - t0)
    return rep
