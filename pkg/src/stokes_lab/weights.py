"""Muckenhoupt weights: specification, evaluation, integration and diagnostics.

A weight is described by an immutable :class:`WeightSpec` tree (constant,
distance power, Natterer weight, conjugate, power) that evaluates on arrays
of points.  Integrals over cells and other simple regions resolve point
singularities with geometrically graded quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quadrature import (
    DEFAULT_GRADING_LEVELS,
    _radial_rule,
    collapsed_gauss,
    graded_triangle_rule,
    polygon_fan_rule,
    triangle_area,
)


class WeightSingularityError(ValueError):
    """Evaluation of a negative distance power on its singular set."""


class NonIntegrableWeight(ArithmeticError):
    """A weight (or its conjugate) is not locally integrable on a sampled region."""


# ---------------------------------------------------------------------------
# specifications
# ---------------------------------------------------------------------------
class WeightSpec:
    """Base class; subclasses are frozen dataclasses."""

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        out = self._eval(np.atleast_2d(x))
        return float(out[0]) if scalar else out

    def _eval(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def singular_points(self) -> np.ndarray:
        """Points at which the weight may vanish or blow up, shape (k, 2)."""
        return np.zeros((0, 2))

    def conjugate(self, p: float) -> "WeightSpec":
        return Conjugate(self, p)


@dataclass(frozen=True)
class Constant(WeightSpec):
    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("constant weight must be positive")

    def _eval(self, x):
        return np.full(len(x), float(self.c))

    def __str__(self):
        return f"const:{self.c:g}"


def _point_segment_distance(x, a, b):
    ab = b - a
    t = np.clip(((x - a) @ ab) / max(float(ab @ ab), 1e-300), 0.0, 1.0)
    return np.linalg.norm(x - (a + t[:, None] * ab), axis=1)


@dataclass(frozen=True)
class DistPower(WeightSpec):
    """``dist(x, K)^alpha`` for K a finite set of points and/or segments."""

    points: tuple = ()
    alpha: float = 1.0
    segments: tuple = ()

    def __post_init__(self):
        pts = tuple(tuple(map(float, p)) for p in self.points)
        segs = tuple(tuple(tuple(map(float, q)) for q in s) for s in self.segments)
        if not pts and not segs:
            raise ValueError("distance weight needs at least one point or segment")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "alpha", float(self.alpha))

    def distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = np.full(len(x), np.inf)
        for p in self.points:
            d = np.minimum(d, np.linalg.norm(x - np.asarray(p), axis=1))
        for a, b in self.segments:
            d = np.minimum(d, _point_segment_distance(x, np.asarray(a), np.asarray(b)))
        return d

    def _eval(self, x):
        d = self.distance(x)
        if self.alpha < 0 and np.any(d == 0):
            raise WeightSingularityError("negative distance power evaluated on its singular set")
        if self.alpha == 0:
            return np.ones(len(x))
        return d**self.alpha

    @property
    def singular_points(self):
        return np.array(self.points, dtype=float).reshape(-1, 2)

    def __str__(self):
        z = ";".join(f"{p[0]:g},{p[1]:g}" for p in self.points)
        return f"dist:{z}:{self.alpha:g}"


@dataclass(frozen=True)
class Natterer(WeightSpec):
    """``sigma_y(x) = (|x - y|^2 + (kappa h)^2)^(1/2)``."""

    y: tuple = (0.5, 0.5)
    kappa: float = 2.0
    h: float = 1.0

    def __post_init__(self):
        if not self.kappa > 1:
            raise ValueError("kappa must exceed 1")
        if not self.h > 0:
            raise ValueError("h must be positive")
        object.__setattr__(self, "y", tuple(map(float, self.y)))

    def _eval(self, x):
        r2 = np.sum((x - np.asarray(self.y)) ** 2, axis=1)
        return np.sqrt(r2 + (self.kappa * self.h) ** 2)

    def __str__(self):
        return f"natterer:{self.y[0]:g},{self.y[1]:g}:{self.kappa:g}"


@dataclass(frozen=True)
class Conjugate(WeightSpec):
    """``w^(1/(1-p))``, the weight dual to ``w`` in the A_p pairing."""

    inner: WeightSpec
    p: float = 2.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("conjugate exponent requires p > 1")

    def _eval(self, x):
        return self.inner._eval(x) ** (1.0 / (1.0 - self.p))

    @property
    def singular_points(self):
        return self.inner.singular_points

    def __str__(self):
        return f"conj:{self.inner}:{self.p:g}"


@dataclass(frozen=True)
class Power(WeightSpec):
    inner: WeightSpec
    s: float = 1.0

    def _eval(self, x):
        return self.inner._eval(x) ** self.s

    @property
    def singular_points(self):
        return self.inner.singular_points

    def __str__(self):
        return f"pow:{self.inner}:{self.s:g}"


def evaluate(w: WeightSpec, x):
    """Pointwise value(s) of ``w``; ``x`` is a point or an (n, 2) array."""
    return w(x)


def conjugate(w: WeightSpec, p: float) -> WeightSpec:
    return Conjugate(w, p)


def holder_conjugate(p: float) -> float:
    return p / (p - 1.0)


def as_distance_power(w: WeightSpec):
    """Reduce ``w`` to ``(DistPower, exponent)`` when it is a power of a distance."""
    if isinstance(w, DistPower):
        return w, w.alpha
    if isinstance(w, Conjugate):
        inner = as_distance_power(w.inner)
        if inner is not None:
            return inner[0], inner[1] / (1.0 - w.p)
    if isinstance(w, Power):
        inner = as_distance_power(w.inner)
        if inner is not None:
            return inner[0], inner[1] * w.s
    return None


def parse_weight(spec: str, h: float | None = None) -> WeightSpec:
    """Parse ``const:<c>``, ``dist:<x>,<y>[;<x>,<y>...]:<alpha>``,
    ``natterer:<x>,<y>:<kappa>[:<h>]`` or ``conj:<spec>:<p>``.
    """
    spec = spec.strip()
    kind, _, rest = spec.partition(":")
    try:
        if kind == "const":
            return Constant(float(rest))
        if kind == "dist":
            pts, alpha = rest.rsplit(":", 1)
            points = [tuple(float(t) for t in p.split(",")) for p in pts.split(";")]
            if any(len(p) != 2 for p in points):
                raise ValueError("points need two coordinates")
            return DistPower(tuple(points), float(alpha))
        if kind == "natterer":
            parts = rest.split(":")
            y = tuple(float(t) for t in parts[0].split(","))
            kappa = float(parts[1])
            hh = float(parts[2]) if len(parts) > 2 else h
            if hh is None:
                raise ValueError("natterer weight needs a mesh size h")
            return Natterer(y, kappa, hh)
        if kind == "conj":
            inner, p = rest.rsplit(":", 1)
            return Conjugate(parse_weight(inner, h), float(p))
    except (ValueError, IndexError) as exc:
        raise ValueError(f"cannot parse weight spec {spec!r}: {exc}") from None
    raise ValueError(f"cannot parse weight spec {spec!r}: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# A_p arithmetic
# ---------------------------------------------------------------------------
def ap_admissible_range(d: int, k: int, p: float) -> tuple[float, float]:
    """Open interval of exponents alpha with dist(., K)^alpha in A_p, K of dimension k."""
    if not (isinstance(d, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise ValueError("d and k must be integers")
    if not 0 <= k < d:
        raise ValueError("need 0 <= k < d")
    if not 1 < p < math.inf:
        raise ValueError("need p in (1, inf)")
    return (-(d - k), (d - k) * (p - 1))


def in_ap_range(alpha: float, d: int, k: int, p: float) -> bool:
    lo, hi = ap_admissible_range(d, k, p)
    return lo < alpha < hi


def in_a1_range(alpha: float, d: int, k: int) -> bool:
    """dist(., K)^alpha is in A_1 iff -(d-k) < alpha <= 0."""
    return -(d - k) < alpha <= 0


# ---------------------------------------------------------------------------
# integration over regions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(map(float, self.center)))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


@dataclass(frozen=True)
class Square:
    center: tuple
    side: float

    @property
    def corners(self) -> np.ndarray:
        cx, cy = self.center
        a = self.side / 2
        return np.array([[cx - a, cy - a], [cx + a, cy - a], [cx + a, cy + a], [cx - a, cy + a]])

    @property
    def area(self) -> float:
        return self.side**2


def _ball_rule(ball: Ball, s=None, n: int = 24, levels: int = DEFAULT_GRADING_LEVELS):
    """Polar rule on a ball, centred at ``s`` (a point inside) or the ball centre.

    Radial direction: the graded radial rule of the quadrature module;
    angular direction: trapezoid (spectral for smooth periodic integrands).
    """
    c = np.asarray(ball.center)
    pole = c if s is None else np.asarray(s, dtype=float)
    n_theta = 4 * n
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    u = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    dvec = pole - c
    du = u @ dvec
    rho = -du + np.sqrt(np.maximum(du**2 - dvec @ dvec + ball.radius**2, 0.0))
    t, wt = _radial_rule(2 * n - 2, levels)  # n Gauss points per layer, weights include t
    r = t[None, :] * rho[:, None]
    x = pole[None, None, :] + r[..., None] * u[:, None, :]
    w = (2 * np.pi / n_theta) * wt[None, :] * rho[:, None] ** 2
    return x.reshape(-1, 2), w.ravel()


def _singular_in(w: WeightSpec, contains) -> np.ndarray | None:
    for s in w.singular_points:
        if contains(s):
            return s
    return None


def _tri_contains(tri, s, tol=1e-12) -> bool:
    tri = np.asarray(tri, dtype=float)
    a, b, c = tri
    det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    l1 = ((s[0] - a[0]) * (c[1] - a[1]) - (s[1] - a[1]) * (c[0] - a[0])) / det
    l2 = ((b[0] - a[0]) * (s[1] - a[1]) - (b[1] - a[1]) * (s[0] - a[0])) / det
    return min(l1, l2, 1 - l1 - l2) >= -tol


def _check_integrable(w: WeightSpec, d: int = 2):
    red = as_distance_power(w)
    if red is not None and red[0].points and red[1] <= -d:
        raise NonIntegrableWeight(
            f"distance power with exponent {red[1]:g} <= -{d} is not locally integrable"
        )


def _region_rule(w: WeightSpec, region, quad_order: int, levels: int):
    if isinstance(region, Ball):
        s = _singular_in(w, lambda z: np.linalg.norm(z - np.asarray(region.center)) < region.radius)
        return _ball_rule(region, s, n=max(4, quad_order), levels=levels)
    if isinstance(region, Square):
        corners = region.corners
        s = _singular_in(
            w, lambda z: np.all(z >= corners[0] - 1e-14) and np.all(z <= corners[2] + 1e-14)
        )
        if s is None:
            g, wg = np.polynomial.legendre.leggauss(max(4, quad_order))
            a = region.side / 2
            X, Y = np.meshgrid(region.center[0] + a * g, region.center[1] + a * g, indexing="ij")
            W = np.outer(wg, wg) * a * a
            return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()
        return polygon_fan_rule(corners, s, quad_order, levels)
    tri = np.asarray(region, dtype=float)
    if tri.shape != (3, 2):
        raise TypeError("region must be a Ball, a Square, or a (3, 2) triangle")
    s = _singular_in(w, lambda z: _tri_contains(tri, z))
    if s is None:
        q = collapsed_gauss(quad_order)
        return q.bary @ tri, 2.0 * triangle_area(tri) * q.weights
    return graded_triangle_rule(tri, s, quad_order, levels)


def weight_measure(w: WeightSpec, region, quad_order: int = 8, levels: int = DEFAULT_GRADING_LEVELS,
                   rtol: float = 5e-2) -> float:
    """``w(E) = integral of w over E`` for a cell given as (3, 2) vertices or a :class:`Ball`/:class:`Square` region.

    Regions containing a singular point use graded quadrature; the result is
    compared with a two-levels-coarser grading and a
    :class:`NonIntegrableWeight` is raised if they disagree by more than ``rtol``.
    """
    _check_integrable(w)
    x, wt = _region_rule(w, region, quad_order, levels)
    val = float(np.dot(wt, w(x)))
    s_present = len(w.singular_points) and levels > 2
    if s_present:
        x2, wt2 = _region_rule(w, region, quad_order, levels - 2)
        val2 = float(np.dot(wt2, w(x2)))
        if abs(val - val2) > rtol * abs(val):
            raise NonIntegrableWeight("weight integral does not converge under graded subdivision")
    return val


def region_average(w: WeightSpec, region, quad_order: int = 8, levels: int = DEFAULT_GRADING_LEVELS) -> float:
    x, wt = _region_rule(w, region, quad_order, levels)
    return float(np.dot(wt, w(x)) / wt.sum())


# ---------------------------------------------------------------------------
# A_p and A_1 diagnostics
# ---------------------------------------------------------------------------
def default_ball_family(w: WeightSpec, domain=(0.0, 1.0, 0.0, 1.0), h: float = 1 / 16, grid: int = 5) -> list[Ball]:
    """Balls centred on the singular set and on a coarse grid; radii geometric from h to diam."""
    x0, x1, y0, y1 = domain
    diam = math.hypot(x1 - x0, y1 - y0)
    radii = []
    r = h
    while r <= diam * (1 + 1e-12):
        radii.append(r)
        r *= 2
    gx = x0 + (x1 - x0) * (np.arange(grid) + 0.5) / grid
    gy = y0 + (y1 - y0) * (np.arange(grid) + 0.5) / grid
    centres = [tuple(p) for p in w.singular_points] + [(a, b) for a in gx for b in gy]
    return [Ball(c, r) for c in centres for r in radii]


def ap_ball_characteristics(w: WeightSpec, p: float, balls, quad: int = 16) -> np.ndarray:
    """Per-ball value of (avg w) (avg w^(1/(1-p)))^(p-1)."""
    wc = Conjugate(w, p)
    out = []
    for ball in balls:
        s = _singular_in(w, lambda z: np.linalg.norm(z - np.asarray(ball.center)) < ball.radius)
        x, wt = _ball_rule(ball, s, n=quad)
        area = wt.sum()
        out.append((np.dot(wt, w(x)) / area) * (np.dot(wt, wc(x)) / area) ** (p - 1))
    return np.array(out)


def estimate_ap_constant(w: WeightSpec, p: float, balls=None, quad: int = 16, rtol: float = 0.25) -> float:
    """Lower bound for [w]_{A_p}: the maximum of the ball characteristic over ``balls``.

    Raises :class:`NonIntegrableWeight` when ``w`` or its conjugate is not
    locally integrable on a sampled ball (detected analytically for distance
    powers, and by comparing against a half-resolution sample otherwise).
    """
    if not 1 < p < math.inf:
        raise ValueError("need p in (1, inf)")
    if balls is None:
        balls = default_ball_family(w)
    _check_integrable(w)
    _check_integrable(Conjugate(w, p))
    fine = ap_ball_characteristics(w, p, balls, quad)
    coarse = ap_ball_characteristics(w, p, balls, max(4, quad // 2))
    if not np.all(np.isfinite(fine)) or np.any(np.abs(fine - coarse) > rtol * np.abs(fine)):
        raise NonIntegrableWeight("ball averages diverge under refinement of the sampling")
    return float(fine.max())


def approx_maximal(w: WeightSpec, x, side_lengths, quad_order: int = 8) -> float:
    """Max over centred squares of the given side lengths of the average of |w|.

    A lower bound for the (uncentred) Hardy-Littlewood maximal function.
    """
    x = tuple(map(float, x))
    best = 0.0
    absw = _Abs(w)
    for s in side_lengths:
        best = max(best, region_average(absw, Square(x, float(s)), quad_order))
    return best


@dataclass(frozen=True)
class _Abs(WeightSpec):
    inner: WeightSpec

    def _eval(self, x):
        return np.abs(self.inner._eval(x))

    @property
    def singular_points(self):
        return self.inner.singular_points


def natterer_integral(y, kappa: float, h: float, lam: float, mesh, degree: int = 12) -> float:
    """Integral over the mesh domain of sigma_y^(-d-lam)."""
    from .quadrature import mesh_quadrature

    q = mesh_quadrature(mesh, degree)
    sigma = Natterer(tuple(y), kappa, h)
    return q.integrate(sigma(q.x) ** (-2.0 - lam))


def natterer_integral_ratio(lam: float, kappa: float, meshes, ys=None, R: float | None = None) -> list[float]:
    """Per mesh: max over ``ys`` of (integral of sigma_y^(-2-lam)) / h^(-lam)."""
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    out = []
    for mesh in meshes:
        RR = mesh.diameter if R is None else R
        if kappa * mesh.h > RR:
            raise ValueError(f"kappa*h = {kappa * mesh.h:g} exceeds R = {RR:g}")
        if ys is None:
            x0, x1, y0, y1 = mesh.domain
            pts = [((x0 + x1) / 2, (y0 + y1) / 2), (x0, y0), ((x0 + x1) / 2, y0), (x0 + (x1 - x0) / 4, y0 + 3 * (y1 - y0) / 4)]
        else:
            pts = ys
        vals = [natterer_integral(y, kappa, mesh.h, lam, mesh) * mesh.h**lam for y in pts]
        out.append(max(vals))
    return out


def embedding_condition_ratio(w: WeightSpec, p: float, x, r: float, R: float, d: int = 2) -> float:
    """(r/R)^(p+d) w(B(x,R)) / w(B(x,r))."""
    if not 0 < r <= R:
        raise ValueError("need 0 < r <= R")
    big = weight_measure(w, Ball(x, R))
    small = weight_measure(w, Ball(x, r))
    return (r / R) ** (p + d) * big / small


@dataclass(frozen=True)
class RestrictedCheck:
    ok: bool
    omega_l: float
    reason: str = ""

    def __bool__(self):
        return self.ok


def _dist_to_rect_boundary(z, domain) -> float:
    x0, x1, y0, y1 = domain
    return float(min(z[0] - x0, x1 - z[0], z[1] - y0, y1 - z[1]))


def ap_restricted_check(w: WeightSpec, domain=(0.0, 1.0, 0.0, 1.0), eps: float = 0.1, n: int = 64) -> RestrictedCheck:
    """Sample the boundary collar {dist(x, boundary) < eps} and test the A_p(D) conditions."""
    x0, x1, y0, y1 = domain
    if not 0 < eps < min(x1 - x0, y1 - y0) / 2:
        raise ValueError("eps must be positive and smaller than the domain inradius")
    for z in w.singular_points:
        if _dist_to_rect_boundary(z, domain) <= eps:
            return RestrictedCheck(False, 0.0, f"singular point {tuple(z)} lies in the closed collar")
    red = as_distance_power(w)
    if red is not None:
        for a, b in red[0].segments:
            for t in np.linspace(0, 1, 65):
                z = (1 - t) * np.asarray(a) + t * np.asarray(b)
                if _dist_to_rect_boundary(z, domain) <= eps:
                    return RestrictedCheck(False, 0.0, "singular segment meets the closed collar")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    dist = np.minimum.reduce([pts[:, 0] - x0, x1 - pts[:, 0], pts[:, 1] - y0, y1 - pts[:, 1]])
    collar = pts[dist <= eps]
    try:
        vals = w(collar)
    except WeightSingularityError:
        return RestrictedCheck(False, 0.0, "weight is singular in the collar")
    if not np.all(np.isfinite(vals)):
        return RestrictedCheck(False, 0.0, "weight is not finite in the collar")
    lo = float(vals.min())
    if lo <= 0:
        return RestrictedCheck(False, lo, "weight vanishes in the collar")
    return RestrictedCheck(True, lo)
