"""Mini and Taylor-Hood finite element spaces on triangles.

Local bases are written in barycentric coordinates.  For every basis
function we return its value and its derivatives with respect to the three
barycentric coordinates; physical gradients follow from the cell's
``grad_lambda``.

Velocity dofs are laid out component-major: global index ``c * n_scalar + i``
for component ``c`` of scalar dof ``i``.  Scalar dofs are numbered vertices
first, then edges (Taylor-Hood) or cells (Mini bubbles).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Mesh
from .quadrature import Quadrature, barycentric_monomial_integral, vertex_midpoint_rule  # noqa: F401

#: value of l1*l2*l3 at the barycentre is 1/27
BUBBLE_SCALE = 27.0


class ElementPair(str, enum.Enum):
    MINI = "mini"
    TAYLOR_HOOD = "th"

    @classmethod
    def parse(cls, value) -> "ElementPair":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"mini": cls.MINI, "th": cls.TAYLOR_HOOD, "taylor-hood": cls.TAYLOR_HOOD, "p2p1": cls.TAYLOR_HOOD}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown element pair {value!r}; expected 'mini' or 'th'") from None

    @property
    def n_local(self) -> int:
        """Scalar velocity basis functions per cell."""
        return 4 if self is ElementPair.MINI else 6


# ---------------------------------------------------------------------------
# reference bases
# ---------------------------------------------------------------------------
def p1_basis(bary: np.ndarray):
    """Values (n, 3) and barycentric derivatives (n, 3, 3) of the P1 basis."""
    bary = np.atleast_2d(bary)
    n = len(bary)
    return bary.copy(), np.broadcast_to(np.eye(3), (n, 3, 3)).copy()


def p2_basis(bary: np.ndarray):
    """P2 Lagrange basis: 3 vertex functions, then 3 edge functions.

    Edge function k lives on the edge opposite vertex k.
    """
    lam = np.atleast_2d(bary)
    n = len(lam)
    val = np.empty((n, 6))
    der = np.zeros((n, 6, 3))
    for k in range(3):
        val[:, k] = lam[:, k] * (2 * lam[:, k] - 1)
        der[:, k, k] = 4 * lam[:, k] - 1
        a, b = (k + 1) % 3, (k + 2) % 3
        val[:, 3 + k] = 4 * lam[:, a] * lam[:, b]
        der[:, 3 + k, a] = 4 * lam[:, b]
        der[:, 3 + k, b] = 4 * lam[:, a]
    return val, der


def bubble(bary: np.ndarray):
    """Normalised bubble 27 l1 l2 l3: values (n,) and barycentric derivatives (n, 3)."""
    lam = np.atleast_2d(bary)
    val = BUBBLE_SCALE * lam[:, 0] * lam[:, 1] * lam[:, 2]
    der = BUBBLE_SCALE * np.stack(
        [lam[:, 1] * lam[:, 2], lam[:, 0] * lam[:, 2], lam[:, 0] * lam[:, 1]], axis=1
    )
    return val, der


def mini_basis(bary: np.ndarray):
    """P1 plus bubble: values (n, 4) and barycentric derivatives (n, 4, 3)."""
    v1, d1 = p1_basis(bary)
    vb, db = bubble(bary)
    return np.concatenate([v1, vb[:, None]], axis=1), np.concatenate([d1, db[:, None, :]], axis=1)


def velocity_basis(pair: ElementPair, bary: np.ndarray):
    return mini_basis(bary) if ElementPair.parse(pair) is ElementPair.MINI else p2_basis(bary)


def physical_gradients(dlam: np.ndarray, grad_lambda: np.ndarray) -> np.ndarray:
    """Map barycentric derivatives (n, nloc, 3) with per-point ``grad_lambda`` (n, 3, 2)."""
    return np.einsum("nlk,nkd->nld", dlam, grad_lambda)


# ---------------------------------------------------------------------------
# global dof maps
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering for a velocity/pressure pair on a mesh.

    Attributes
    ----------
    cell_dofs : (nc, nloc) scalar velocity dofs of every cell
    pressure_cell_dofs : (nc, 3) pressure dofs (the cell vertices)
    """

    mesh: Mesh
    pair: ElementPair

    @property
    def n_scalar(self) -> int:
        m = self.mesh
        return m.n_vertices + (m.n_cells if self.pair is ElementPair.MINI else m.n_edges)

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_vertices

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        m = self.mesh
        nv = m.n_vertices
        if self.pair is ElementPair.MINI:
            extra = (nv + np.arange(m.n_cells))[:, None]
        else:
            extra = nv + m.cell_edges
        out = np.concatenate([m.cells, extra], axis=1)
        out.setflags(write=False)
        return out

    @property
    def pressure_cell_dofs(self) -> np.ndarray:
        return self.mesh.cells

    @cached_property
    def scalar_boundary(self) -> np.ndarray:
        """Boolean mask over scalar velocity dofs lying on the boundary."""
        m = self.mesh
        flag = np.zeros(self.n_scalar, dtype=bool)
        flag[: m.n_vertices] = m.boundary_vertices
        if self.pair is ElementPair.TAYLOR_HOOD:
            flag[m.n_vertices :] = m.boundary_edges
        return flag

    @cached_property
    def velocity_boundary(self) -> np.ndarray:
        return np.concatenate([self.scalar_boundary, self.scalar_boundary])

    @cached_property
    def free_velocity(self) -> np.ndarray:
        return np.flatnonzero(~self.velocity_boundary)

    @cached_property
    def scalar_dof_points(self) -> np.ndarray:
        """Nodal point of every scalar velocity dof (bubbles: the barycentre)."""
        m = self.mesh
        if self.pair is ElementPair.MINI:
            extra = m.centroids
        else:
            extra = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
        return np.concatenate([m.vertices, extra])

    def velocity_cell_dofs(self, component: int) -> np.ndarray:
        return self.cell_dofs + component * self.n_scalar

    def split_velocity(self, coeffs: np.ndarray) -> np.ndarray:
        """(n_velocity,) -> (n_scalar, 2)."""
        return np.asarray(coeffs).reshape(2, self.n_scalar).T

    def join_velocity(self, scalar_pairs: np.ndarray) -> np.ndarray:
        """(n_scalar, 2) -> (n_velocity,)."""
        return np.asarray(scalar_pairs).T.reshape(-1).copy()


def make_space(mesh: Mesh, pair) -> DofMap:
    return DofMap(mesh, ElementPair.parse(pair))


def eval_basis(mesh: Mesh, pair, component: str, cell: int, bary):
    """Values and physical gradients of the local basis on ``cell`` at barycentric points.

    ``component`` is ``"velocity"`` (scalar velocity basis, applied per
    component) or ``"pressure"`` (P1).  Returns ``(values (n, nloc),
    gradients (n, nloc, 2))``.
    """
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    if np.any(bary < -1e-12) or not np.allclose(bary.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("barycentric coordinates must be nonnegative and sum to 1")
    if not mesh.areas[cell] > 0:
        raise ValueError("degenerate cell")
    if component == "velocity":
        val, der = velocity_basis(pair, bary)
    elif component == "pressure":
        val, der = p1_basis(bary)
    else:
        raise ValueError("component must be 'velocity' or 'pressure'")
    g = np.broadcast_to(mesh.grad_lambda[cell], (len(bary), 3, 2))
    return val, physical_gradients(der, g)


def bubble_cell_integral(area: float, normalized: bool = True) -> float:
    """Exact integral of the cell bubble over a triangle of the given area.

    ``l1 l2 l3`` integrates to ``|T|/60``; the normalised bubble to ``9|T|/20``.
    """
    base = barycentric_monomial_integral(1, 1, 1, area)
    return BUBBLE_SCALE * base if normalized else base


def p1_to_velocity(dofmap: DofMap, vertex_values: np.ndarray) -> np.ndarray:
    """Embed a continuous P1 vector field (nv, 2) into the velocity space of ``dofmap``.

    Taylor-Hood edge dofs take the average of the end points; Mini bubble
    coefficients are zero.
    """
    m = dofmap.mesh
    vv = np.asarray(vertex_values, dtype=float).reshape(m.n_vertices, -1)
    if dofmap.pair is ElementPair.MINI:
        extra = np.zeros((m.n_cells, vv.shape[1]))
    else:
        extra = 0.5 * (vv[m.edges[:, 0]] + vv[m.edges[:, 1]])
    scal = np.concatenate([vv, extra])
    return dofmap.join_velocity(scal) if scal.shape[1] == 2 else scal.ravel()
