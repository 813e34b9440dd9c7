"""P1 finite elements for 2D scalar diffusion and plane-strain elasticity.

Dirichlet conditions are handled by partitioning the unknowns into fixed and
free sets; boundary reactions (the multipliers of the equivalent constrained
formulation) are recovered afterwards as K*u - f on the fixed rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import TriMesh
from .sparse import CsrMatrix, from_triplets, matvec

THERMAL = "thermal"
ELASTICITY = "elasticity"


def lame_constants(e: float, nu: float) -> tuple[float, float]:
    """Lame parameters from Young modulus and Poisson ratio."""
    lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = e / (2.0 * (1.0 + nu))
    return lam, mu


@dataclass
class Physics:
    """Material model: one default coefficient plus per-element-tag overrides.

    Thermal coefficients are conductivities ``k``; elasticity coefficients are
    ``(E, nu)`` pairs.  ``source`` is a constant volumetric source (scalar or
    2-vector body force).
    """

    kind: str
    default: float | tuple[float, float]
    coeffs: dict[str, float | tuple[float, float]] = field(default_factory=dict)
    source: float | tuple[float, float] = 0.0

    def __post_init__(self) -> None:
        if self.kind not in (THERMAL, ELASTICITY):
            raise ValueError(f"unknown physics kind {self.kind!r}")
        for c in [self.default, *self.coeffs.values()]:
            if self.kind == THERMAL:
                if not np.isscalar(c) or c <= 0:
                    raise ValueError("conductivity must be a positive scalar")
            else:
                e, nu = c
                if e <= 0 or not (0.0 <= nu < 0.5):
                    raise ValueError("need E > 0 and 0 <= nu < 0.5")

    @property
    def dofs_per_node(self) -> int:
        return 1 if self.kind == THERMAL else 2

    def source_vector(self) -> np.ndarray:
        s = np.atleast_1d(np.asarray(self.source, dtype=float))
        if s.size != self.dofs_per_node:
            raise ValueError("source has wrong number of components")
        return s

    def element_coeffs(self, m: TriMesh) -> list:
        """Per-element coefficient, default overridden by tagged regions."""
        out = [self.default] * m.n_tris
        for tag, c in self.coeffs.items():
            if tag not in m.elem_tags:
                raise KeyError(f"coefficient tag {tag!r} not present in mesh")
            for e in m.elem_tags[tag]:
                out[e] = c
        return out


def _p1_gradients(coords: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    x, y = coords[:, 0], coords[:, 1]
    area = 0.5 * ((x[1] - x[0]) * (y[2] - y[0]) - (y[1] - y[0]) * (x[2] - x[0]))
    if area <= 0.0:
        raise ValueError("degenerate or negatively oriented triangle")
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / (2.0 * area)
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / (2.0 * area)
    return area, b, c


def element_stiffness(coords: np.ndarray, phys: Physics, coeff) -> np.ndarray:
    """Element stiffness for one triangle (3x3 thermal, 6x6 elasticity)."""
    area, b, c = _p1_gradients(np.asarray(coords, dtype=float))
    if phys.kind == THERMAL:
        return coeff * area * (np.outer(b, b) + np.outer(c, c))
    lam, mu = lame_constants(*coeff)
    d = np.array([[lam + 2 * mu, lam, 0.0],
                  [lam, lam + 2 * mu, 0.0],
                  [0.0, 0.0, mu]])
    bm = np.zeros((3, 6))
    bm[0, 0::2] = b
    bm[1, 1::2] = c
    bm[2, 0::2] = c
    bm[2, 1::2] = b
    return area * bm.T @ d @ bm


def assemble(m: TriMesh, phys: Physics,
             elems: np.ndarray | None = None) -> tuple[CsrMatrix, np.ndarray]:
    """Assemble the stiffness matrix and consistent load vector.

    ``elems`` restricts assembly to an element subset (still on the full dof
    numbering), which is how the unassembled complement-zone operator is
    obtained.
    """
    dpn = phys.dofs_per_node
    ndof = dpn * m.n_nodes
    coeffs = phys.element_coeffs(m)
    src = phys.source_vector()

    rows, cols, vals = [], [], []
    f = np.zeros(ndof)
    for e in (range(m.n_tris) if elems is None else elems):
        conn = m.tris[e]
        ke = element_stiffness(m.nodes[conn], phys, coeffs[e])
        dofs = (dpn * conn[:, None] + np.arange(dpn)[None, :]).ravel()
        rows.append(np.repeat(dofs, dofs.size))
        cols.append(np.tile(dofs, dofs.size))
        vals.append(ke.ravel())
        e1 = m.nodes[conn[1]] - m.nodes[conn[0]]
        e2 = m.nodes[conn[2]] - m.nodes[conn[0]]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        for local, n in enumerate(conn):
            f[dpn * n:dpn * n + dpn] += src * area / 3.0

    if not rows:
        return from_triplets(ndof, []), f
    entries = np.column_stack([np.concatenate(rows), np.concatenate(cols),
                               np.concatenate(vals)])
    return from_triplets(ndof, entries), f


def node_dofs(nodes: np.ndarray, dofs_per_node: int) -> np.ndarray:
    """Dof indices of a node set, node-major then component."""
    nodes = np.asarray(nodes, dtype=np.int64)
    return (dofs_per_node * nodes[:, None]
            + np.arange(dofs_per_node)[None, :]).ravel()


@dataclass
class DofMap:
    """Partition of the dofs of one mesh into Dirichlet-fixed and free sets."""

    n_nodes: int
    dofs_per_node: int
    fixed_dofs: np.ndarray
    free_dofs: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.dofs_per_node


def build_dofmap(m: TriMesh, dirichlet_nodes: np.ndarray,
                 dofs_per_node: int) -> DofMap:
    ndof = dofs_per_node * m.n_nodes
    fixed = np.unique(node_dofs(np.unique(dirichlet_nodes), dofs_per_node)) \
        if len(dirichlet_nodes) else np.zeros(0, dtype=np.int64)
    mask = np.ones(ndof, dtype=bool)
    mask[fixed] = False
    return DofMap(n_nodes=m.n_nodes, dofs_per_node=dofs_per_node,
                  fixed_dofs=fixed, free_dofs=np.flatnonzero(mask))


def split_dirichlet(k: CsrMatrix, f: np.ndarray, dm: DofMap, g: np.ndarray
                    ) -> tuple[CsrMatrix, np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Restrict K u = f to the free dofs given fixed values ``g``.

    Returns the free-block matrix, the adjusted right-hand side, and a lift
    mapping a free-dof solution back to a full vector.
    """
    if len(g) != len(dm.fixed_dofs) or len(f) != dm.n_dofs:
        raise ValueError("dimension mismatch in Dirichlet split")
    a = k.to_scipy()
    free, fixed = dm.free_dofs, dm.fixed_dofs
    kff = a[free][:, free]
    rhs = f[free] - (a[free][:, fixed] @ g if len(fixed) else 0.0)

    def lift(u_free: np.ndarray) -> np.ndarray:
        full = np.empty(dm.n_dofs)
        full[free] = u_free
        full[fixed] = g
        return full

    from .sparse import from_scipy
    return from_scipy(kff), np.asarray(rhs, dtype=float), lift


def reaction(k: CsrMatrix, f: np.ndarray, u: np.ndarray,
             nodes: np.ndarray, dm: DofMap) -> np.ndarray:
    """Nodal reactions (K u - f) on the dofs of ``nodes``.

    For a constrained solve this recovers the Dirichlet multipliers without
    ever forming the saddle-point system.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) and nodes.max() >= dm.n_nodes:
        raise IndexError("node outside mesh")
    res = matvec(k, u) - f
    return res[node_dofs(nodes, dm.dofs_per_node)]
