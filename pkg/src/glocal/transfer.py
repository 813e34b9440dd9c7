"""Interface transfer operators: traces, extensions, assembly, interpolation.

Vectors "on an interface" are flat dof vectors ordered node-major (all
components of the first interface node, then the second, ...).  Coarse-fine
matching is done by curvilinear arc coordinate along the shared polyline,
never by nearest-neighbor search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import InterfaceDesc

_ARC_RTOL = 1e-12


@dataclass
class TraceMap:
    """Interface dofs in volume numbering; trace gathers, transpose scatters."""

    domain_dofs: np.ndarray

    def __post_init__(self) -> None:
        if len(np.unique(self.domain_dofs)) != len(self.domain_dofs):
            raise ValueError("trace dofs contain duplicates")

    @property
    def size(self) -> int:
        return len(self.domain_dofs)


def trace(u: np.ndarray, t: TraceMap) -> np.ndarray:
    return np.asarray(u)[t.domain_dofs]


def extend_by_zero(v: np.ndarray, t: TraceMap, n: int) -> np.ndarray:
    if len(v) != t.size:
        raise ValueError("interface vector length mismatch")
    out = np.zeros(n)
    out[t.domain_dofs] = v
    return out


@dataclass
class AssemblyMap:
    """Injection of one subdomain's interface dofs into the global interface."""

    local_to_global: np.ndarray

    def __post_init__(self) -> None:
        if len(np.unique(self.local_to_global)) != len(self.local_to_global):
            raise ValueError("assembly map not injective")


def assemble_to_global(v_s: np.ndarray, a: AssemblyMap,
                       acc: np.ndarray) -> np.ndarray:
    """Accumulate a local interface vector into the global one (in place)."""
    if len(v_s) != len(a.local_to_global):
        raise ValueError("local interface vector length mismatch")
    np.add.at(acc, a.local_to_global, v_s)
    return acc


@dataclass
class InterpOp:
    """Sparse coarse-to-fine interface interpolation; rows sum to one."""

    rows: list                      # per fine dof: list of (coarse dof, weight)
    n_cols: int
    _mat: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def matrix(self) -> sp.csr_matrix:
        if self._mat is None:
            ii, jj, ww = [], [], []
            for i, row in enumerate(self.rows):
                for j, w in row:
                    ii.append(i)
                    jj.append(j)
                    ww.append(w)
            self._mat = sp.csr_matrix((ww, (ii, jj)),
                                      shape=(len(self.rows), self.n_cols))
        return self._mat


def identity_interp(n: int) -> InterpOp:
    return InterpOp(rows=[[(i, 1.0)] for i in range(n)], n_cols=n)


def build_interp(coarse: InterfaceDesc, fine: InterfaceDesc,
                 dofs_per_node: int = 1) -> InterpOp:
    """Linear interpolation from coarse to fine interface nodes by arc coordinate.

    Coincident nodes get weight one; other fine nodes are interpolated between
    their bracketing coarse nodes.  The fine arc range must equal the coarse
    one and every fine node must fall inside it.
    """
    ca, fa = coarse.arc_coords, fine.arc_coords
    span = ca[-1] - ca[0]
    tol = _ARC_RTOL * max(span, 1.0)
    if abs(ca[0] - fa[0]) > tol or abs(ca[-1] - fa[-1]) > tol:
        raise ValueError("fine interface arc range differs from coarse one")

    node_rows = []
    for a in fa:
        if a < ca[0] - tol or a > ca[-1] + tol:
            raise ValueError("fine interface node outside coarse arc range")
        k = int(np.searchsorted(ca, a))
        if k < len(ca) and abs(ca[k] - a) <= tol:
            node_rows.append([(k, 1.0)])
        elif k > 0 and abs(ca[k - 1] - a) <= tol:
            node_rows.append([(k - 1, 1.0)])
        else:
            k = min(max(k, 1), len(ca) - 1)
            t = (a - ca[k - 1]) / (ca[k] - ca[k - 1])
            node_rows.append([(k - 1, 1.0 - t), (k, t)])

    rows = [[(dofs_per_node * j + c, w) for j, w in row]
            for row in node_rows for c in range(dofs_per_node)]
    return InterpOp(rows=rows, n_cols=dofs_per_node * len(ca))


def interp_apply(j: InterpOp, v_coarse: np.ndarray) -> np.ndarray:
    return j.matrix() @ np.asarray(v_coarse, dtype=float)


def interp_transpose_apply(j: InterpOp, w_fine: np.ndarray) -> np.ndarray:
    return j.matrix().T @ np.asarray(w_fine, dtype=float)
