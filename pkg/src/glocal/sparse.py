"""Sparse symmetric linear algebra: CSR assembly and direct Cholesky solves.

Every operator in the coupling is factored once and solved against many
right-hand sides, so a direct factorization with a fill-reducing (reverse
Cuthill-McKee) ordering is used throughout.  The factorization is backed by
SuperLU restricted to the natural ordering with diagonal pivoting, which on
an SPD matrix is exactly the Cholesky factorization L*L^T up to a diagonal
scaling; the scaled L is exposed for verification.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu


class SingularMatrixError(RuntimeError):
    """Matrix is singular or indefinite (typically: missing Dirichlet conditions)."""


@dataclass
class CsrMatrix:
    """Symmetric sparse matrix in CSR form."""

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    _scipy: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def to_scipy(self) -> sp.csr_matrix:
        if self._scipy is None:
            self._scipy = sp.csr_matrix(
                (self.values, self.col_idx, self.row_ptr), shape=(self.n, self.n))
        return self._scipy

    @property
    def nnz(self) -> int:
        return len(self.values)

    def validate(self) -> None:
        if len(self.row_ptr) != self.n + 1 or np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("malformed row_ptr")
        for i in range(self.n):
            cols = self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]
            if np.any(np.diff(cols) <= 0):
                raise ValueError(f"row {i} columns not sorted/unique")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite matrix values")
        a = self.to_scipy()
        asym = abs(a - a.T)
        if asym.nnz and asym.max() > 1e-12 * max(abs(a).max(), 1.0):
            raise ValueError("matrix not symmetric")


def from_scipy(a: sp.spmatrix) -> CsrMatrix:
    a = sp.csr_matrix(a)
    a.sum_duplicates()
    a.sort_indices()
    return CsrMatrix(n=a.shape[0], row_ptr=a.indptr.copy(),
                     col_idx=a.indices.copy(), values=a.data.astype(float))


def from_triplets(n: int, entries) -> CsrMatrix:
    """Build an n x n CSR matrix from (i, j, value) triplets; duplicates sum."""
    if len(entries) == 0:
        return CsrMatrix(n=n, row_ptr=np.zeros(n + 1, dtype=np.int64),
                         col_idx=np.zeros(0, dtype=np.int64),
                         values=np.zeros(0))
    arr = np.asarray(entries, dtype=float)
    rows = arr[:, 0].astype(np.int64)
    cols = arr[:, 1].astype(np.int64)
    vals = arr[:, 2]
    if rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n:
        raise IndexError("triplet index out of range")
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    return from_scipy(coo)


def matvec(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != a.n:
        raise ValueError(f"dimension mismatch: matrix {a.n}, vector {x.shape[0]}")
    return a.to_scipy() @ x


@dataclass
class CholFactor:
    """Permuted Cholesky factor of an SPD matrix; reusable for many solves."""

    n: int
    permutation: np.ndarray          # factorized matrix is A[perm][:, perm]
    L: CsrMatrix                     # lower triangular, L @ L.T == A permuted
    _lu: object = field(repr=False, compare=False, default=None)
    _lock: threading.Lock = field(default_factory=threading.Lock,
                                  repr=False, compare=False)


def factorize(a: CsrMatrix) -> CholFactor:
    """Sparse Cholesky with reverse Cuthill-McKee ordering.

    Deterministic: identical inputs give bit-identical factors.  Raises
    SingularMatrixError for singular/indefinite input (non-positive pivot).
    """
    if a.n == 0:
        empty = CsrMatrix(n=0, row_ptr=np.zeros(1, dtype=np.int64),
                          col_idx=np.zeros(0, dtype=np.int64), values=np.zeros(0))
        return CholFactor(n=0, permutation=np.zeros(0, dtype=np.int64), L=empty)

    acsr = a.to_scipy()
    perm = np.asarray(reverse_cuthill_mckee(acsr, symmetric_mode=True), dtype=np.int64)
    ap = acsr[perm][:, perm].tocsc()
    try:
        lu = splu(ap, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    except RuntimeError as exc:           # "Factor is exactly singular"
        raise SingularMatrixError(
            "matrix is singular; check Dirichlet conditions") from exc
    if not (np.array_equal(lu.perm_r, np.arange(a.n))
            and np.array_equal(lu.perm_c, np.arange(a.n))):
        raise SingularMatrixError("diagonal pivoting failed; matrix not SPD")
    d = lu.U.diagonal()
    if np.any(d <= 0.0):
        raise SingularMatrixError(
            "non-positive pivot; matrix indefinite or singular")
    lower = (lu.L @ sp.diags(np.sqrt(d))).tocsr()
    return CholFactor(n=a.n, permutation=perm, L=from_scipy(lower), _lu=lu)


def solve(f: CholFactor, b: np.ndarray) -> np.ndarray:
    """Solve A x = b using a factor from :func:`factorize`."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"dimension mismatch: factor {f.n}, rhs {b.shape[0]}")
    if f.n == 0:
        return np.zeros(0)
    with f._lock:                        # SuperLU solve is not documented threadsafe
        y = f._lu.solve(b[f.permutation])
    x = np.empty_like(y)
    x[f.permutation] = y
    return x
