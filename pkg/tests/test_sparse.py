from __future__ import annotations

import numpy as np
import pytest

from glocal.sparse import (CsrMatrix, SingularMatrixError, factorize,
                           from_triplets, matvec, solve)


def dense(a: CsrMatrix) -> np.ndarray:
    return a.to_scipy().toarray()


def test_from_triplets_duplicates_sum():
    a = from_triplets(2, [(0, 0, 1.0), (0, 0, 2.0)])
    assert a.nnz == 1
    assert dense(a)[0, 0] == 3.0


def test_from_triplets_empty():
    a = from_triplets(3, [])
    assert np.array_equal(a.row_ptr, np.zeros(4, dtype=np.int64))
    assert a.nnz == 0


def test_from_triplets_symmetric():
    a = from_triplets(2, [(0, 1, 5.0), (1, 0, 5.0), (0, 0, 1.0), (1, 1, 1.0)])
    assert np.allclose(dense(a), [[1, 5], [5, 1]])
    a.validate()


def test_from_triplets_out_of_range():
    with pytest.raises(IndexError):
        from_triplets(2, [(0, 2, 1.0)])


def test_matvec_identity_and_zero():
    eye = from_triplets(3, [(i, i, 1.0) for i in range(3)])
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(matvec(eye, x), x)
    zero = from_triplets(3, [])
    assert np.array_equal(matvec(zero, x), np.zeros(3))


def test_matvec_against_dense_oracle():
    rng = np.random.default_rng(0)
    d = rng.standard_normal((5, 5))
    d = d + d.T
    trips = [(i, j, d[i, j]) for i in range(5) for j in range(5)]
    a = from_triplets(5, trips)
    x = rng.standard_normal(5)
    assert np.max(np.abs(matvec(a, x) - d @ x)) <= 1e-14 * np.abs(d @ x).max()


def test_matvec_dimension_mismatch():
    a = from_triplets(2, [(0, 0, 1.0)])
    with pytest.raises(ValueError):
        matvec(a, np.zeros(3))


def test_factorize_diagonal():
    a = from_triplets(2, [(0, 0, 4.0), (1, 1, 9.0)])
    f = factorize(a)
    l = dense(f.L)
    # L reconstructs the permuted matrix; its diagonal is {2, 3} in some order
    ap = dense(a)[np.ix_(f.permutation, f.permutation)]
    assert np.allclose(l @ l.T, ap)
    assert sorted(np.diag(l)) == [2.0, 3.0]


def test_factorize_tridiagonal_vs_dense_oracle():
    n = 4
    trips = [(i, i, 2.0) for i in range(n)]
    trips += [(i, i + 1, -1.0) for i in range(n - 1)]
    trips += [(i + 1, i, -1.0) for i in range(n - 1)]
    a = from_triplets(n, trips)
    b = np.array([1.0, 0.5, -2.0, 3.0])
    x = solve(factorize(a), b)
    x_ref = np.linalg.solve(dense(a), b)
    assert np.max(np.abs(x - x_ref)) <= 1e-12 * max(1.0, np.abs(x_ref).max())


def test_factorize_singular_raises():
    a = from_triplets(2, [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)])
    with pytest.raises(SingularMatrixError):
        factorize(a)


def test_factorize_indefinite_raises():
    a = from_triplets(2, [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)])
    with pytest.raises(SingularMatrixError):
        factorize(a)


def test_factor_reconstruction_invariant():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((8, 8))
    d = b @ b.T + 8 * np.eye(8)
    a = from_triplets(8, [(i, j, d[i, j]) for i in range(8) for j in range(8)])
    f = factorize(a)
    l = dense(f.L)
    ap = d[np.ix_(f.permutation, f.permutation)]
    rel = np.linalg.norm(l @ l.T - ap) / np.linalg.norm(ap)
    assert rel <= 1e-10


def test_solve_trivial_cases():
    eye = from_triplets(3, [(i, i, 1.0) for i in range(3)])
    f = factorize(eye)
    assert np.array_equal(solve(f, np.zeros(3)), np.zeros(3))
    b = np.array([2.0, -1.0, 0.5])
    assert np.allclose(solve(f, b), b)


def test_solve_residual_bound():
    n = 20
    trips = [(i, i, 2.0) for i in range(n)]
    trips += [(i, i + 1, -1.0) for i in range(n - 1)]
    trips += [(i + 1, i, -1.0) for i in range(n - 1)]
    a = from_triplets(n, trips)
    f = factorize(a)
    rng = np.random.default_rng(2)
    b = rng.standard_normal(n)
    x = solve(f, b)
    assert np.max(np.abs(matvec(a, x) - b)) <= 1e-10 * (1.0 + np.abs(b).max())


def test_roundtrip_property_random_vectors():
    rng = np.random.default_rng(3)
    b = rng.standard_normal((10, 10))
    d = b @ b.T + 10 * np.eye(10)
    a = from_triplets(10, [(i, j, d[i, j]) for i in range(10) for j in range(10)])
    f = factorize(a)
    for _ in range(10):
        x = rng.standard_normal(10)
        x2 = solve(f, matvec(a, x))
        assert np.linalg.norm(x2 - x) <= 1e-9 * np.linalg.norm(x)


def test_factorize_deterministic():
    n = 12
    trips = [(i, i, 4.0) for i in range(n)]
    trips += [(i, i + 1, -1.0) for i in range(n - 1)]
    trips += [(i + 1, i, -1.0) for i in range(n - 1)]
    a1 = from_triplets(n, trips)
    a2 = from_triplets(n, trips)
    f1, f2 = factorize(a1), factorize(a2)
    assert np.array_equal(f1.permutation, f2.permutation)
    assert np.array_equal(f1.L.row_ptr, f2.L.row_ptr)
    assert np.array_equal(f1.L.col_idx, f2.L.col_idx)
    assert np.array_equal(f1.L.values, f2.L.values)


def test_empty_system():
    a = from_triplets(0, [])
    f = factorize(a)
    assert solve(f, np.zeros(0)).size == 0


def test_solve_fem_matrix_against_dense_oracle():
    from glocal import fem
    from glocal.mesh import build_rect_mesh
    m = build_rect_mesh(0, 0, 1, 1, 4, 4)
    phys = fem.Physics(kind=fem.THERMAL, default=1.0, source=1.0)
    k, f = fem.assemble(m, phys)
    dm = fem.build_dofmap(m, m.node_tags["bottom"], 1)
    kff, rhs, _ = fem.split_dirichlet(k, f, dm, np.zeros(len(dm.fixed_dofs)))
    x = solve(factorize(kff), rhs)
    x_ref = np.linalg.solve(kff.to_scipy().toarray(), rhs)
    assert np.abs(x - x_ref).max() <= 1e-10 * max(1.0, np.abs(x_ref).max())


def test_validate_rejects_asymmetric_matrix():
    a = from_triplets(2, [(0, 1, 5.0), (1, 0, 4.0)])
    with pytest.raises(ValueError):
        a.validate()
