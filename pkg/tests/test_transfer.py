from __future__ import annotations

import numpy as np
import pytest

from glocal.mesh import InterfaceDesc
from glocal.transfer import (AssemblyMap, TraceMap, assemble_to_global,
                             build_interp, extend_by_zero, interp_apply,
                             interp_transpose_apply, trace)


def test_trace_all_ones():
    t = TraceMap(domain_dofs=np.array([1, 3, 4]))
    assert np.array_equal(trace(np.ones(6), t), np.ones(3))


def test_trace_gather():
    t = TraceMap(domain_dofs=np.array([2, 5, 8]))
    u = np.arange(9.0)
    assert np.array_equal(trace(u, t), np.array([2.0, 5.0, 8.0]))


def test_trace_extend_roundtrip():
    t = TraceMap(domain_dofs=np.array([0, 4, 7]))
    v = np.array([1.0, -2.0, 5.0])
    assert np.array_equal(trace(extend_by_zero(v, t, 9), t), v)


def test_extend_zero_and_unit():
    t = TraceMap(domain_dofs=np.array([3]))
    assert np.array_equal(extend_by_zero(np.zeros(1), t, 5), np.zeros(5))
    e = extend_by_zero(np.array([1.0]), t, 5)
    assert np.array_equal(e, np.eye(5)[3])


def test_extend_preserves_norm():
    rng = np.random.default_rng(0)
    t = TraceMap(domain_dofs=np.array([1, 2, 6]))
    v = rng.standard_normal(3)
    assert np.isclose(np.linalg.norm(extend_by_zero(v, t, 8)),
                      np.linalg.norm(v))


def test_trace_extend_adjoint():
    rng = np.random.default_rng(1)
    t = TraceMap(domain_dofs=np.array([0, 2, 5, 9]))
    u = rng.standard_normal(10)
    v = rng.standard_normal(4)
    assert np.isclose(trace(u, t) @ v, u @ extend_by_zero(v, t, 10))


def test_assemble_disjoint_patches():
    acc = np.zeros(4)
    assemble_to_global(np.array([1.0, 2.0]), AssemblyMap(np.array([0, 1])), acc)
    assemble_to_global(np.array([3.0, 4.0]), AssemblyMap(np.array([2, 3])), acc)
    assert np.array_equal(acc, [1, 2, 3, 4])


def test_assemble_zero_keeps_acc():
    acc = np.array([1.0, 1.0])
    assemble_to_global(np.zeros(2), AssemblyMap(np.array([0, 1])), acc)
    assert np.array_equal(acc, [1, 1])


def test_assemble_shared_corner_accumulates():
    acc = np.zeros(3)
    assemble_to_global(np.array([9.0, 2.0]), AssemblyMap(np.array([0, 1])), acc)
    assemble_to_global(np.array([3.0, 7.0]), AssemblyMap(np.array([1, 2])), acc)
    assert np.array_equal(acc, [9.0, 5.0, 7.0])


def _desc(arcs):
    return InterfaceDesc(gamma_nodes=np.arange(len(arcs)),
                         arc_coords=np.asarray(arcs, dtype=float))


def test_interp_identity_for_identical_interfaces():
    j = build_interp(_desc([0, 0.5, 1]), _desc([0, 0.5, 1]))
    assert np.allclose(j.matrix().toarray(), np.eye(3))


def test_interp_midpoint_weights():
    j = build_interp(_desc([0, 1]), _desc([0, 0.5, 1]))
    assert np.allclose(j.matrix().toarray(),
                       [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])


def test_interp_affine_reproduction():
    coarse = _desc([0, 0.4, 1.0])
    fine = _desc([0, 0.1, 0.4, 0.55, 0.8, 1.0])
    j = build_interp(coarse, fine)
    vals = 3.0 * coarse.arc_coords - 1.0
    expect = 3.0 * fine.arc_coords - 1.0
    assert np.allclose(interp_apply(j, vals), expect)


def test_interp_constant_field():
    j = build_interp(_desc([0, 0.25, 1.0]), _desc([0, 0.125, 0.25, 0.6, 1.0]))
    assert np.allclose(interp_apply(j, np.full(3, 4.2)), np.full(5, 4.2))


def test_interp_adjoint_identity():
    rng = np.random.default_rng(2)
    j = build_interp(_desc([0, 0.5, 1.0]), _desc([0, 0.25, 0.5, 0.75, 1.0]))
    v = rng.standard_normal(3)
    w = rng.standard_normal(5)
    assert abs(interp_apply(j, v) @ w - v @ interp_transpose_apply(j, w)) <= 1e-14


def test_interp_transpose_preserves_totals():
    rng = np.random.default_rng(3)
    j = build_interp(_desc([0, 0.5, 1.0]), _desc([0, 0.25, 0.5, 0.75, 1.0]))
    w = rng.standard_normal(5)
    q = interp_transpose_apply(j, w)
    # brute-force: every fine row distributes its full weight to coarse dofs
    assert np.isclose(q.sum(), w.sum())


def test_interp_row_sums_and_range():
    j = build_interp(_desc([0, 0.3, 1.0]), _desc([0, 0.1, 0.3, 0.9, 1.0]))
    for row in j.rows:
        ws = [w for _, w in row]
        assert np.isclose(sum(ws), 1.0)
        assert all(-1e-14 <= w <= 1.0 + 1e-14 for w in ws)


def test_interp_vector_components():
    j = build_interp(_desc([0, 1.0]), _desc([0, 0.5, 1.0]), dofs_per_node=2)
    v = np.array([1.0, 10.0, 3.0, 30.0])    # (node, comp) pairs
    out = interp_apply(j, v)
    assert np.allclose(out, [1.0, 10.0, 2.0, 20.0, 3.0, 30.0])


def test_interp_out_of_range_rejected():
    with pytest.raises(ValueError):
        build_interp(_desc([0, 1.0]), _desc([0, 0.5, 1.2]))
