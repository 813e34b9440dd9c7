from __future__ import annotations

import numpy as np
import pytest

from glocal.mesh import (MeshError, build_rect_mesh, nodes_on_segment,
                         refine_uniform, tag_disk, tag_nodes_on_segment)


def test_unit_square_single_cell():
    m = build_rect_mesh(0, 0, 1, 1, 1, 1)
    assert m.n_nodes == 4
    assert m.n_tris == 2
    assert np.allclose(m.signed_areas(), 0.5)


def test_partition_of_unity_of_area():
    m = build_rect_mesh(0, 0, 1, 1, 2, 2)
    assert m.n_nodes == 9
    assert m.n_tris == 8
    assert np.isclose(m.area(), 1.0)


def test_rect_counts_and_bottom_tag():
    m = build_rect_mesh(0, 0, 2, 1, 4, 2)
    assert m.n_nodes == 15
    assert m.n_tris == 16
    # lattice nodes on y=0: one per x station
    expected = np.flatnonzero(np.isclose(m.nodes[:, 1], 0.0))
    assert np.array_equal(m.node_tags["bottom"], np.sort(expected))
    assert len(m.node_tags["bottom"]) == 5


def test_degenerate_extents_rejected():
    with pytest.raises(MeshError):
        build_rect_mesh(0, 0, 0, 1, 1, 1)
    with pytest.raises(MeshError):
        build_rect_mesh(0, 0, 1, 1, 0, 1)


def test_refine_once_counts():
    m = refine_uniform(build_rect_mesh(0, 0, 1, 1, 1, 1), 1)
    assert m.n_tris == 8
    assert m.n_nodes == 9
    m.validate()


def test_refine_zero_is_identity():
    m = build_rect_mesh(0, 0, 1, 1, 2, 2)
    m2 = refine_uniform(m, 0)
    assert np.array_equal(m.tris, m2.tris)
    assert np.array_equal(m.nodes, m2.nodes)


def test_refine_two_levels_counts():
    m = build_rect_mesh(0, 0, 1, 1, 2, 2)      # 8 triangles
    assert refine_uniform(m, 2).n_tris == 8 * 4 ** 2


def test_refine_preserves_area():
    m = build_rect_mesh(0.3, -1.0, 2.7, 0.5, 3, 2)
    for lv in (1, 2, 3):
        r = refine_uniform(m, lv)
        assert abs(r.area() - m.area()) <= 1e-12 * m.area()


def _dist_to_segment(p, seg):
    a, b = np.array(seg[:2]), np.array(seg[2:])
    ab, ap = b - a, p - a
    t = np.clip(ap @ ab / (ab @ ab), 0.0, 1.0)
    return np.hypot(*(ap - t * ab))


def test_refined_tags_stay_on_polyline():
    m = build_rect_mesh(0, 0, 2, 1, 4, 2)
    m = tag_nodes_on_segment(m, "midline", (1.0, 0.0), (1.0, 1.0))
    r = refine_uniform(m, 2)
    for tag in ("left", "right", "bottom", "top", "midline"):
        paths = r.tag_paths[tag]
        for n in r.node_tags[tag]:
            d = min(_dist_to_segment(r.nodes[n], seg) for seg in paths)
            assert d <= 1e-12


def test_refine_does_not_tag_chords():
    # One-cell-wide tagged rectangle boundary: edges crossing the interior
    # have both endpoints tagged but must not propagate the tag.
    m = build_rect_mesh(0, 0, 3, 2, 3, 2)
    for seg in [((1, 0), (2, 0)), ((2, 0), (2, 2)), ((2, 2), (1, 2)), ((1, 2), (1, 0))]:
        m = tag_nodes_on_segment(m, "ring", seg[0], seg[1])
    r = refine_uniform(m, 1)
    for n in r.node_tags["ring"]:
        x, y = r.nodes[n]
        on_ring = (np.isclose(x, 1) or np.isclose(x, 2)) or \
                  ((np.isclose(y, 0) or np.isclose(y, 2)) and 1 <= x <= 2)
        assert on_ring, f"node {n} at {(x, y)} wrongly tagged"


def test_tag_disk_whole_domain():
    m = build_rect_mesh(0, 0, 1, 1, 2, 2)
    m = tag_disk(m, 0.5, 0.5, 10.0, "inc")
    assert np.array_equal(m.elem_tags["inc"], np.arange(m.n_tris))


def test_tag_disk_vanishing_radius():
    m = build_rect_mesh(0, 0, 1, 1, 2, 2)
    m = tag_disk(m, 0.5, 0.5, 1e-12, "inc")
    assert m.elem_tags["inc"].size == 0


def test_tag_disk_matches_bruteforce_centroids():
    m = build_rect_mesh(0, 0, 1, 1, 2, 2)
    cx, cy, r = 0.5, 0.5, 0.3
    m = tag_disk(m, cx, cy, r, "inc")
    expect = []
    for e, tri in enumerate(m.tris):
        c = m.nodes[tri].mean(axis=0)
        if (c[0] - cx) ** 2 + (c[1] - cy) ** 2 < r ** 2:
            expect.append(e)
    assert np.array_equal(m.elem_tags["inc"], np.array(expect))


def test_elem_tags_propagate_under_refinement():
    m = build_rect_mesh(0, 0, 1, 1, 2, 2)
    m = tag_disk(m, 0.5, 0.5, 0.3, "inc")
    r = refine_uniform(m, 1)
    # children of tagged parents, parent e -> children 4e..4e+3
    expect = np.sort(np.concatenate([4 * m.elem_tags["inc"] + k for k in range(4)]))
    assert np.array_equal(r.elem_tags["inc"], expect)


def test_nodes_on_segment_ordering():
    m = build_rect_mesh(0, 0, 2, 1, 4, 2)
    d = nodes_on_segment(m, (0.0, 0.5), (2.0, 0.5))
    assert len(d.gamma_nodes) == 5
    assert np.all(np.diff(d.arc_coords) > 0)
    assert np.allclose(m.nodes[d.gamma_nodes, 1], 0.5)
    assert np.allclose(m.nodes[d.gamma_nodes, 0], d.arc_coords)


def test_mesh_json_dump_roundtrip():
    import json
    m = build_rect_mesh(0, 0, 1, 1, 2, 2)
    m = tag_disk(m, 0.5, 0.5, 0.3, "inc")
    doc = json.loads(m.to_json())
    assert len(doc["nodes"]) == m.n_nodes
    assert len(doc["tris"]) == m.n_tris
    assert doc["node_tags"]["bottom"] == m.node_tags["bottom"].tolist()
    assert doc["elem_tags"]["inc"] == m.elem_tags["inc"].tolist()


def test_validate_rejects_bad_meshes():
    import pytest as _pytest
    m = build_rect_mesh(0, 0, 1, 1, 1, 1)
    flipped = m.tris.copy()
    flipped[0] = flipped[0][::-1]           # negative orientation
    from glocal.mesh import TriMesh
    bad = TriMesh(nodes=m.nodes, tris=flipped)
    with _pytest.raises(MeshError):
        bad.validate()
    out_of_range = TriMesh(nodes=m.nodes, tris=m.tris,
                           node_tags={"x": np.array([99])})
    with _pytest.raises(MeshError):
        out_of_range.validate()
