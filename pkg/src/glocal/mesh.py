"""Structured triangular meshes on rectangles, with tagged node/element sets.

Meshes are built from a regular lattice of cells, each cell split along its
SW-NE diagonal.  That construction keeps every coarse lattice line an exact
subset of any uniformly refined mesh, which is what makes coarse and fine
patch boundaries match node-for-node later on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Invalid mesh construction input."""


# Tolerance for "lies on a tagged line" tests, relative to the mesh extent.
_GEOM_RTOL = 1e-12


@dataclass
class TriMesh:
    """Triangle mesh: node coordinates, CCW connectivity and tagged subsets.

    ``node_tags`` maps a tag name to a sorted, duplicate-free array of node
    indices; ``elem_tags`` does the same for triangle indices.  ``tag_paths``
    records, for node tags that live on a polyline, the straight segments
    carrying the tag (rows ``x0, y0, x1, y1``); refinement uses it to decide
    whether an edge midpoint inherits the tag.
    """

    nodes: np.ndarray                      # (n_nodes, 2) float64
    tris: np.ndarray                       # (n_tris, 3) int, counter-clockwise
    node_tags: dict[str, np.ndarray] = field(default_factory=dict)
    elem_tags: dict[str, np.ndarray] = field(default_factory=dict)
    tag_paths: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_tris(self) -> int:
        return self.tris.shape[0]

    def signed_areas(self) -> np.ndarray:
        a = self.nodes[self.tris[:, 0]]
        b = self.nodes[self.tris[:, 1]]
        c = self.nodes[self.tris[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def centroids(self) -> np.ndarray:
        return self.nodes[self.tris].mean(axis=1)

    def extent(self) -> float:
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(max(hi[0] - lo[0], hi[1] - lo[1]))

    def validate(self) -> None:
        """Check mesh invariants; raises MeshError on violation."""
        if np.any(self.signed_areas() <= 0.0):
            raise MeshError("mesh has a non-positively-oriented or degenerate triangle")
        if self.tris.min(initial=0) < 0 or self.tris.max(initial=-1) >= self.n_nodes:
            raise MeshError("triangle references a node out of range")
        for name, idx in self.node_tags.items():
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_nodes):
                raise MeshError(f"node tag {name!r} out of range")
            if np.any(np.diff(idx) <= 0):
                raise MeshError(f"node tag {name!r} not sorted/unique")
        for name, idx in self.elem_tags.items():
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_tris):
                raise MeshError(f"element tag {name!r} out of range")
            if np.any(np.diff(idx) <= 0):
                raise MeshError(f"element tag {name!r} not sorted/unique")

    def to_json(self) -> str:
        """Debug dump (not a stability-guaranteed format)."""
        return json.dumps({
            "nodes": self.nodes.tolist(),
            "tris": self.tris.tolist(),
            "node_tags": {k: v.tolist() for k, v in self.node_tags.items()},
            "elem_tags": {k: v.tolist() for k, v in self.elem_tags.items()},
        })


@dataclass
class InterfaceDesc:
    """Nodes along one straight interface piece, with curvilinear coordinates.

    ``arc_coords`` are strictly increasing distances along the polyline; they
    are what coarse and fine interface discretizations are matched by.
    """

    gamma_nodes: np.ndarray   # node indices in polyline order
    arc_coords: np.ndarray    # same length, strictly increasing

    def __post_init__(self) -> None:
        if len(self.gamma_nodes) != len(self.arc_coords):
            raise MeshError("interface node and arc arrays differ in length")
        if np.any(np.diff(self.arc_coords) <= 0.0):
            raise MeshError("interface arc coordinates not strictly increasing")


def build_rect_mesh(x0: float, y0: float, x1: float, y1: float,
                    nx: int, ny: int) -> TriMesh:
    """Mesh the rectangle [x0,x1]x[y0,y1] with nx*ny cells, two triangles each.

    Nodes are ordered row-major (x fastest).  Boundary node tags
    ``left/right/bottom/top`` are populated, each backed by its edge segment.
    """
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate rectangle extents")
    if nx < 1 or ny < 1:
        raise MeshError("cell counts must be >= 1")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xv, yv = np.meshgrid(xs, ys)               # shape (ny+1, nx+1)
    nodes = np.column_stack([xv.ravel(), yv.ravel()])

    def nid(i: int, j: int) -> int:
        return j * (nx + 1) + i

    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    k = 0
    for j in range(ny):
        for i in range(nx):
            sw, se = nid(i, j), nid(i + 1, j)
            ne, nw = nid(i + 1, j + 1), nid(i, j + 1)
            tris[k] = (sw, se, ne)              # split along SW-NE diagonal
            tris[k + 1] = (sw, ne, nw)
            k += 2

    ii = np.arange(nx + 1)
    jj = np.arange(ny + 1)
    node_tags = {
        "left":   np.sort(np.array([nid(0, j) for j in jj])),
        "right":  np.sort(np.array([nid(nx, j) for j in jj])),
        "bottom": np.sort(np.array([nid(i, 0) for i in ii])),
        "top":    np.sort(np.array([nid(i, ny) for i in ii])),
    }
    tag_paths = {
        "left":   np.array([[x0, y0, x0, y1]]),
        "right":  np.array([[x1, y0, x1, y1]]),
        "bottom": np.array([[x0, y0, x1, y0]]),
        "top":    np.array([[x0, y1, x1, y1]]),
    }
    return TriMesh(nodes=nodes, tris=tris, node_tags=node_tags,
                   elem_tags={}, tag_paths=tag_paths)


def _point_on_segment(p: np.ndarray, seg: np.ndarray, tol: float) -> bool:
    a, b = seg[:2], seg[2:]
    ab = b - a
    ap = p - a
    L2 = float(ab @ ab)
    if L2 == 0.0:
        return bool(np.hypot(*ap) <= tol)
    t = float(ap @ ab) / L2
    if t < -tol or t > 1.0 + tol:
        return False
    d = ap - t * ab
    return bool(np.hypot(*d) <= tol)


def _on_tag_path(p: np.ndarray, paths: np.ndarray, tol: float) -> bool:
    return any(_point_on_segment(p, seg, tol) for seg in paths)


def refine_uniform(m: TriMesh, levels: int) -> TriMesh:
    """Split every triangle into four by edge midpoints, ``levels`` times.

    Node tags propagate: a midpoint inherits a tag iff both parent edge
    endpoints carry it and the edge lies on the tag's recorded polyline
    (always taken to hold for tags without recorded geometry).  Element tags
    propagate to all four children.
    """
    if levels < 0:
        raise MeshError("levels must be >= 0")
    out = m
    for _ in range(levels):
        out = _refine_once(out)
    return out


def _refine_once(m: TriMesh) -> TriMesh:
    tol = _GEOM_RTOL * max(m.extent(), 1.0)
    nodes = [m.nodes]
    midpoint: dict[tuple[int, int], int] = {}
    next_id = m.n_nodes
    new_coords: list[np.ndarray] = []

    def mid(u: int, v: int) -> int:
        nonlocal next_id
        key = (u, v) if u < v else (v, u)
        idx = midpoint.get(key)
        if idx is None:
            idx = next_id
            midpoint[key] = idx
            new_coords.append(0.5 * (m.nodes[u] + m.nodes[v]))
            next_id += 1
        return idx

    tris = np.empty((4 * m.n_tris, 3), dtype=np.int64)
    for t, (a, b, c) in enumerate(m.tris):
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris[4 * t + 0] = (a, ab, ca)
        tris[4 * t + 1] = (ab, b, bc)
        tris[4 * t + 2] = (ca, bc, c)
        tris[4 * t + 3] = (ab, bc, ca)

    if new_coords:
        nodes.append(np.vstack(new_coords))
    all_nodes = np.vstack(nodes)

    node_tags: dict[str, np.ndarray] = {}
    for name, idx in m.node_tags.items():
        tagged = set(int(i) for i in idx)
        extra = []
        paths = m.tag_paths.get(name)
        for (u, v), w in midpoint.items():
            if u in tagged and v in tagged:
                p = all_nodes[w]
                if paths is None or _on_tag_path(p, paths, tol):
                    extra.append(w)
        node_tags[name] = np.sort(np.concatenate([idx, np.array(extra, dtype=idx.dtype)])
                                  if extra else idx.copy())

    elem_tags = {name: np.sort(np.concatenate([4 * idx + k for k in range(4)]))
                 for name, idx in m.elem_tags.items()}
    return TriMesh(nodes=all_nodes, tris=tris, node_tags=node_tags,
                   elem_tags=elem_tags,
                   tag_paths={k: v.copy() for k, v in m.tag_paths.items()})


def tag_disk(m: TriMesh, cx: float, cy: float, r: float, tag: str) -> TriMesh:
    """Tag elements whose centroid lies inside the disk (cx, cy, r)."""
    if r <= 0.0:
        raise MeshError("disk radius must be positive")
    c = m.centroids()
    inside = np.flatnonzero((c[:, 0] - cx) ** 2 + (c[:, 1] - cy) ** 2 < r * r)
    elem_tags = dict(m.elem_tags)
    elem_tags[tag] = inside.astype(np.int64)
    return TriMesh(nodes=m.nodes, tris=m.tris, node_tags=m.node_tags,
                   elem_tags=elem_tags, tag_paths=m.tag_paths)


def tag_nodes_on_segment(m: TriMesh, tag: str, p0, p1) -> TriMesh:
    """Tag all nodes lying on the segment p0-p1 and record its geometry."""
    seg = np.array([p0[0], p0[1], p1[0], p1[1]], dtype=float)
    tol = _GEOM_RTOL * max(m.extent(), 1.0)
    hits = np.flatnonzero([_point_on_segment(p, seg, tol) for p in m.nodes])
    node_tags = dict(m.node_tags)
    tag_paths = dict(m.tag_paths)
    if tag in node_tags:
        node_tags[tag] = np.unique(np.concatenate([node_tags[tag], hits]))
        tag_paths[tag] = np.vstack([tag_paths[tag], seg[None, :]])
    else:
        node_tags[tag] = hits.astype(np.int64)
        tag_paths[tag] = seg[None, :]
    return TriMesh(nodes=m.nodes, tris=m.tris, node_tags=node_tags,
                   elem_tags=m.elem_tags, tag_paths=tag_paths)


def nodes_on_segment(m: TriMesh, p0, p1) -> InterfaceDesc:
    """Nodes of ``m`` on the segment p0-p1, ordered by distance from p0."""
    seg = np.array([p0[0], p0[1], p1[0], p1[1]], dtype=float)
    tol = _GEOM_RTOL * max(m.extent(), 1.0)
    hits = np.flatnonzero([_point_on_segment(p, seg, tol) for p in m.nodes])
    if hits.size == 0:
        raise MeshError("no mesh nodes on requested segment")
    arcs = np.hypot(m.nodes[hits, 0] - seg[0], m.nodes[hits, 1] - seg[1])
    order = np.argsort(arcs)
    return InterfaceDesc(gamma_nodes=hits[order], arc_coords=arcs[order])
