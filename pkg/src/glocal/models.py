"""The three model kinds of the coupling and all cross-model maps.

* GlobalModel: the coarse, homogeneous model of the whole domain, plus the
  unassembled complement-zone operator used to post-process interface
  reactions.
* PatchModel: one refined (possibly heterogeneous) local model per zone of
  interest, solved under Dirichlet data interpolated from the coarse
  interface.
* ReferenceModel: fine patch meshes embedded in the coarse remainder.  Fine
  interface nodes that are not coarse lattice nodes are tied to their
  bracketing coarse nodes by the same interpolation the coupling uses, so the
  coupling's fixed point and the reference solution coincide exactly (up to
  solver tolerance), whatever the refinement levels.

Patch boundary bookkeeping: for each patch, ``if_coarse_nodes`` holds every
coarse node on the patch's non-physical boundary sides, including side
endpoints that fall on the Dirichlet boundary (their known values take part
in the interface interpolation).  ``gamma_mask`` selects the subset that
actually carries coupling unknowns, i.e. everything not Dirichlet-fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem, sparse
from .mesh import (InterfaceDesc, TriMesh, build_rect_mesh, nodes_on_segment,
                   refine_uniform, tag_disk)
from .scenarios import Scenario, ScenarioError
from .transfer import AssemblyMap, InterpOp, TraceMap, build_interp

_ALIGN_RTOL = 1e-9


@dataclass
class GlobalModel:
    mesh: TriMesh
    phys: fem.Physics
    dofmap: fem.DofMap
    stiffness: sparse.CsrMatrix
    load: np.ndarray
    factor: sparse.CholFactor              # of the Dirichlet-free block
    kfc: sp.csr_matrix                     # free-fixed coupling block
    gamma_nodes: np.ndarray                # sorted global interface nodes
    gamma_trace: TraceMap
    complement_present: bool
    complement_elems: np.ndarray
    complement_stiffness: sparse.CsrMatrix | None
    complement_load: np.ndarray | None
    assembly: list                         # per-patch AssemblyMap
    patch_zone_stiffness: list             # per-patch coarse-zone operator K^(s),G

    @property
    def dofs_per_node(self) -> int:
        return self.phys.dofs_per_node


@dataclass
class PatchModel:
    sid: int                               # 1-based patch id; 0 is the global model
    rect: tuple[float, float, float, float]
    mesh: TriMesh
    phys: fem.Physics
    dofmap: fem.DofMap                     # fixed = fine interface + physical Dirichlet
    stiffness: sparse.CsrMatrix
    load: np.ndarray
    factor: sparse.CholFactor
    kfc: sp.csr_matrix
    if_coarse_nodes: np.ndarray            # patch boundary nodes, global numbering
    if_fine_nodes: np.ndarray              # same polyline, fine numbering
    coarse_trace: TraceMap                 # gathers u^G values on if_coarse_nodes
    fine_trace: TraceMap                   # fine interface dofs in patch numbering
    interp: InterpOp                       # coarse-to-fine on the interface
    gamma_mask: np.ndarray                 # bool per coarse interface dof
    assembly: AssemblyMap                  # masked coarse dofs -> global interface
    fixed_if_pos: np.ndarray               # interface dofs within dofmap.fixed_dofs

    @property
    def dofs_per_node(self) -> int:
        return self.phys.dofs_per_node


@dataclass
class ReferenceModel:
    mesh: TriMesh                          # merged mesh (complement + fine patches)
    phys: fem.Physics
    constraint: sp.csr_matrix              # merged dofs x master dofs
    dofmap: fem.DofMap                     # over master dofs
    stiffness_red: sparse.CsrMatrix
    load_red: np.ndarray
    factor: sparse.CholFactor
    kfc: sp.csr_matrix
    global_node_map: np.ndarray            # global node -> merged node or -1
    patch_node_maps: list                  # per patch: fine node -> merged node
    _solution: np.ndarray | None = field(default=None, repr=False)


def _side_segments(rect, domain):
    """The four sides of a patch rectangle, flagged by the domain side they
    lie on (None when interior)."""
    x0, y0, x1, y1 = rect
    dx0, dy0, dx1, dy1 = domain
    eps = _ALIGN_RTOL * max(dx1 - dx0, dy1 - dy0)
    return [
        (((x0, y0), (x1, y0)), "bottom" if abs(y0 - dy0) <= eps else None),
        (((x1, y0), (x1, y1)), "right" if abs(x1 - dx1) <= eps else None),
        (((x0, y1), (x1, y1)), "top" if abs(y1 - dy1) <= eps else None),
        (((x0, y0), (x0, y1)), "left" if abs(x0 - dx0) <= eps else None),
    ]


def _check_alignment(sc: Scenario) -> None:
    x0, y0, x1, y1 = sc.domain
    hx = (x1 - x0) / sc.nx
    hy = (y1 - y0) / sc.ny
    for k, p in enumerate(sc.patches):
        for v, lo, h, ax in ((p.rect[0], x0, hx, "x0"), (p.rect[1], y0, hy, "y0"),
                             (p.rect[2], x0, hx, "x1"), (p.rect[3], y0, hy, "y1")):
            steps = (v - lo) / h
            if abs(steps - round(steps)) > _ALIGN_RTOL * max(1.0, abs(steps)):
                raise ScenarioError(
                    f"patches[{k}].rect: {ax} not aligned with the coarse lattice")
    for a in range(len(sc.patches)):
        for b in range(a + 1, len(sc.patches)):
            ra, rb = sc.patches[a].rect, sc.patches[b].rect
            if (min(ra[2], rb[2]) - max(ra[0], rb[0]) > _ALIGN_RTOL
                    and min(ra[3], rb[3]) - max(ra[1], rb[1]) > _ALIGN_RTOL):
                raise ScenarioError(f"patches[{b}].rect: overlaps patch {a}")


def _elements_in_rect(m: TriMesh, rect) -> np.ndarray:
    c = m.centroids()
    return np.flatnonzero((c[:, 0] > rect[0]) & (c[:, 0] < rect[2])
                          & (c[:, 1] > rect[1]) & (c[:, 1] < rect[3]))


def _dirichlet_nodes(m: TriMesh, sides: list[str]) -> np.ndarray:
    tags = [m.node_tags[s] for s in sides if s in m.node_tags]
    return np.unique(np.concatenate(tags)) if tags else np.zeros(0, dtype=np.int64)


def _base_physics(sc: Scenario) -> fem.Physics:
    return fem.Physics(kind=sc.kind, default=sc.coefficient, coeffs={},
                       source=sc.source)


def _patch_physics(sc: Scenario, spec, m: TriMesh) -> tuple[TriMesh, fem.Physics]:
    coeffs = {}
    for i, inc in enumerate(spec.inclusions):
        tag = f"inclusion{i}"
        m = tag_disk(m, inc.cx, inc.cy, inc.r, tag)
        if inc.coefficient is not None:
            coeffs[tag] = inc.coefficient
        elif sc.kind == fem.THERMAL:
            coeffs[tag] = sc.coefficient / inc.ratio
        else:
            e, nu = sc.coefficient
            coeffs[tag] = (e / inc.ratio, nu)
    return m, fem.Physics(kind=sc.kind, default=sc.coefficient, coeffs=coeffs,
                          source=sc.source)


def _interp_by_sides(coarse_sides: list[InterfaceDesc],
                     fine_sides: list[InterfaceDesc],
                     coarse_nodes: np.ndarray, fine_nodes: np.ndarray,
                     dpn: int) -> InterpOp:
    """Patch-level interpolation assembled from per-side interpolations.

    Side corner nodes coincide with coarse nodes and show up in two sides with
    identical weight-one rows, so merging by fine node is unambiguous.
    """
    cpos = {int(n): i for i, n in enumerate(coarse_nodes)}
    fpos = {int(n): i for i, n in enumerate(fine_nodes)}
    node_rows: dict[int, list] = {}
    for cd, fd in zip(coarse_sides, fine_sides):
        side = build_interp(cd, fd, dofs_per_node=1)
        for r, fnode in enumerate(fd.gamma_nodes):
            row = [(cpos[int(cd.gamma_nodes[j])], w) for j, w in side.rows[r]]
            node_rows[fpos[int(fnode)]] = row
    rows = [[(dpn * j + c, w) for j, w in node_rows[i]]
            for i in range(len(fine_nodes)) for c in range(dpn)]
    return InterpOp(rows=rows, n_cols=dpn * len(coarse_nodes))


def build_models(sc: Scenario) -> tuple[GlobalModel, list[PatchModel], ReferenceModel]:
    """Build the coarse model, the fine patches and the embedded reference."""
    _check_alignment(sc)
    x0, y0, x1, y1 = sc.domain
    hx = (x1 - x0) / sc.nx
    hy = (y1 - y0) / sc.ny
    phys = _base_physics(sc)
    dpn = phys.dofs_per_node

    gmesh = build_rect_mesh(x0, y0, x1, y1, sc.nx, sc.ny)
    dir_nodes = _dirichlet_nodes(gmesh, sc.dirichlet)
    dir_set = set(int(n) for n in dir_nodes)
    kg, fg = fem.assemble(gmesh, phys)
    gdm = fem.build_dofmap(gmesh, dir_nodes, dpn)
    a = kg.to_scipy()
    kff = sparse.from_scipy(a[gdm.free_dofs][:, gdm.free_dofs])
    kfc = a[gdm.free_dofs][:, gdm.fixed_dofs].tocsr()
    gfactor = sparse.factorize(kff)

    patch_elems = [_elements_in_rect(gmesh, p.rect) for p in sc.patches]
    taken = np.zeros(gmesh.n_tris, dtype=bool)
    for k, els in enumerate(patch_elems):
        if np.any(taken[els]):
            raise ScenarioError(f"patches[{k}].rect: overlaps another patch")
        taken[els] = True
    complement_elems = np.flatnonzero(~taken)
    complement_present = complement_elems.size > 0
    k0 = f0 = None
    if complement_present:
        k0, f0 = fem.assemble(gmesh, phys, elems=complement_elems)
    zone_ks = [fem.assemble(gmesh, phys, elems=els)[0] for els in patch_elems]

    # per-patch interface descriptions on the coarse mesh
    coarse_side_descs: list[list[InterfaceDesc]] = []
    coarse_if_nodes: list[np.ndarray] = []
    segments: list[list] = []
    for p in sc.patches:
        descs, segs, nodes = [], [], []
        for (p0, p1), on_side in _side_segments(p.rect, sc.domain):
            if on_side is not None:
                continue                    # physical boundary, not interface
            d = nodes_on_segment(gmesh, p0, p1)
            descs.append(d)
            segs.append((p0, p1))
            nodes.append(d.gamma_nodes)
        if not descs:
            raise ScenarioError("patch has no interface side")
        coarse_side_descs.append(descs)
        segments.append(segs)
        coarse_if_nodes.append(np.unique(np.concatenate(nodes)))

    gamma_nodes = np.unique(np.concatenate(
        [nodes[~np.isin(nodes, dir_nodes)] for nodes in coarse_if_nodes])) \
        if sc.patches else np.zeros(0, dtype=np.int64)
    gamma_pos = {int(n): i for i, n in enumerate(gamma_nodes)}
    gamma_trace = TraceMap(fem.node_dofs(gamma_nodes, dpn))

    patches: list[PatchModel] = []
    assembly_maps: list[AssemblyMap] = []
    for s, p in enumerate(sc.patches):
        ncx = round((p.rect[2] - p.rect[0]) / hx)
        ncy = round((p.rect[3] - p.rect[1]) / hy)
        fmesh = refine_uniform(build_rect_mesh(*p.rect, ncx, ncy), p.refine)
        fmesh, pphys = _patch_physics(sc, p, fmesh)
        kp, fp = fem.assemble(fmesh, pphys)

        fine_side_descs = [nodes_on_segment(fmesh, p0, p1)
                           for p0, p1 in segments[s]]
        fine_nodes = np.unique(np.concatenate(
            [d.gamma_nodes for d in fine_side_descs]))
        phys_dir_sides = [side for (seg, side) in
                          _side_segments(p.rect, sc.domain)
                          if side is not None and side in sc.dirichlet]
        pdir_nodes = _dirichlet_nodes(fmesh, phys_dir_sides)
        fixed_nodes = np.union1d(fine_nodes, pdir_nodes)
        pdm = fem.build_dofmap(fmesh, fixed_nodes, dpn)
        ap = kp.to_scipy()
        pkff = sparse.from_scipy(ap[pdm.free_dofs][:, pdm.free_dofs])
        pkfc = ap[pdm.free_dofs][:, pdm.fixed_dofs].tocsr()

        cnodes = coarse_if_nodes[s]
        interp = _interp_by_sides(coarse_side_descs[s], fine_side_descs,
                                  cnodes, fine_nodes, dpn)
        mask = np.repeat(~np.isin(cnodes, dir_nodes), dpn)
        amap = AssemblyMap(np.array(
            [dpn * gamma_pos[int(n)] + c for n in cnodes for c in range(dpn)
             if int(n) not in dir_set], dtype=np.int64))
        fine_trace = TraceMap(fem.node_dofs(fine_nodes, dpn))
        fixed_if_pos = np.searchsorted(pdm.fixed_dofs, fine_trace.domain_dofs)
        if not np.array_equal(pdm.fixed_dofs[fixed_if_pos],
                              fine_trace.domain_dofs):
            raise RuntimeError("interface dofs not contained in the patch "
                               "fixed set")

        patches.append(PatchModel(
            sid=s + 1, rect=p.rect, mesh=fmesh, phys=pphys, dofmap=pdm,
            stiffness=kp, load=fp, factor=sparse.factorize(pkff), kfc=pkfc,
            if_coarse_nodes=cnodes, if_fine_nodes=fine_nodes,
            coarse_trace=TraceMap(fem.node_dofs(cnodes, dpn)),
            fine_trace=fine_trace, interp=interp, gamma_mask=mask,
            assembly=amap, fixed_if_pos=fixed_if_pos))
        assembly_maps.append(amap)

    gm = GlobalModel(
        mesh=gmesh, phys=phys, dofmap=gdm, stiffness=kg, load=fg,
        factor=gfactor, kfc=kfc, gamma_nodes=gamma_nodes,
        gamma_trace=gamma_trace, complement_present=complement_present,
        complement_elems=complement_elems, complement_stiffness=k0,
        complement_load=f0, assembly=assembly_maps,
        patch_zone_stiffness=zone_ks)

    rm = _build_reference(sc, gm, patches, coarse_side_descs, segments)
    return gm, patches, rm


def _build_reference(sc: Scenario, gm: GlobalModel, patches: list[PatchModel],
                     coarse_side_descs, segments) -> ReferenceModel:
    x0, y0, x1, y1 = sc.domain
    hx = (x1 - x0) / sc.nx
    hy = (y1 - y0) / sc.ny
    lmax = max((p.refine for p in sc.patches), default=0)
    ux, uy = hx / 2 ** lmax, hy / 2 ** lmax
    dpn = gm.dofs_per_node

    def key(pt) -> tuple[int, int]:
        return (round((pt[0] - x0) / ux), round((pt[1] - y0) / uy))

    gmesh = gm.mesh
    kept_coarse = np.unique(np.concatenate(
        [gmesh.tris[gm.complement_elems].ravel()]
        + [pm.if_coarse_nodes for pm in patches])) \
        if (gm.complement_present or patches) else np.arange(gmesh.n_nodes)

    merged_coords: list[np.ndarray] = []
    coarse_to_merged = np.full(gmesh.n_nodes, -1, dtype=np.int64)
    master_key: dict[tuple[int, int], int] = {}
    for n in kept_coarse:
        coarse_to_merged[n] = len(merged_coords)
        master_key[key(gmesh.nodes[n])] = len(merged_coords)
        merged_coords.append(gmesh.nodes[n])

    tris_blocks = [coarse_to_merged[gmesh.tris[gm.complement_elems]]] \
        if gm.complement_present else []
    elem_tags: dict[str, list] = {}
    elem_offset = gm.complement_elems.size

    patch_node_maps = []
    slave_rows: dict[int, list] = {}       # merged node -> [(master merged node, w)]
    coeffs: dict[str, object] = {}
    for s, pm in enumerate(patches):
        fmesh = pm.mesh
        fmap = np.empty(fmesh.n_nodes, dtype=np.int64)
        for n in range(fmesh.n_nodes):
            hit = master_key.get(key(fmesh.nodes[n]))
            if hit is not None:
                fmap[n] = hit
            else:
                fmap[n] = len(merged_coords)
                merged_coords.append(fmesh.nodes[n])
        patch_node_maps.append(fmap)

        # tie non-lattice fine interface nodes to their bracketing coarse nodes
        for cd, (p0, p1) in zip(coarse_side_descs[s], segments[s]):
            fd = nodes_on_segment(fmesh, p0, p1)
            side = build_interp(cd, fd, dofs_per_node=1)
            for r, fnode in enumerate(fd.gamma_nodes):
                row = side.rows[r]
                if len(row) == 1 and abs(row[0][1] - 1.0) <= 1e-12:
                    continue               # coincides with a coarse node
                slave_rows[int(fmap[fnode])] = [
                    (int(coarse_to_merged[cd.gamma_nodes[j]]), w) for j, w in row]

        tris_blocks.append(fmap[fmesh.tris])
        for tag, els in fmesh.elem_tags.items():
            if tag.startswith("inclusion"):
                name = f"p{s}_{tag}"
                elem_tags[name] = (els + elem_offset).tolist()
                coeffs[name] = pm.phys.coeffs[tag]
        elem_offset += fmesh.n_tris

    merged = TriMesh(
        nodes=np.vstack(merged_coords) if merged_coords else np.zeros((0, 2)),
        tris=np.vstack(tris_blocks) if tris_blocks else np.zeros((0, 3), dtype=np.int64),
        node_tags={}, elem_tags={k: np.sort(np.array(v, dtype=np.int64))
                                 for k, v in elem_tags.items()})
    rphys = fem.Physics(kind=sc.kind, default=sc.coefficient, coeffs=coeffs,
                        source=sc.source)
    km, fm = fem.assemble(merged, rphys)

    # constraint matrix: identity on masters, interpolation rows on slaves
    n_nodes = merged.n_nodes
    is_slave = np.zeros(n_nodes, dtype=bool)
    is_slave[list(slave_rows)] = True
    master_nodes = np.flatnonzero(~is_slave)
    master_index = np.full(n_nodes, -1, dtype=np.int64)
    master_index[master_nodes] = np.arange(master_nodes.size)
    ii, jj, ww = [], [], []
    for n in range(n_nodes):
        row = [(n, 1.0)] if not is_slave[n] else slave_rows[n]
        for mnode, w in row:
            for c in range(dpn):
                ii.append(dpn * n + c)
                jj.append(dpn * master_index[mnode] + c)
                ww.append(w)
    constraint = sp.csr_matrix((ww, (ii, jj)),
                               shape=(dpn * n_nodes, dpn * master_nodes.size))

    kred = (constraint.T @ km.to_scipy() @ constraint).tocsr()
    fred = constraint.T @ fm

    # Dirichlet sides of the domain, applied to master nodes geometrically
    eps = _ALIGN_RTOL * max(x1 - x0, y1 - y0)
    fixed_mask = np.zeros(master_nodes.size, dtype=bool)
    coords = merged.nodes[master_nodes]
    for side in sc.dirichlet:
        if side == "bottom":
            fixed_mask |= np.abs(coords[:, 1] - y0) <= eps
        elif side == "top":
            fixed_mask |= np.abs(coords[:, 1] - y1) <= eps
        elif side == "left":
            fixed_mask |= np.abs(coords[:, 0] - x0) <= eps
        elif side == "right":
            fixed_mask |= np.abs(coords[:, 0] - x1) <= eps
    rdm = fem.DofMap(n_nodes=master_nodes.size, dofs_per_node=dpn,
                     fixed_dofs=fem.node_dofs(np.flatnonzero(fixed_mask), dpn),
                     free_dofs=fem.node_dofs(np.flatnonzero(~fixed_mask), dpn))
    rdm.fixed_dofs.sort()
    rdm.free_dofs.sort()
    kred_ff = sparse.from_scipy(kred[rdm.free_dofs][:, rdm.free_dofs])
    rkfc = kred[rdm.free_dofs][:, rdm.fixed_dofs].tocsr()

    global_node_map = coarse_to_merged.copy()
    return ReferenceModel(
        mesh=merged, phys=rphys, constraint=constraint, dofmap=rdm,
        stiffness_red=sparse.from_scipy(kred), load_red=fred,
        factor=sparse.factorize(kred_ff), kfc=rkfc,
        global_node_map=global_node_map, patch_node_maps=patch_node_maps)


def reference_solve(rm: ReferenceModel) -> np.ndarray:
    """Direct solve of the reference problem; returns values on merged nodes."""
    if rm._solution is not None:
        return rm._solution
    dm = rm.dofmap
    rhs = rm.load_red[dm.free_dofs]        # zero Dirichlet values
    u_free = sparse.solve(rm.factor, rhs)
    u_master = np.zeros(dm.n_dofs)
    u_master[dm.free_dofs] = u_free
    rm._solution = rm.constraint @ u_master
    return rm._solution


def reference_errors(gm: GlobalModel, patches: list[PatchModel],
                     rm: ReferenceModel, u_global: np.ndarray,
                     u_patches: list) -> dict[str, float]:
    """Relative max-norm errors against the reference, per subdomain.

    The coarse solution is compared on the complement and interface nodes
    only (inside the patches it is a fictitious continuation), each patch on
    all of its nodes.  Errors are scaled by the reference max amplitude.
    """
    u_r = reference_solve(rm)
    scale = max(np.abs(u_r).max(), np.finfo(float).tiny)
    dpn = gm.dofs_per_node
    errors: dict[str, float] = {}
    keep = np.flatnonzero(rm.global_node_map >= 0)
    gdofs = fem.node_dofs(keep, dpn)
    rdofs = fem.node_dofs(rm.global_node_map[keep], dpn)
    errors["global"] = float(np.abs(u_global[gdofs] - u_r[rdofs]).max() / scale)
    for pm, fmap, u_s in zip(patches, rm.patch_node_maps, u_patches):
        if u_s is None:
            errors[f"patch{pm.sid}"] = float("nan")
            continue
        err = np.abs(u_s - u_r[fem.node_dofs(fmap, dpn)]).max()
        errors[f"patch{pm.sid}"] = float(err / scale)
    return errors
