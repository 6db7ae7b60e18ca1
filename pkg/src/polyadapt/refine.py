"""Quality-checked bisection of marked polygonal cells.

A marked cell is bisected along its max-momentum direction (newest-vertex
bisection for triangles), the cut is smoothed to edge midpoints or collapsed
to vertices by the two-part quality check, and refinement extends to
neighbouring cells whose freshly created edges fail the same check. Hanging
nodes become aligned edges of the neighbours; nothing is ever re-meshed.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .mesh import Mesh


@dataclass(frozen=True)
class RefinementParams:
    """Thresholds of the two quality checks.

    c_rho relaxes (< 1) or tightens (>= 1) the bulk-size check; c_al controls
    how non-uniform aligned edge runs may become (values above 1 effectively
    forbid new aligned edges).
    """

    c_rho: float = 0.5
    c_al: float = 1.0

    def __post_init__(self):
        if not (self.c_rho >= 0.0 and self.c_al >= 0.0):
            raise ValueError("quality parameters must be non-negative")


@dataclass
class ChordPlan:
    ends: tuple                      # two ("vertex", vid) / ("edge", eid, t) specs
    points: tuple                    # planned 2D endpoints, for reporting
    is_triangle: bool
    used_fallback: bool = False


@dataclass
class RefineOutcome:
    to_refine: list = field(default_factory=list)   # originally marked
    refined: list = field(default_factory=list)     # actually split, in order
    extended: list = field(default_factory=list)    # added by extension
    chords: dict = field(default_factory=dict)      # cell id -> ChordPlan

    @property
    def n_extended(self) -> int:
        return len(self.extended)


def check_quality(mesh: Mesh, cell_id: int, edge_id: int, s: int, params: RefinementParams) -> bool:
    """True when edge `edge_id` may be split into s uniform parts.

    Both conditions must hold over all neighbouring cells of the edge:
    the edge must not be short against the neighbours' bulk size
    min(h, r), and the s new pieces must stay quasi-uniform within the
    aligned runs the edge belongs to.
    """
    edge = mesh.edges[edge_id]
    if edge_id not in mesh.cells[cell_id].edges:
        raise ValueError(f"edge {edge_id} is not on cell {cell_id}")
    length = mesh.edge_length(edge_id)
    neighbors = sorted(edge.neighbors)

    rho = max(mesh.cell_geometry(cid).rho for cid in neighbors)
    if length < params.c_rho * rho * s:
        return False

    aligned = 0.0
    for cid in neighbors:
        grp = mesh.aligned_group(cid, edge_id)
        pieces = grp.count + (s - 1)
        if pieces == 1:
            # A singleton run without a split is trivially quasi-uniform:
            # there are no other aligned edges to compare against. Without
            # this the s=1 extension check could never pass for c_al > 1 and
            # refinement would not terminate.
            continue
        aligned = max(aligned, grp.total_length / pieces)
    if length < params.c_al * aligned * s:
        return False
    return True


def _nvb_newest(mesh: Mesh, cell_id: int, corners):
    """Newest vertex of a (possibly aligned-edge) triangle.

    Triangles without history are seeded with the vertex opposite the
    longest unified side.
    """
    newest = mesh.nvb_newest.get(cell_id)
    if newest in corners:
        return newest
    fid = mesh.cells[cell_id].fracture
    pts = [mesh.vertices[v].uv(mesh, fid) for v in corners]
    lens = [np.linalg.norm(pts[(i + 1) % 3] - pts[i]) for i in range(3)]
    longest = int(np.argmax(lens))
    return corners[(longest + 2) % 3]


def max_momentum(mesh: Mesh, cell_id: int):
    """Cut line (point, unit direction) for the unified polygon of the cell.

    Triangles return the newest-vertex bisection line; other polygons the
    line through the centroid parallel to the eigenvector of the maximum
    eigenvalue of the inertia tensor. Near-isotropic tensors break the tie
    with the perpendicular of the longest unified edge.
    """
    corners = mesh.unified_loop(cell_id)
    fid = mesh.cells[cell_id].fracture
    pts = np.array([mesh.vertices[v].uv(mesh, fid) for v in corners])
    if len(corners) == 3:
        newest = _nvb_newest(mesh, cell_id, corners)
        i = corners.index(newest)
        mid = 0.5 * (pts[(i + 1) % 3] + pts[(i + 2) % 3])
        d = mid - pts[i]
        return pts[i], d / np.linalg.norm(d)
    g = geo.compute_cell_geometry(pts)
    seg = np.roll(pts, -1, axis=0) - pts
    longest = int(np.argmax((seg ** 2).sum(axis=1)))
    e = seg[longest]
    tie = np.array([-e[1], e[0]])
    d = geo.eigen_max_direction(g.inertia, tie_break_dir=tie)
    return g.centroid, d


def smooth_direction(mesh: Mesh, cell_id: int, cut, params: RefinementParams) -> ChordPlan:
    """Adjust the cut line into a chord with endpoints on the actual loop.

    Triangles keep the cut unchanged (endpoints snap to vertices only).
    Otherwise each intersected edge contributes its midpoint when the quality
    check admits a half-split, or its vertex closest to the hit when not.
    Chords that would degenerate fall back to joining the two edge midpoints.
    """
    cell = mesh.cells[cell_id]
    poly = mesh.cell_polygon(cell_id)
    point, direction = cut
    span = geo.segment_clip_convex(poly, point, direction)
    if span is None:
        raise geo.DegenerateGeometryError("cut line misses the cell")
    anchor = np.asarray(point, float) + 0.5 * (span[0] + span[1]) * np.asarray(direction, float)
    hits = geo.line_polygon_intersection(poly, anchor, direction)
    # The early return tests the actual loop: a triangle with aligned edges
    # must still run the per-edge checks so the cut can collapse onto an
    # existing vertex of a non-uniform aligned run.
    triangle = len(cell.vertices) == 3

    def resolve(hit, force_midpoint=False):
        i, s, pt = hit
        eid = cell.edges[i]
        if s <= 0.0 and not force_midpoint:
            return ("vertex", cell.vertices[i]), poly[i]
        if triangle and not force_midpoint:
            return ("edge", eid, s), pt
        if force_midpoint or check_quality(mesh, cell_id, eid, 2, params):
            t = 0.5
        else:
            t = 0.0 if s <= 0.5 else 1.0
        n = len(cell.vertices)
        a, b = poly[i], poly[(i + 1) % n]
        if t == 0.0:
            return ("vertex", cell.vertices[i]), a
        if t == 1.0:
            return ("vertex", cell.vertices[(i + 1) % n]), b
        return ("edge", eid, t), a + t * (b - a)

    ends = [resolve(h) for h in hits]
    if _chord_is_valid(mesh, cell_id, hits, ends):
        return ChordPlan((ends[0][0], ends[1][0]), (ends[0][1], ends[1][1]), triangle)

    # Degenerate chord (coincident or loop-adjacent endpoints). Try vertex
    # chords first, sliding an endpoint to the other end of its hit edge:
    # they split no edge and so cannot seed new aligned runs. Midpoints of
    # the two hit edges are the last resort.
    n = len(cell.vertices)

    def vertex_end(i, which):
        j = i if which == 0 else (i + 1) % n
        return ("vertex", cell.vertices[j]), poly[j]

    candidates = []
    for wa in (0, 1):
        for wb in (0, 1):
            candidates.append([vertex_end(hits[0][0], wa), vertex_end(hits[1][0], wb)])
    candidates.append([resolve(h, force_midpoint=True) for h in hits])
    for ends in candidates:
        if _chord_is_valid(mesh, cell_id, hits, ends):
            return ChordPlan(
                (ends[0][0], ends[1][0]), (ends[0][1], ends[1][1]), triangle,
                used_fallback=True,
            )
    raise geo.DegenerateGeometryError(f"no valid bisection chord for cell {cell_id}")


def _chord_is_valid(mesh: Mesh, cell_id: int, hits, ends) -> bool:
    """Both planned children must have robustly positive area.

    Each chord end gets a cyclic key along the loop (vertex index, or edge
    index plus parameter); one child collects the loop vertices strictly
    between the keys going CCW, the other child the complement.
    """
    cell = mesh.cells[cell_id]
    poly = mesh.cell_polygon(cell_id)
    n = len(poly)
    keys = []
    for (spec, pt), (i, _s, _pt) in zip(ends, hits):
        if spec[0] == "vertex":
            keys.append((float(cell.vertices.index(spec[1])), pt))
        else:
            keys.append((float(i) + float(spec[2]), pt))
    (ka, pa), (kb, pb) = keys
    if abs(ka - kb) < 1e-12 or abs(abs(ka - kb) - n) < 1e-12:
        return False

    def collect(k0, k1):
        span = (k1 - k0) % n
        pts = []
        step = 1
        k = math.floor(k0) + 1
        while (k - k0) % n < span - 1e-12 and step <= n:
            pts.append(poly[int(k % n)])
            k += 1
            step += 1
        return pts

    chain1 = [pa] + collect(ka, kb) + [pb]
    chain2 = [pb] + collect(kb, ka) + [pa]
    scale = geo.polygon_diameter(poly) ** 2
    for chain in (chain1, chain2):
        if len(chain) < 3:
            return False
        if geo.polygon_area(np.array(chain)) <= geo.TOL_AREA * scale * 1e3:
            return False
    return True


def refine(mesh: Mesh, marked, params: RefinementParams) -> RefineOutcome:
    """Split every marked cell once, extending to failing neighbours.

    Work proceeds in ascending cell-id order, breadth-first over extension
    additions; each cell is split at most once per call. Edges created by a
    chord stay marked until a quality check passes for them from some
    neighbouring cell.
    """
    outcome = RefineOutcome(to_refine=sorted(marked))
    queue = deque(outcome.to_refine)
    queued = set(queue)
    original = set(outcome.to_refine)

    while queue:
        cid = queue.popleft()
        queued.discard(cid)
        cell = mesh.cells[cid]
        if not cell.active:
            continue
        was_triangle = len(mesh.unified_loop(cid)) == 3
        newest = _nvb_newest(mesh, cid, mesh.unified_loop(cid)) if was_triangle else None
        cut = max_momentum(mesh, cid)
        plan = smooth_direction(mesh, cid, cut, params)
        c1, c2 = mesh.split_cell(cid, plan.ends[0], plan.ends[1], mark=True)
        if was_triangle:
            shared = set(mesh.cells[c1].vertices) & set(mesh.cells[c2].vertices)
            shared.discard(newest)
            if len(shared) == 1:
                mid = shared.pop()
                mesh.nvb_newest[c1] = mid
                mesh.nvb_newest[c2] = mid
        outcome.refined.append(cid)
        outcome.chords[cid] = plan
        if cid not in original:
            outcome.extended.append(cid)

        # Scan every marked edge on the children's boundaries. Passing edges
        # are unmarked; failing ones stay marked (they are re-examined after
        # later splits) and extend the refinement to the neighbours whose
        # own bulk size or aligned run violates the threshold. Extending
        # every neighbour indiscriminately would re-split the fine side of
        # a fresh hanging pair and the cascade could breed without bound.
        marked_edges = set()
        for child in (c1, c2):
            for eid in mesh.cells[child].edges:
                if mesh.edges[eid].marked:
                    marked_edges.add(eid)
        for eid in sorted(marked_edges):
            edge = mesh.edges[eid]
            if not edge.alive or not edge.marked:
                continue
            holders = sorted(q for q in edge.neighbors if mesh.cells[q].active)
            if not holders:
                continue
            if check_quality(mesh, holders[0], eid, 1, params):
                edge.marked = False
                continue
            length = mesh.edge_length(eid)
            for qid in holders:
                if qid in queued:
                    continue
                blamed = length < params.c_rho * mesh.cell_geometry(qid).rho
                if not blamed:
                    grp = mesh.aligned_group(qid, eid)
                    if grp.count > 1:
                        blamed = length < params.c_al * grp.total_length / grp.count
                if blamed:
                    queue.append(qid)
                    queued.add(qid)
    return outcome
