"""Mutable polygonal tessellation with aligned-edge awareness.

Cells, edges and vertices live in index-based stores; removal never happens,
cells are deactivated instead so ids stay stable for reporting. Hanging nodes
are always represented as aligned edges inside the coarser neighbour's loop;
there is no conformity enforcement step. Vertices are global objects carrying
a 3D position plus one 2D image per incident fracture plane, which makes edges
on fracture intersections shared objects with more than two neighbouring
cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo

INTERIOR = "interior"
DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class MeshTopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    """Isometric chart of a planar fracture: local (u, v) -> 3D."""

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray

    @classmethod
    def identity(cls) -> "Frame":
        return cls(np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))

    @classmethod
    def from_polygon(cls, pts3) -> "Frame":
        pts3 = np.asarray(pts3, dtype=float)
        o = pts3[0]
        u = pts3[1] - o
        u = u / np.linalg.norm(u)
        n = np.zeros(3)
        for i in range(1, len(pts3) - 1):
            n += np.cross(pts3[i] - o, pts3[i + 1] - o)
        n = n / np.linalg.norm(n)
        v = np.cross(n, u)
        return cls(o, u, v / np.linalg.norm(v))

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.u_axis, self.v_axis)

    def to_local(self, p3) -> np.ndarray:
        d = np.asarray(p3, dtype=float) - self.origin
        return np.array([d @ self.u_axis, d @ self.v_axis])

    def to_global(self, uv) -> np.ndarray:
        u, v = float(uv[0]), float(uv[1])
        return self.origin + u * self.u_axis + v * self.v_axis


class Vertex:
    __slots__ = ("id", "pos3", "_uv")

    def __init__(self, vid, pos3):
        self.id = vid
        self.pos3 = np.asarray(pos3, dtype=float)
        self._uv = {}

    def uv(self, mesh, fracture_id):
        got = self._uv.get(fracture_id)
        if got is None:
            got = mesh.frames[fracture_id].to_local(self.pos3)
            self._uv[fracture_id] = got
        return got


class MeshEdge:
    __slots__ = (
        "id", "endpoints", "neighbors", "marked", "boundary_label",
        "trace_id", "bc_tag", "alive", "_length",
    )

    def __init__(self, eid, va, vb):
        self.id = eid
        self.endpoints = (va, vb)
        self.neighbors = set()
        self.marked = False
        self.boundary_label = INTERIOR
        self.trace_id = None
        self.bc_tag = None
        self.alive = True
        self._length = None

    def canonical(self):
        a, b = self.endpoints
        return (a, b) if a < b else (b, a)


class MeshCell:
    __slots__ = ("id", "vertices", "edges", "active", "fracture", "revision", "cache")

    def __init__(self, cid, vertices, edges, fracture):
        self.id = cid
        self.vertices = list(vertices)   # CCW vertex ids; edge i joins v[i] -> v[i+1]
        self.edges = list(edges)
        self.active = True
        self.fracture = fracture
        self.revision = 0
        self.cache = {}

    def touch(self):
        self.revision += 1
        self.cache.clear()


@dataclass
class AlignedGroup:
    """Maximal contiguous run of collinear edges of one cell."""

    cell_id: int
    positions: list        # loop positions, contiguous (mod loop length)
    edge_ids: list
    total_length: float
    count: int


@dataclass
class MeshQualityReport:
    n_cells: int
    n_tri: int
    n_quad: int
    n_tri_al: int
    n_quad_al: int
    r_tri: float
    r_quad: float
    r_poly: float
    r_tri_al: float
    r_quad_al: float
    efficiency: float          # cells per DOF
    ar_rr: dict = field(default_factory=dict)   # min/q1/med/q3/max/avg
    ar_rh: dict = field(default_factory=dict)
    h_stats: dict = field(default_factory=dict)
    r_stats: dict = field(default_factory=dict)
    rho_stats: dict = field(default_factory=dict)
    c1_min_r_over_d: float = float("nan")
    c2_min_h_over_d: float = float("nan")
    c3_max_n_vertices: int = 0
    c4_max_group_ratio: float = float("nan")


def _stats(values) -> dict:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return {k: float("nan") for k in ("min", "q1", "med", "q3", "max", "avg")}
    q1, med, q3 = np.percentile(a, [25, 50, 75])
    return {
        "min": float(a.min()), "q1": float(q1), "med": float(med),
        "q3": float(q3), "max": float(a.max()), "avg": float(a.mean()),
    }


class Mesh:
    """Polygonal tessellation over one or more fracture planes."""

    def __init__(self, frames=None):
        self.frames = frames if frames is not None else {0: Frame.identity()}
        self.vertices: list[Vertex] = []
        self.edges: list[MeshEdge] = []
        self.cells: list[MeshCell] = []
        self._edge_by_pair = {}
        self.nvb_newest = {}       # cell id -> newest vertex id (triangle history)
        self.scale = 1.0           # global length scale for merge tolerances

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def build(cls, cell_specs, frames=None, boundary_rule=None, traces=None):
        """Build a conforming mesh from per-fracture convex polygons.

        cell_specs: iterable of (fracture_id, polygon (N,2) in that fracture's
        frame, CCW). Shared vertices are merged by 3D position hashing; any
        mesh vertex lying inside another cell's edge is inserted there as an
        aligned-edge (hanging) node. `boundary_rule(mesh, edge_id)` may return
        (label, bc_tag) for edges with a single neighbour; the default labels
        them Dirichlet. `traces` is a list of (trace_id, p0_3d, p1_3d) used to
        tag edges lying on fracture intersections.
        """
        mesh = cls(frames)
        specs = []
        all_pts = []
        for fid, poly in cell_specs:
            p = geo.validate_polygon(poly)
            if not geo.is_convex(p):
                raise MeshTopologyError("build requires convex cells")
            frame = mesh.frames[fid]
            p3 = np.array([frame.to_global(q) for q in p])
            specs.append((fid, p, p3))
            all_pts.append(p3)
        pts = np.concatenate(all_pts)
        mesh.scale = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) or 1.0
        tol = geo.TOL_LEN * mesh.scale

        # Merge vertices by 3D spatial hash.
        grid = {}

        def lookup(p3):
            key = tuple(np.floor(p3 / max(tol, 1e-300)).astype(np.int64))
            for dk in _HASH_OFFSETS:
                bucket = grid.get((key[0] + dk[0], key[1] + dk[1], key[2] + dk[2]))
                if bucket is None:
                    continue
                for vid in bucket:
                    if np.linalg.norm(mesh.vertices[vid].pos3 - p3) <= tol:
                        return vid
            return None

        def intern(p3, fid, uv):
            vid = lookup(p3)
            if vid is None:
                vid = len(mesh.vertices)
                mesh.vertices.append(Vertex(vid, p3))
                key = tuple(np.floor(p3 / max(tol, 1e-300)).astype(np.int64))
                grid.setdefault(key, []).append(vid)
            mesh.vertices[vid]._uv.setdefault(fid, np.asarray(uv, dtype=float))
            return vid

        loops = []
        for fid, p, p3 in specs:
            loops.append((fid, [intern(p3[i], fid, p[i]) for i in range(len(p))]))

        # Insert hanging vertices: any mesh vertex strictly inside a loop edge.
        vpos = np.array([v.pos3 for v in mesh.vertices])
        refined = []
        for fid, loop in loops:
            out = []
            n = len(loop)
            for i in range(n):
                a, b = loop[i], loop[(i + 1) % n]
                pa, pb = mesh.vertices[a].pos3, mesh.vertices[b].pos3
                seg = pb - pa
                L2 = float(seg @ seg)
                t = ((vpos - pa) @ seg) / L2
                d2 = ((vpos - pa - t[:, None] * seg) ** 2).sum(axis=1)
                inside = np.where(
                    (d2 <= tol * tol)
                    & (t * math.sqrt(L2) > tol)
                    & ((1.0 - t) * math.sqrt(L2) > tol)
                )[0]
                inside = [int(j) for j in inside if j not in (a, b)]
                inside.sort(key=lambda j: t[j])
                out.append(a)
                out.extend(inside)
            refined.append((fid, out))

        for fid, loop in refined:
            mesh._add_cell(fid, loop)

        for e in mesh.edges:
            if len(e.neighbors) == 1:
                e.boundary_label = DIRICHLET
        if boundary_rule is not None:
            for e in mesh.edges:
                if len(e.neighbors) == 1:
                    label, tag = boundary_rule(mesh, e.id)
                    e.boundary_label = label
                    e.bc_tag = tag
        if traces:
            for tid, p0, p1 in traces:
                mesh._tag_trace(tid, np.asarray(p0, float), np.asarray(p1, float), tol)
        mesh.check_incidence()
        return mesh

    def _tag_trace(self, tid, p0, p1, tol):
        seg = p1 - p0
        L2 = float(seg @ seg)
        for e in self.edges:
            if not e.alive:
                continue
            ok = True
            for vid in e.endpoints:
                p = self.vertices[vid].pos3
                t = float((p - p0) @ seg) / L2
                if t < -tol or t > 1 + tol or np.linalg.norm(p - (p0 + t * seg)) > tol:
                    ok = False
                    break
            if ok:
                e.trace_id = tid

    def _get_edge(self, va, vb):
        key = (va, vb) if va < vb else (vb, va)
        eid = self._edge_by_pair.get(key)
        if eid is None:
            eid = len(self.edges)
            self.edges.append(MeshEdge(eid, va, vb))
            self._edge_by_pair[key] = eid
        return eid

    def _add_cell(self, fid, vertex_loop):
        cid = len(self.cells)
        n = len(vertex_loop)
        eids = []
        for i in range(n):
            eid = self._get_edge(vertex_loop[i], vertex_loop[(i + 1) % n])
            self.edges[eid].neighbors.add(cid)
            eids.append(eid)
        cell = MeshCell(cid, vertex_loop, eids, fid)
        self.cells.append(cell)
        return cid

    # ------------------------------------------------------------------
    # queries

    def active_cells(self):
        return [c for c in self.cells if c.active]

    def cell_polygon(self, cid) -> np.ndarray:
        cell = self.cells[cid]
        poly = cell.cache.get("poly")
        if poly is None:
            poly = np.array([self.vertices[v].uv(self, cell.fracture) for v in cell.vertices])
            cell.cache["poly"] = poly
        return poly

    def cell_geometry(self, cid) -> geo.CellGeometry:
        cell = self.cells[cid]
        g = cell.cache.get("geom")
        if g is None:
            g = geo.compute_cell_geometry(self.cell_polygon(cid))
            cell.cache["geom"] = g
        return g

    def edge_length(self, eid) -> float:
        edge = self.edges[eid]
        if edge._length is None:
            a, b = edge.endpoints
            d = self.vertices[a].pos3 - self.vertices[b].pos3
            edge._length = math.sqrt(float(d @ d))
        return edge._length

    def edge_uv(self, eid, fracture_id):
        a, b = self.edges[eid].endpoints
        return (
            self.vertices[a].uv(self, fracture_id),
            self.vertices[b].uv(self, fracture_id),
        )

    def _turn_flags(self, cell):
        """flags[i] is True when vertex i is an interior (collinear) vertex."""
        flags = cell.cache.get("turns")
        if flags is None:
            poly = self.cell_polygon(cell.id)
            n = len(poly)
            flags = [
                geo.are_collinear(poly[i - 1], poly[i], poly[(i + 1) % n])
                for i in range(n)
            ]
            cell.cache["turns"] = flags
        return flags

    def aligned_group(self, cid, eid) -> AlignedGroup:
        """Maximal contiguous run of collinear edges of the cell containing eid."""
        cell = self.cells[cid]
        try:
            pos = cell.edges.index(eid)
        except ValueError:
            raise MeshTopologyError(f"edge {eid} is not part of cell {cid}")
        flags = self._turn_flags(cell)
        n = len(cell.edges)
        start = pos
        # Edge i runs from vertex i to i+1; a collinear vertex joins edges i-1, i.
        while flags[start] and n > 1:
            nxt = (start - 1) % n
            if nxt == pos:
                break
            start = nxt
        positions = [start]
        while flags[(positions[-1] + 1) % n]:
            nxt = (positions[-1] + 1) % n
            if nxt == start:
                break
            positions.append(nxt)
        eids = [cell.edges[i] for i in positions]
        total = sum(self.edge_length(e) for e in eids)
        return AlignedGroup(cid, positions, eids, total, len(eids))

    def aligned_groups(self, cid):
        """All maximal aligned runs of a cell, each edge in exactly one run."""
        cell = self.cells[cid]
        flags = self._turn_flags(cell)
        n = len(cell.edges)
        corners = [i for i in range(n) if not flags[i]]
        groups = []
        for a, b in zip(corners, corners[1:] + [corners[0] + n]):
            positions = [i % n for i in range(a, b)]
            eids = [cell.edges[i] for i in positions]
            total = sum(self.edge_length(e) for e in eids)
            groups.append(AlignedGroup(cid, positions, eids, total, len(eids)))
        return groups

    def unified_loop(self, cid):
        """Corner vertex ids of the cell (interior aligned vertices removed)."""
        cell = self.cells[cid]
        flags = self._turn_flags(cell)
        return [v for v, f in zip(cell.vertices, flags) if not f]

    def unify_aligned(self, cid) -> np.ndarray:
        """Polygon of the cell with every aligned-group interior vertex removed."""
        cell = self.cells[cid]
        fid = cell.fracture
        return np.array([self.vertices[v].uv(self, fid) for v in self.unified_loop(cid)])

    # ------------------------------------------------------------------
    # mutation

    def split_edge(self, eid, t_stored, mark=False):
        """Split an edge at parameter t (in stored endpoint order).

        Creates the midpoint vertex, replaces the edge by two children in every
        incident cell's loop (the aligned-edge hanging-node mechanism) and
        returns (vertex_id, (edge_a, edge_b)) with edge_a incident to the
        stored first endpoint.
        """
        edge = self.edges[eid]
        if not edge.alive:
            raise MeshTopologyError(f"edge {eid} is dead")
        va, vb = edge.endpoints
        pa, pb = self.vertices[va].pos3, self.vertices[vb].pos3
        pos3 = pa + t_stored * (pb - pa)
        w = len(self.vertices)
        self.vertices.append(Vertex(w, pos3))

        e1 = len(self.edges)
        self.edges.append(MeshEdge(e1, va, w))
        e2 = len(self.edges)
        self.edges.append(MeshEdge(e2, w, vb))
        for child in (self.edges[e1], self.edges[e2]):
            child.boundary_label = edge.boundary_label
            child.trace_id = edge.trace_id
            child.bc_tag = edge.bc_tag
            child.marked = mark or edge.marked
            child.neighbors = set(edge.neighbors)
        self._edge_by_pair.pop(edge.canonical(), None)
        self._edge_by_pair[self.edges[e1].canonical()] = e1
        self._edge_by_pair[self.edges[e2].canonical()] = e2
        edge.alive = False
        edge.neighbors = set()

        for cid in sorted(self.edges[e1].neighbors):
            cell = self.cells[cid]
            i = cell.edges.index(eid)
            forward = cell.vertices[i] == va
            cell.edges[i:i + 1] = [e1, e2] if forward else [e2, e1]
            cell.vertices.insert(i + 1, w)
            cell.touch()
        return w, (e1, e2)

    def split_cell(self, cid, end_a, end_b, mark=True, chord_trace_id=None):
        """Bisect a convex cell by the chord between two boundary points.

        Each end is ("vertex", vertex_id) or ("edge", edge_id, t) with t the
        parameter along the cell's traversal direction of that edge. Boundary
        edges split by a chord endpoint inherit labels and are marked when
        `mark` is set. Returns (child1_id, child2_id).
        """
        cell = self.cells[cid]
        if not cell.active:
            raise MeshTopologyError(f"cell {cid} is not active")

        def resolve(end):
            if end[0] == "vertex":
                return end[1]
            _, eid, t = end
            i = cell.edges.index(eid)
            va = cell.vertices[i]
            stored_a = self.edges[eid].endpoints[0]
            t_stored = t if stored_a == va else 1.0 - t
            w, _ = self.split_edge(eid, t_stored, mark=mark)
            return w

        wa = resolve(end_a)
        wb = resolve(end_b)
        if wa == wb:
            raise geo.DegenerateGeometryError("chord endpoints coincide")
        ia = cell.vertices.index(wa)
        ib = cell.vertices.index(wb)
        n = len(cell.vertices)
        if (ia + 1) % n == ib or (ib + 1) % n == ia:
            raise geo.DegenerateGeometryError("chord coincides with an existing edge")

        def chain(i, j):
            out = [i]
            while out[-1] != j:
                out.append((out[-1] + 1) % n)
            return out

        idx1 = chain(ia, ib)     # wa .. wb, CCW
        idx2 = chain(ib, ia)     # wb .. wa, CCW
        loop1 = [cell.vertices[i] for i in idx1]
        loop2 = [cell.vertices[i] for i in idx2]
        echain1 = [cell.edges[i] for i in idx1[:-1]]
        echain2 = [cell.edges[i] for i in idx2[:-1]]

        chord = self._get_edge(wb, wa)
        chord_edge = self.edges[chord]
        if chord_edge.neighbors:
            raise geo.DegenerateGeometryError("chord duplicates an existing edge")
        if chord_trace_id is not None:
            chord_edge.trace_id = chord_trace_id

        c1 = len(self.cells)
        cell1 = MeshCell(c1, loop1, echain1 + [chord], cell.fracture)
        self.cells.append(cell1)
        c2 = len(self.cells)
        cell2 = MeshCell(c2, loop2, echain2 + [chord], cell.fracture)
        self.cells.append(cell2)

        for eid in echain1:
            self.edges[eid].neighbors.discard(cid)
            self.edges[eid].neighbors.add(c1)
        for eid in echain2:
            self.edges[eid].neighbors.discard(cid)
            self.edges[eid].neighbors.add(c2)
        chord_edge.neighbors.update((c1, c2))

        cell.active = False
        self.nvb_newest.pop(cid, None)
        for child in (c1, c2):
            geo.validate_polygon(self.cell_polygon(child))
        return c1, c2

    # ------------------------------------------------------------------
    # diagnostics

    def check_incidence(self):
        """Edge-cell incidence must be symmetric; raises on violation."""
        for c in self.cells:
            if not c.active:
                continue
            for eid in c.edges:
                e = self.edges[eid]
                if not e.alive or c.id not in e.neighbors:
                    raise MeshTopologyError(f"cell {c.id} references edge {eid} inconsistently")
        for e in self.edges:
            if not e.alive:
                continue
            for cid in e.neighbors:
                if not self.cells[cid].active or e.id not in self.cells[cid].edges:
                    raise MeshTopologyError(f"edge {e.id} lists cell {cid} inconsistently")

    def active_area(self, fracture_id=None) -> float:
        total = 0.0
        for c in self.active_cells():
            if fracture_id is None or c.fracture == fracture_id:
                total += self.cell_geometry(c.id).area
        return total

    def _cell_quality(self, cell):
        q = cell.cache.get("quality")
        if q is None:
            g = self.cell_geometry(cell.id)
            n_unified = len(self.unified_loop(cell.id))
            ratios = []
            for grp in self.aligned_groups(cell.id):
                lens = [self.edge_length(e) for e in grp.edge_ids]
                ratios.append(max(lens) / min(lens))
            q = {
                "ar_rr": g.ar_rr, "ar_rh": g.ar_rh, "h": g.h, "r": g.r,
                "rho": g.rho, "d": g.D, "n_raw": len(cell.vertices),
                "n_unified": n_unified, "group_ratio": max(ratios),
            }
            cell.cache["quality"] = q
        return q

    def quality_report(self, dof_count) -> MeshQualityReport:
        cells = self.active_cells()
        n = len(cells)
        qs = [self._cell_quality(c) for c in cells]
        n_tri = sum(1 for q in qs if q["n_raw"] == 3)
        n_quad = sum(1 for q in qs if q["n_raw"] == 4)
        n_tri_al = sum(1 for q in qs if q["n_unified"] == 3)
        n_quad_al = sum(1 for q in qs if q["n_unified"] == 4)
        rep = MeshQualityReport(
            n_cells=n,
            n_tri=n_tri,
            n_quad=n_quad,
            n_tri_al=n_tri_al,
            n_quad_al=n_quad_al,
            r_tri=n_tri / n,
            r_quad=n_quad / n,
            r_poly=1.0 - (n_tri + n_quad) / n,
            r_tri_al=n_tri_al / n,
            r_quad_al=n_quad_al / n,
            efficiency=n / dof_count if dof_count else float("nan"),
            ar_rr=_stats([q["ar_rr"] for q in qs]),
            ar_rh=_stats([q["ar_rh"] for q in qs]),
            h_stats=_stats([q["h"] for q in qs]),
            r_stats=_stats([q["r"] for q in qs]),
            rho_stats=_stats([q["rho"] for q in qs]),
            c1_min_r_over_d=min(q["r"] / q["d"] for q in qs),
            c2_min_h_over_d=min(q["h"] / q["d"] for q in qs),
            c3_max_n_vertices=max(q["n_raw"] for q in qs),
            c4_max_group_ratio=max(q["group_ratio"] for q in qs),
        )
        return rep


_HASH_OFFSETS = [
    (i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
]


def build_mesh(cell_polygons, boundary_rule=None) -> Mesh:
    """Planar convenience wrapper: polygons in the z=0 plane, fracture id 0."""
    return Mesh.build(
        [(0, p) for p in cell_polygons],
        frames={0: Frame.identity()},
        boundary_rule=boundary_rule,
    )
