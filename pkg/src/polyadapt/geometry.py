"""2D polygon primitives: moments, characteristic radii, predicates, quadrature.

All polygons are numpy arrays of shape (N, 2) with vertices in counter-clockwise
order. Consecutive collinear vertices (aligned edges) are allowed everywhere;
only self-intersection, reversed orientation and (near-)zero area are rejected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Relative tolerances (scaled by a local length where applied).
TOL_LEN = 1e-9      # vertex coincidence, relative to cell diameter
TOL_COL = 1e-9      # collinearity, relative to edge lengths
TOL_AREA = 1e-12    # degenerate area, relative to diameter squared
EIG_TIE = 1e-8      # eigengap below which the inertia tensor is treated as isotropic


class DegenerateGeometryError(ValueError):
    """Raised for polygons or cuts that are degenerate at working precision."""


@dataclass(frozen=True)
class CellGeometry:
    """Cached geometric quantities of a convex polygonal cell."""

    centroid: np.ndarray   # (2,)
    area: float
    inertia: np.ndarray    # 2x2 symmetric, about the centroid
    r: float               # min distance centroid -> edges
    R: float               # max distance centroid -> vertices
    h: float               # shortest edge length
    H: float               # longest edge length
    D: float               # diameter
    n_vertices: int

    @property
    def rho(self) -> float:
        return min(self.h, self.r)

    @property
    def ar_rr(self) -> float:
        return self.R / self.r

    @property
    def ar_rh(self) -> float:
        return self.R / self.h


def polygon_area(poly) -> float:
    """Signed area by the shoelace formula (positive for CCW)."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_diameter(poly) -> float:
    p = np.asarray(poly, dtype=float)
    d = p[:, None, :] - p[None, :, :]
    return float(np.sqrt((d ** 2).sum(axis=2).max()))


def is_convex(poly, tol=TOL_COL) -> bool:
    """True if the CCW polygon is convex; collinear consecutive edges allowed."""
    p = np.asarray(poly, dtype=float)
    e = np.roll(p, -1, axis=0) - p
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    lens = np.sqrt((e ** 2).sum(axis=1))
    scale = np.maximum(lens, np.roll(lens, -1)) ** 2
    return bool(np.all(cross >= -tol * scale))


def validate_polygon(poly) -> np.ndarray:
    """Check the polygon invariants; returns the vertex array.

    Requires >= 3 vertices, finite coordinates, distinct consecutive vertices
    and strictly positive signed area.
    """
    p = np.asarray(poly, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
        raise DegenerateGeometryError("polygon needs at least 3 points of dimension 2")
    if not np.all(np.isfinite(p)):
        raise DegenerateGeometryError("non-finite vertex coordinate")
    D = polygon_diameter(p)
    seg = np.roll(p, -1, axis=0) - p
    if np.any((seg ** 2).sum(axis=1) <= (TOL_LEN * D) ** 2):
        raise DegenerateGeometryError("consecutive vertices coincide")
    area = polygon_area(p)
    if area <= TOL_AREA * D * D:
        raise DegenerateGeometryError(f"polygon area {area:g} is not positive")
    return p


def compute_cell_geometry(poly) -> CellGeometry:
    """Exact closed-form polygon moments (Green's theorem) and radii.

    The inertia tensor uses the planar rotational convention
    ``I = integral (|r|^2 Id - r r^T) dA`` about the centroid, so the
    eigenvector of the maximum eigenvalue is perpendicular to the long axis
    of an elongated cell.
    """
    p = validate_polygon(poly)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(cross.sum())
    cx = float(((x + xn) * cross).sum()) / (6.0 * area)
    cy = float(((y + yn) * cross).sum()) / (6.0 * area)
    # Second moments about the origin, then shifted to the centroid.
    ixx = float(((y * y + y * yn + yn * yn) * cross).sum()) / 12.0
    iyy = float(((x * x + x * xn + xn * xn) * cross).sum()) / 12.0
    ixy = float(((x * yn + 2 * x * y + 2 * xn * yn + xn * y) * cross).sum()) / 24.0
    ixx -= area * cy * cy
    iyy -= area * cx * cx
    ixy -= area * cx * cy
    inertia = np.array([[ixx, -ixy], [-ixy, iyy]])

    c = np.array([cx, cy])
    R = float(np.sqrt(((p - c) ** 2).sum(axis=1).max()))
    seg = np.roll(p, -1, axis=0) - p
    lens = np.sqrt((seg ** 2).sum(axis=1))
    h = float(lens.min())
    H = float(lens.max())
    # Distance from the centroid to each edge segment.
    t = np.clip(((c - p) * seg).sum(axis=1) / (lens ** 2), 0.0, 1.0)
    foot = p + t[:, None] * seg
    r = float(np.sqrt(((foot - c) ** 2).sum(axis=1).min()))
    return CellGeometry(
        centroid=c,
        area=area,
        inertia=inertia,
        r=r,
        R=R,
        h=h,
        H=H,
        D=polygon_diameter(p),
        n_vertices=len(p),
    )


def are_collinear(a, b, c, tol_col=TOL_COL) -> bool:
    """True if c deviates from line(a, b) by at most tol_col * max(|ab|, |bc|).

    Implemented through the doubled triangle area so the predicate is
    symmetric in the role of the interior point.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    ab = b - a
    bc = c - b
    cross = abs(ab[0] * (c - a)[1] - ab[1] * (c - a)[0])
    scale = max(float(ab @ ab), float(bc @ bc))
    return cross <= tol_col * scale


def eigen_max_direction(tensor, tie_break_dir=None, tie_tol=EIG_TIE):
    """Unit eigenvector of the maximum eigenvalue of a symmetric 2x2 tensor.

    Near-isotropic tensors (eigengap below tie_tol * trace) fall back to
    tie_break_dir, which callers set to the perpendicular of the longest
    polygon edge for deterministic cuts on symmetric cells.
    """
    a, b = float(tensor[0, 0]), float(tensor[0, 1])
    c = float(tensor[1, 1])
    trace = a + c
    gap = math.hypot(a - c, 2.0 * b)  # lambda_max - lambda_min
    if gap <= tie_tol * abs(trace):
        if tie_break_dir is None:
            return np.array([1.0, 0.0])
        d = np.asarray(tie_break_dir, dtype=float)
        return d / np.linalg.norm(d)
    lam = 0.5 * (trace + gap)
    v1 = np.array([b, lam - a])
    v2 = np.array([lam - c, b])
    v = v1 if v1 @ v1 >= v2 @ v2 else v2
    return v / np.linalg.norm(v)


def line_polygon_intersection(poly, point, direction, tol_len=TOL_LEN):
    """Intersect the line through `point` along `direction` with a convex polygon.

    `point` must be strictly inside. Returns exactly two hits ordered along
    the direction, each as (edge_index, parameter, point); parameters are the
    barycentric coordinate along the edge in [0, 1]. A hit within tol_len of a
    vertex is snapped to that vertex and reported on the edge starting there
    (parameter 0.0).
    """
    p = validate_polygon(poly)
    if not is_convex(p):
        raise DegenerateGeometryError("line_polygon_intersection requires a convex polygon")
    o = np.asarray(point, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    n = len(p)
    D = polygon_diameter(p)
    snap = tol_len * D
    if not point_in_polygon(o, p, include_boundary=False):
        raise DegenerateGeometryError("line origin must lie strictly inside the polygon")

    hits = []  # (t_line, edge_index, s_edge, point)
    for i in range(n):
        a = p[i]
        e = p[(i + 1) % n] - a
        denom = d[0] * (-e[1]) - d[1] * (-e[0])  # cross(d, e) with sign flip
        if abs(denom) < 1e-15 * max(1.0, np.linalg.norm(e)):
            continue  # parallel
        rhs = a - o
        t = (rhs[0] * (-e[1]) - rhs[1] * (-e[0])) / denom
        s = (d[0] * rhs[1] - d[1] * rhs[0]) / denom
        elen = np.linalg.norm(e)
        stol = snap / elen
        if -stol <= s <= 1.0 + stol:
            hits.append((t, i, min(max(s, 0.0), 1.0), a + min(max(s, 0.0), 1.0) * e))

    # Snap near-vertex hits to the vertex and normalize them onto the edge
    # that starts at that vertex, then deduplicate.
    norm = []
    for t, i, s, pt in hits:
        if np.linalg.norm(pt - p[(i + 1) % n]) <= snap:
            i = (i + 1) % n
            s = 0.0
            pt = p[i]
        elif np.linalg.norm(pt - p[i]) <= snap:
            s = 0.0
            pt = p[i]
        norm.append((t, i, s, pt))
    norm.sort(key=lambda h: h[0])
    dedup = []
    for h in norm:
        if dedup and abs(h[0] - dedup[-1][0]) * 1.0 <= snap:
            continue
        dedup.append(h)
    if len(dedup) != 2:
        raise DegenerateGeometryError(
            f"expected 2 boundary hits for an interior line origin, got {len(dedup)}"
        )
    return [(i, s, pt) for _, i, s, pt in dedup]


def point_in_polygon(point, poly, include_boundary=True, tol=1e-12):
    """Crossing-number test; boundary points are classified by `include_boundary`."""
    p = np.asarray(poly, dtype=float)
    q = np.asarray(point, dtype=float)
    D = polygon_diameter(p)
    n = len(p)
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        e = b - a
        cr = e[0] * (q[1] - a[1]) - e[1] * (q[0] - a[0])
        if abs(cr) <= tol * max(D * D, 1e-300):
            t = (q - a) @ e / (e @ e)
            if -tol <= t <= 1 + tol:
                return include_boundary
    inside = False
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        if (a[1] > q[1]) != (b[1] > q[1]):
            xint = a[0] + (q[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if q[0] < xint:
                inside = not inside
    return inside


@lru_cache(maxsize=64)
def _gauss_segment_cached(order: int):
    npts = (order + 2) // 2
    xs, ws = np.polynomial.legendre.leggauss(npts)
    return tuple((0.5 * (x + 1.0), 0.5 * w) for x, w in zip(xs, ws))


def gauss_segment(order: int):
    """Gauss-Legendre rule on [0, 1], exact for polynomials up to `order`.

    Returns a list of (parameter, weight); weights sum to 1.
    """
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    return list(_gauss_segment_cached(order))


@lru_cache(maxsize=64)
def _gauss_triangle_cached(order: int):
    # x = u(1-v), y = uv has Jacobian u, raising the u-degree by one.
    ru = _gauss_segment_cached(order + 1)
    rv = _gauss_segment_cached(order)
    rule = []
    for u, wu in ru:
        for v, wv in rv:
            rule.append(((u * (1.0 - v), u * v), wu * wv * u))
    xy = np.array([p for p, _ in rule])
    w = np.array([w for _, w in rule])
    return tuple(rule), xy, w


def gauss_triangle(order: int):
    """Collapsed (Duffy) product Gauss rule on the reference triangle.

    Exact for polynomials up to `order` on the triangle with vertices
    (0,0), (1,0), (0,1). Returns a list of ((x, y), weight); weights are
    positive and sum to 1/2.
    """
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    return list(_gauss_triangle_cached(order)[0])


def fan_triangulate(poly):
    """Split a convex polygon into triangles from its centroid to each edge."""
    p = validate_polygon(poly)
    if not is_convex(p):
        raise DegenerateGeometryError("fan_triangulate requires a convex polygon")
    g = compute_cell_geometry(p)
    c = g.centroid
    tris = []
    n = len(p)
    for i in range(n):
        tris.append(np.array([c, p[i], p[(i + 1) % n]]))
    return tris


def polygon_quadrature(poly, order: int, centroid=None):
    """Quadrature points and weights on a convex polygon, exact to `order`.

    Built from the centroid fan and the Duffy triangle rule. Returns
    (points (n, 2), weights (n,)); weights sum to the polygon area. Passing
    a precomputed centroid skips the moment evaluation.
    """
    p = np.asarray(poly, dtype=float)
    _, xy, w = _gauss_triangle_cached(order)
    if centroid is None:
        centroid = compute_cell_geometry(p).centroid
    a = p - centroid                       # (n, 2) fan legs
    b = np.roll(p, -1, axis=0) - centroid
    jac = 2.0 * 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])   # 2 * area each
    # points: centroid + x*(a) + y*(b) for each edge triangle
    pts = (
        centroid[None, None, :]
        + xy[None, :, 0, None] * a[:, None, :]
        + xy[None, :, 1, None] * b[:, None, :]
    ).reshape(-1, 2)
    wts = (w[None, :] * jac[:, None]).reshape(-1)
    keep = wts > 0
    return pts[keep], wts[keep]


def segment_clip_convex(poly, origin, direction):
    """Clip the line origin + t*direction against a convex polygon.

    Returns (t_min, t_max) or None when the line misses the polygon.
    """
    p = validate_polygon(poly)
    if not is_convex(p):
        raise DegenerateGeometryError("segment_clip_convex requires a convex polygon")
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    t0, t1 = -math.inf, math.inf
    n = len(p)
    D = polygon_diameter(p)
    for i in range(n):
        a = p[i]
        e = p[(i + 1) % n] - a
        elen = np.linalg.norm(e)
        # Unit inward normal of the CCW edge; inside means nrm @ (x - a) >= 0.
        nrm = np.array([-e[1], e[0]]) / elen
        denom = float(nrm @ d)
        num = float(nrm @ (a - o))
        if abs(denom) < 1e-14:
            if num > 1e-12 * D:
                return None  # parallel and outside this half-plane
            continue
        t = num / denom
        if denom > 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
    if t0 >= t1:
        return None
    return t0, t1


def _diagonal_is_valid(poly, i, j, tol):
    """True if the segment poly[i]-poly[j] is an interior diagonal."""
    p = poly
    n = len(p)
    if j in ((i + 1) % n, (i - 1) % n) or i == j:
        return False
    a, b = p[i], p[j]
    mid = 0.5 * (a + b)
    if not point_in_polygon(mid, p, include_boundary=False):
        return False
    for k in range(n):
        k2 = (k + 1) % n
        if k in (i, j) or k2 in (i, j):
            continue
        if _segments_cross(a, b, p[k], p[k2], tol):
            return False
    return True


def _segments_cross(a, b, c, d, tol):
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    scale = max(np.linalg.norm(b - a), np.linalg.norm(d - c)) ** 2
    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    eps = tol * max(scale, 1e-300)
    return (o1 * o2 < -eps * eps) and (o3 * o4 < -eps * eps)


def convex_decompose(poly, tol=TOL_COL):
    """Split a simple CCW polygon into convex pieces.

    Greedy splitting at reflex vertices: the first reflex vertex is joined to
    the nearest vertex giving a valid interior diagonal, preferring diagonals
    that resolve the reflex turn. Convex input is returned unchanged.
    """
    p = validate_polygon(poly)
    if is_convex(p, tol):
        return [p]
    n = len(p)
    e = np.roll(p, -1, axis=0) - p
    cross = np.roll(e, 1, axis=0)[:, 0] * e[:, 1] - np.roll(e, 1, axis=0)[:, 1] * e[:, 0]
    lens = np.sqrt((e ** 2).sum(axis=1))
    scale = np.maximum(lens, np.roll(lens, 1)) ** 2
    reflex = np.where(cross < -tol * scale)[0]
    i = int(reflex[0])

    prev_dir = p[i] - p[(i - 1) % n]
    next_dir = p[(i + 1) % n] - p[i]
    candidates = sorted(
        (j for j in range(n) if _diagonal_is_valid(p, i, j, tol)),
        key=lambda j: float(np.linalg.norm(p[j] - p[i])),
    )
    if not candidates:
        raise DegenerateGeometryError("no valid diagonal found during decomposition")

    def resolves(j):
        d = p[j] - p[i]
        c1 = prev_dir[0] * d[1] - prev_dir[1] * d[0]
        c2 = d[0] * next_dir[1] - d[1] * next_dir[0]
        return c1 > 0 and c2 > 0

    j = next((jj for jj in candidates if resolves(jj)), candidates[0])
    lo, hi = min(i, j), max(i, j)
    part1 = p[lo:hi + 1]
    part2 = np.concatenate([p[hi:], p[:lo + 1]])
    return convex_decompose(part1, tol) + convex_decompose(part2, tol)
