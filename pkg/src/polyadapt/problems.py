"""Problem definitions: per-fracture data and reference benchmark setups."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import DIRICHLET, Frame, Mesh, build_mesh


@dataclass
class FractureData:
    """Coefficients and data fields of one fracture, in its local frame.

    All callables are vectorized over point arrays of shape (n, 2);
    `exact_grad` returns (n, 2). A missing source means zero load.
    """

    frame: Frame
    transmissivity: float = 1.0
    source: object = None
    dirichlet: object = None
    exact: object = None
    exact_grad: object = None


@dataclass
class Problem:
    name: str
    mesh: Mesh
    fractures: dict
    bc_values: dict = field(default_factory=dict)   # bc_tag -> callable(pts2)

    @property
    def has_exact(self) -> bool:
        return all(f.exact is not None and f.exact_grad is not None
                   for f in self.fractures.values())

    def edge_fracture(self, edge):
        cid = min(edge.neighbors)
        return self.mesh.cells[cid].fracture

    def dirichlet_value(self, edge):
        """Boundary-value callable for a Dirichlet edge, in local coordinates."""
        if edge.bc_tag is not None:
            return self.bc_values[edge.bc_tag]
        fd = self.fractures[self.edge_fracture(edge)]
        g = fd.dirichlet if fd.dirichlet is not None else fd.exact
        if g is None:
            raise ValueError("no Dirichlet data available for edge")
        return g


def lshape_exact(pts):
    """r^(2/3) * sin(2/3 * (beta + pi/2)) in polar coordinates."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    r = np.hypot(x, y)
    beta = np.arctan2(y, x)
    return r ** (2.0 / 3.0) * np.sin((2.0 / 3.0) * (beta + 0.5 * np.pi))


def lshape_exact_grad(pts):
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    r = np.hypot(x, y)
    beta = np.arctan2(y, x)
    t = (2.0 / 3.0) * (beta + 0.5 * np.pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        dr = (2.0 / 3.0) * r ** (-1.0 / 3.0)
    du_dr = dr * np.sin(t)
    du_dbeta_over_r = dr * np.cos(t)
    gx = du_dr * np.cos(beta) - du_dbeta_over_r * np.sin(beta)
    gy = du_dr * np.sin(beta) + du_dbeta_over_r * np.cos(beta)
    return np.column_stack([gx, gy])


def lshape_problem() -> Problem:
    """Test-1 setup: L-shape minimal mesh, harmonic singular solution.

    Domain (-1,1)^2 minus the third quadrant, decomposed into two rectangles
    whose shared corner (0,0) enters the upper cell as an aligned-edge node.
    Full Dirichlet boundary, zero source.
    """
    upper = np.array([[-1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [-1.0, 1.0]])
    lower = np.array([[0.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0]])
    mesh = build_mesh([upper, lower])
    data = FractureData(
        frame=mesh.frames[0],
        transmissivity=1.0,
        source=None,
        exact=lshape_exact,
        exact_grad=lshape_exact_grad,
    )
    return Problem("lshape", mesh, {0: data})


def planar_problem(cell_polygons, exact=None, exact_grad=None, source=None,
                   dirichlet=None, transmissivity=1.0, name="planar") -> Problem:
    """Single-plane problem over explicit convex cells, full Dirichlet."""
    mesh = build_mesh(cell_polygons)
    data = FractureData(
        frame=mesh.frames[0],
        transmissivity=transmissivity,
        source=source,
        dirichlet=dirichlet,
        exact=exact,
        exact_grad=exact_grad,
    )
    return Problem(name, mesh, {0: data})


def voronoi_square_mesh(n_seeds=8, seed=3):
    """Voronoi-style convex mesh of the unit square (reflected-seed trick)."""
    from scipy.spatial import Voronoi

    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.12, 0.88, size=(n_seeds, 2))
    mirrored = [pts]
    for axis, val in ((0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)):
        m = pts.copy()
        m[:, axis] = 2 * val - m[:, axis]
        mirrored.append(m)
    vor = Voronoi(np.concatenate(mirrored))
    cells = []
    for i in range(n_seeds):
        region = vor.regions[vor.point_region[i]]
        assert -1 not in region
        poly = vor.vertices[region]
        d1, d2 = poly[1] - poly[0], poly[2] - poly[0]
        if d1[0] * d2[1] - d1[1] * d2[0] < 0:
            poly = poly[::-1]
        cells.append(np.clip(poly, 0.0, 1.0))
    return cells


def polynomial_problem(cells, coeffs, k_max_degree, transmissivity=1.0):
    """Manufactured polynomial problem over the given cells.

    `coeffs` maps (i, j) -> c for U = sum c * x^i y^j. The source is
    -K * Laplacian(U), evaluated exactly.
    """
    items = sorted(coeffs.items())

    def U(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        return sum(c * x ** i * y ** j for (i, j), c in items)

    def gradU(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        gx = sum(c * i * x ** max(i - 1, 0) * y ** j for (i, j), c in items if i > 0)
        gy = sum(c * j * x ** i * y ** max(j - 1, 0) for (i, j), c in items if j > 0)
        gx = np.broadcast_to(np.asarray(gx, dtype=float), x.shape)
        gy = np.broadcast_to(np.asarray(gy, dtype=float), x.shape)
        return np.column_stack([gx, gy])

    def lapU(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        val = np.zeros(len(pts))
        for (i, j), c in items:
            if i >= 2:
                val += c * i * (i - 1) * x ** (i - 2) * y ** j
            if j >= 2:
                val += c * j * (j - 1) * x ** i * y ** (j - 2)
        return val

    def source(pts):
        return -transmissivity * lapU(pts)

    return planar_problem(
        cells, exact=U, exact_grad=gradU, source=source,
        transmissivity=transmissivity, name="polynomial",
    )
