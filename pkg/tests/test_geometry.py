import math

import numpy as np
import pytest

from polyadapt import geometry as geo


UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def random_convex_polygon(rng, n=8, radius=1.0):
    """Convex polygon from sorted random angles on a random ellipse."""
    ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    while np.min(np.diff(ang)) < 1e-2:
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    a, b = radius * rng.uniform(0.3, 1.0, size=2)
    pts = np.column_stack([a * np.cos(ang), b * np.sin(ang)])
    return pts + rng.uniform(-2, 2, size=2)


class TestCellGeometry:
    def test_unit_square(self):
        g = geo.compute_cell_geometry(UNIT_SQUARE)
        assert g.area == pytest.approx(1.0, abs=1e-14)
        assert g.r == pytest.approx(0.5, abs=1e-14)
        assert g.R == pytest.approx(math.sqrt(2) / 2, abs=1e-14)
        assert g.D == pytest.approx(math.sqrt(2), abs=1e-14)
        assert g.h == pytest.approx(1.0, abs=1e-14)
        assert g.H == pytest.approx(1.0, abs=1e-14)
        assert g.n_vertices == 4

    def test_rectangle_inertia(self):
        rect = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])
        g = geo.compute_cell_geometry(rect)
        assert g.centroid == pytest.approx([1.0, 0.5], abs=1e-14)
        eigvals, eigvecs = np.linalg.eigh(g.inertia)
        assert sorted(eigvals) == pytest.approx([1 / 6, 2 / 3], rel=1e-12)
        vmax = eigvecs[:, np.argmax(eigvals)]
        assert abs(vmax @ [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)

    def test_rectangle_inertia_monte_carlo(self):
        # Independent Monte-Carlo oracle for the second moments.
        rng = np.random.default_rng(7)
        pts = rng.uniform([0, 0], [2, 1], size=(200_000, 2))
        c = pts.mean(axis=0)
        dx, dy = pts[:, 0] - c[0], pts[:, 1] - c[1]
        area = 2.0
        mc = area * np.array(
            [[np.mean(dy * dy), -np.mean(dx * dy)], [-np.mean(dx * dy), np.mean(dx * dx)]]
        )
        g = geo.compute_cell_geometry(np.array([[0, 0], [2, 0], [2, 1], [0, 1]], dtype=float))
        assert np.allclose(g.inertia, mc, atol=5e-3)

    def test_reference_triangle_aspect_ratios(self):
        # Right isosceles triangle produced by newest-vertex bisection of a square.
        tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]])
        g = geo.compute_cell_geometry(tri)
        assert g.ar_rr == pytest.approx(math.sqrt(10), rel=1e-12)
        assert g.ar_rh == pytest.approx(math.sqrt(5) / 3, rel=1e-12)

    def test_degenerate_rejected(self):
        with pytest.raises(geo.DegenerateGeometryError):
            geo.compute_cell_geometry([[0, 0], [1, 0], [2, 0]])
        with pytest.raises(geo.DegenerateGeometryError):
            geo.compute_cell_geometry([[0, 0], [1, 0], [1, 1], [1, 1 + 1e-15]])

    def test_radii_ordering_random(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            g = geo.compute_cell_geometry(random_convex_polygon(rng))
            assert 0 < g.r <= g.R <= g.D + 1e-15
            assert 0 < g.h <= g.H <= g.D + 1e-15

    def test_inertia_trace_vs_quadrature(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            poly = random_convex_polygon(rng)
            g = geo.compute_cell_geometry(poly)
            pts, wts = geo.polygon_quadrature(poly, order=2)
            val = float(np.sum(wts * ((pts - g.centroid) ** 2).sum(axis=1)))
            assert np.trace(g.inertia) == pytest.approx(val, rel=1e-10)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            poly = random_convex_polygon(rng)
            g = geo.compute_cell_geometry(poly)
            lam = np.linalg.eigvalsh(g.inertia)
            if lam[1] - lam[0] <= 1e-8 * np.trace(g.inertia):
                continue
            v0 = geo.eigen_max_direction(g.inertia)
            phi = rng.uniform(0, 2 * np.pi)
            rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
            g2 = geo.compute_cell_geometry(poly @ rot.T)
            v1 = geo.eigen_max_direction(g2.inertia)
            # Eigenvectors are defined up to sign.
            assert abs(v1 @ (rot @ v0)) == pytest.approx(1.0, abs=1e-8)


class TestCollinear:
    def test_exact(self):
        assert geo.are_collinear([0, 0], [1, 0], [2, 0])

    def test_far(self):
        assert not geo.are_collinear([0, 0], [1, 0], [2, 1])

    def test_tolerance_window(self):
        # Perpendicular deviation 1e-14 over unit-length edges.
        assert geo.are_collinear([0, 0], [1, 0], [2, 1e-14], tol_col=1e-9)
        assert not geo.are_collinear([0, 0], [1, 0], [2, 1e-5], tol_col=1e-9)

    def test_symmetry_of_interior_point(self):
        a, b, c = [0, 0], [1, 1e-12], [2, 0]
        assert geo.are_collinear(a, b, c) == geo.are_collinear(c, b, a)


class TestLinePolygonIntersection:
    def test_square_vertical(self):
        hits = geo.line_polygon_intersection(UNIT_SQUARE, [0.5, 0.5], [0.0, 1.0])
        assert len(hits) == 2
        (i0, s0, p0), (i1, s1, p1) = hits
        assert p0 == pytest.approx([0.5, 0.0])
        assert p1 == pytest.approx([0.5, 1.0])
        assert (i0, i1) == (0, 2)
        assert s0 == pytest.approx(0.5) and s1 == pytest.approx(0.5)

    def test_square_diagonal_snaps_to_vertices(self):
        d = np.array([1.0, 1.0]) / math.sqrt(2)
        hits = geo.line_polygon_intersection(UNIT_SQUARE, [0.5, 0.5], d)
        (i0, s0, p0), (i1, s1, p1) = hits
        assert p0 == pytest.approx([0.0, 0.0]) and s0 == 0.0
        assert p1 == pytest.approx([1.0, 1.0]) and s1 == 0.0
        assert i0 == 0 and i1 == 2  # reported on the edge starting at the vertex

    def test_triangle_horizontal_oracle(self):
        # Analytic oracle: centroid (4/3, 1); the line y=1 crosses edge 1
        # ((4,0)->(0,3)) at (8/3, 1) with parameter 1/3 and edge 2
        # ((0,3)->(0,0)) at (0, 1) with parameter 2/3.
        tri = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 3.0]])
        hits = geo.line_polygon_intersection(tri, [4 / 3, 1.0], [1.0, 0.0])
        (i0, s0, p0), (i1, s1, p1) = hits
        assert i0 == 2 and s0 == pytest.approx(2 / 3) and p0 == pytest.approx([0.0, 1.0])
        assert i1 == 1 and s1 == pytest.approx(1 / 3) and p1 == pytest.approx([8 / 3, 1.0])

    def test_origin_outside_rejected(self):
        with pytest.raises(geo.DegenerateGeometryError):
            geo.line_polygon_intersection(UNIT_SQUARE, [2.0, 0.5], [0.0, 1.0])

    def test_always_two_hits_random(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            poly = random_convex_polygon(rng)
            g = geo.compute_cell_geometry(poly)
            ang = rng.uniform(0, 2 * np.pi)
            hits = geo.line_polygon_intersection(
                poly, g.centroid, [np.cos(ang), np.sin(ang)]
            )
            assert len(hits) == 2


class TestQuadrature:
    def test_segment_order_one_midpoint(self):
        assert geo.gauss_segment(1) == [(0.5, 1.0)]

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_segment_even_powers(self, k):
        rule = geo.gauss_segment(2 * k)
        val = sum(w * t ** (2 * k) for t, w in rule)
        assert val == pytest.approx(1.0 / (2 * k + 1), abs=1e-14)

    def test_segment_bad_order(self):
        with pytest.raises(ValueError):
            geo.gauss_segment(0)

    def test_triangle_constant(self):
        rule = geo.gauss_triangle(2)
        assert sum(w for _, w in rule) == pytest.approx(0.5, abs=1e-14)
        assert all(w > 0 for _, w in rule)

    @pytest.mark.parametrize("order", [1, 2, 3, 4, 5, 6, 7, 8])
    def test_triangle_monomial_exactness(self, order):
        # integral over the reference triangle of x^a y^b = a! b! / (a+b+2)!
        rule = geo.gauss_triangle(order)
        for a in range(order + 1):
            for b in range(order + 1 - a):
                exact = (
                    math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                )
                val = sum(w * x ** a * y ** b for (x, y), w in rule)
                assert val == pytest.approx(exact, abs=1e-14)


class TestFanTriangulate:
    def test_triangle(self):
        tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        parts = geo.fan_triangulate(tri)
        assert len(parts) == 3
        assert sum(geo.polygon_area(t) for t in parts) == pytest.approx(0.5, rel=1e-12)

    def test_unit_square(self):
        parts = geo.fan_triangulate(UNIT_SQUARE)
        assert len(parts) == 4
        areas = [geo.polygon_area(t) for t in parts]
        assert areas == pytest.approx([0.25] * 4, rel=1e-12)

    def test_random_hexagon_area(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            poly = random_convex_polygon(rng, n=6)
            total = sum(geo.polygon_area(t) for t in geo.fan_triangulate(poly))
            assert total == pytest.approx(geo.polygon_area(poly), rel=1e-12)

    def test_nonconvex_rejected(self):
        hook = np.array([[0, 0], [2, 0], [2, 2], [1, 2], [1, 1], [0, 1]], dtype=float)
        with pytest.raises(geo.DegenerateGeometryError):
            geo.fan_triangulate(hook)


class TestConvexDecompose:
    def test_convex_passthrough(self):
        parts = geo.convex_decompose(UNIT_SQUARE)
        assert len(parts) == 1

    def test_lshape(self):
        lshape = np.array(
            [[0.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [-1.0, 0.0], [0.0, 0.0]]
        )
        parts = geo.convex_decompose(lshape)
        assert all(geo.is_convex(q) for q in parts)
        total = sum(geo.polygon_area(q) for q in parts)
        assert total == pytest.approx(3.0, rel=1e-12)

    def test_random_star_shapes(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            n = 10
            ang = np.sort(rng.uniform(0, 2 * np.pi, n))
            if np.min(np.diff(ang)) < 5e-2:
                continue
            rad = rng.uniform(0.4, 1.0, n)
            poly = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
            parts = geo.convex_decompose(poly)
            assert all(geo.is_convex(q) for q in parts)
            total = sum(geo.polygon_area(q) for q in parts)
            assert total == pytest.approx(geo.polygon_area(poly), rel=1e-10)
