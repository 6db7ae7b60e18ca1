"""Virtual element discretization of orders 1..3 on polygonal cells.

Scaled monomials m_a(x) = ((x - x_E)/D_E)^a form the local polynomial basis.
Per-cell degrees of freedom are vertex values, values at the k-1 interior
Gauss points of every edge, and scaled internal moments up to order k-2.
The enhanced-space constraint makes the L2 projections up to degree k
computable from the energy projection, which is what all consistency, load
and estimator terms use. Aligned edges need no special handling: a polygon
simply has more vertices.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .mesh import DIRICHLET


def n_poly(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def mono_indices(k: int):
    out = []
    for deg in range(k + 1):
        for i in range(deg, -1, -1):
            out.append((i, deg - i))
    return out


def eval_monomials(alphas, pts, center, diam):
    pts = np.atleast_2d(pts)
    xi = (pts[:, 0] - center[0]) / diam
    eta = (pts[:, 1] - center[1]) / diam
    cols = [xi ** a * eta ** b for a, b in alphas]
    return np.column_stack(cols)


def eval_monomial_gradients(alphas, pts, center, diam):
    pts = np.atleast_2d(pts)
    xi = (pts[:, 0] - center[0]) / diam
    eta = (pts[:, 1] - center[1]) / diam
    gx, gy = [], []
    for a, b in alphas:
        gx.append(a / diam * xi ** max(a - 1, 0) * eta ** b if a else np.zeros(len(pts)))
        gy.append(b / diam * xi ** a * eta ** max(b - 1, 0) if b else np.zeros(len(pts)))
    return np.column_stack(gx), np.column_stack(gy)


def _derivative_coeffs(alphas, index_of, diam, axis):
    """Matrix taking P_k coefficients to P_{k-1} coefficients of d/daxis."""
    rows = len(alphas)
    out = np.zeros((rows, rows))
    for j, (a, b) in enumerate(alphas):
        if axis == 0 and a > 0:
            out[index_of[(a - 1, b)], j] = a / diam
        if axis == 1 and b > 0:
            out[index_of[(a, b - 1)], j] = b / diam
    return out


class VemCell:
    """Local VEM operators of one active cell for a fixed order k.

    Attributes of note: `pi_star` maps DOF values to the P_k coefficients of
    the energy projection; `stiffness` is the consistency-plus-stabilization
    local matrix; `load` the local right-hand side; `pi0_grad` the pair of
    coefficient maps of the projected gradient.
    """

    def __init__(self, mesh, cell_id, k, transmissivity, source):
        cell = mesh.cells[cell_id]
        self.cell_id = cell_id
        self.k = k
        self.K = transmissivity
        poly = mesh.cell_polygon(cell_id)
        g = mesh.cell_geometry(cell_id)
        self.geom = g
        self.n_vert = len(poly)
        self.alphas = mono_indices(k)
        self.idx = {a: i for i, a in enumerate(self.alphas)}
        nk = n_poly(k)
        nk1 = n_poly(k - 1)
        nk2 = n_poly(k - 2) if k >= 2 else 0
        self.n_dofs = self.n_vert * k + nk2
        c, D = g.centroid, g.D

        qp, qw = geo.polygon_quadrature(poly, 2 * k + 2)
        self.quad = (qp, qw)
        M = eval_monomials(self.alphas, qp, c, D)
        Gx, Gy = eval_monomial_gradients(self.alphas, qp, c, D)
        self.mass = M.T @ (qw[:, None] * M)                  # (m_i, m_j)
        self.grad_gram = Gx.T @ (qw[:, None] * Gx) + Gy.T @ (qw[:, None] * Gy)

        # Edge quadrature and Lagrange interpolation of the trace; the k-1
        # interior Gauss nodes are the edge DOF positions.
        edge_rule = geo.gauss_segment(2 * k + 1)
        tq = np.array([t for t, _ in edge_rule])
        wq = np.array([w for _, w in edge_rule])
        interior = sorted(t for t, _ in geo.gauss_segment(2 * k - 3)) if k > 1 else []
        self.edge_interior_params = interior
        nodes = np.array([0.0] + interior + [1.0])
        lag = np.ones((len(tq), len(nodes)))
        for j in range(len(nodes)):
            for m in range(len(nodes)):
                if m != j:
                    lag[:, j] *= (tq - nodes[m]) / (nodes[j] - nodes[m])

        nv = self.n_vert
        B = np.zeros((nk, self.n_dofs))
        Bx = np.zeros((nk1, self.n_dofs))
        By = np.zeros((nk1, self.n_dofs))
        Dmat = np.zeros((self.n_dofs, nk))
        Dmat[:nv, :] = eval_monomials(self.alphas, poly, c, D)
        perim = 0.0
        p0_row = np.zeros(self.n_dofs)
        p0_mono = np.zeros(nk)
        self.edge_quad = []   # per edge: (points, weights*|e|, outward normal)

        for i in range(nv):
            a_pt, b_pt = poly[i], poly[(i + 1) % nv]
            e_vec = b_pt - a_pt
            elen = float(np.linalg.norm(e_vec))
            perim += elen
            normal = np.array([e_vec[1], -e_vec[0]]) / elen
            pts_q = a_pt[None, :] + tq[:, None] * e_vec[None, :]
            we = wq * elen
            self.edge_quad.append((pts_q, we, normal))
            # Local dof columns along this edge, traversal order.
            cols = [i] + [nv + i * (k - 1) + j for j in range(k - 1)] + [(i + 1) % nv]
            Mq = eval_monomials(self.alphas, pts_q, c, D)
            Gqx, Gqy = eval_monomial_gradients(self.alphas, pts_q, c, D)
            conormal = Gqx * normal[0] + Gqy * normal[1]
            for jloc, col in enumerate(cols):
                wl = we * lag[:, jloc]
                B[:, col] += conormal.T @ wl
                Bx[:, col] += (Mq[:, :nk1] * (normal[0] * wl)[:, None]).sum(axis=0)
                By[:, col] += (Mq[:, :nk1] * (normal[1] * wl)[:, None]).sum(axis=0)
                if k == 1:
                    p0_row[col] += wl.sum()
            if k == 1:
                p0_mono += Mq.T @ we
            if k > 1:
                node_pts = a_pt[None, :] + np.array(interior)[:, None] * e_vec[None, :]
                Dmat[nv + i * (k - 1):nv + (i + 1) * (k - 1), :] = eval_monomials(
                    self.alphas, node_pts, c, D
                )

        # Volume parts expressed through moment DOFs: (Delta m_i, phi) and
        # (phi, d m_i / da) are combinations of the scaled moments of phi.
        dxk = _derivative_coeffs(self.alphas, self.idx, D, 0)
        dyk = _derivative_coeffs(self.alphas, self.idx, D, 1)
        lap = dxk @ dxk + dyk @ dyk
        self.lap_coeffs = lap[:nk1, :]
        if k >= 2:
            mom0 = nv * k
            Dmat[mom0:, :] = self.mass[:nk2, :] / g.area
            for j in range(nk):
                for beta in range(nk2):
                    if lap[beta, j]:
                        B[j, mom0 + beta] -= lap[beta, j] * g.area
            for i in range(nk1):
                for beta in range(nk2):
                    if dxk[beta, i]:
                        Bx[i, mom0 + beta] -= dxk[beta, i] * g.area
                    if dyk[beta, i]:
                        By[i, mom0 + beta] -= dyk[beta, i] * g.area

        G = self.grad_gram.copy()
        if k == 1:
            G[0, :] = p0_mono / perim
            B[0, :] = p0_row / perim
        else:
            G[0, :] = self.mass[0, :] / g.area
            B[0, :] = 0.0
            B[0, nv * k] = 1.0
        self.D = Dmat
        self.B = B
        self.G = G
        self.pi_star = np.linalg.solve(G, B)            # DOFs -> P_k coefficients
        self.pi_dof = Dmat @ self.pi_star               # DOFs -> DOFs

        Hk1 = self.mass[:nk1, :nk1]
        self.mass_k1 = Hk1
        cx = np.linalg.solve(Hk1, Bx)
        cy = np.linalg.solve(Hk1, By)
        self.pi0_grad = (cx, cy)

        consistency = self.K * (cx.T @ Hk1 @ cx + cy.T @ Hk1 @ cy)
        eye = np.eye(self.n_dofs)
        slack = eye - self.pi_dof
        self.stabilization = self.K * (slack.T @ slack)
        self.stiffness = consistency + self.stabilization

        # Moment matrix (m_b, phi) for |b| <= k-1 via the enhanced property.
        Mk1 = np.zeros((nk1, self.n_dofs))
        if k >= 2:
            Mk1[:nk2, nv * k:] = g.area * np.eye(nk2)
        for beta in range(nk2, nk1):
            Mk1[beta, :] = self.mass[beta, :nk] @ self.pi_star
        self.moment_k1 = Mk1

        if source is not None:
            qvals = source(qp)
            qint = M[:, :nk1].T @ (qw * qvals)
            self.q_coeffs = np.linalg.solve(Hk1, qint)
            q_sq = float(np.sum(qw * qvals * qvals))
            osc = q_sq - float(self.q_coeffs @ Hk1 @ self.q_coeffs)
            self.oscillation_sq = (g.D ** 2 / self.K) * max(osc, 0.0)
            self.load = Mk1.T @ self.q_coeffs
        else:
            self.q_coeffs = np.zeros(nk1)
            self.oscillation_sq = 0.0
            self.load = np.zeros(self.n_dofs)

    def project(self, u_local):
        """P_k coefficients of the energy projection of the local solution."""
        return self.pi_star @ u_local

    def l2_projector(self):
        """DOFs -> P_k coefficients of the L2 projection (enhanced space)."""
        nk = n_poly(self.k)
        nk2 = n_poly(self.k - 2) if self.k >= 2 else 0
        Mk = np.zeros((nk, self.n_dofs))
        if self.k >= 2:
            Mk[:nk2, self.n_vert * self.k:] = self.geom.area * np.eye(nk2)
        for beta in range(nk2, nk):
            Mk[beta, :] = self.mass[beta, :nk] @ self.pi_star
        return np.linalg.solve(self.mass, Mk)


def get_vem_cell(mesh, cell_id, k, problem) -> VemCell:
    cell = mesh.cells[cell_id]
    key = ("vem", k)
    got = cell.cache.get(key)
    if got is None:
        fd = problem.fractures[cell.fracture]
        got = VemCell(mesh, cell_id, k, fd.transmissivity, fd.source)
        cell.cache[key] = got
    return got


class DofLayout:
    """Global numbering: vertex DOFs, edge Gauss DOFs, cell moments."""

    def __init__(self, mesh, k):
        if k not in (1, 2, 3):
            raise ValueError(f"VEM order must be 1, 2 or 3, got {k}")
        self.k = k
        self.vertex_gid = {}
        self.edge_gid = {}
        self.moment_gid = {}
        self.cell_gids = {}
        nk2 = n_poly(k - 2) if k >= 2 else 0
        nxt = 0
        for cell in mesh.active_cells():
            gids = []
            nv = len(cell.vertices)
            for v in cell.vertices:
                if v not in self.vertex_gid:
                    self.vertex_gid[v] = nxt
                    nxt += 1
                gids.append(self.vertex_gid[v])
            for pos in range(nv):
                eid = cell.edges[pos]
                if k > 1:
                    if eid not in self.edge_gid:
                        self.edge_gid[eid] = list(range(nxt, nxt + k - 1))
                        nxt += k - 1
                    canon = mesh.edges[eid].canonical()
                    forward = cell.vertices[pos] == canon[0]
                    ids = self.edge_gid[eid]
                    gids.extend(ids if forward else ids[::-1])
            if k >= 2:
                self.moment_gid[cell.id] = list(range(nxt, nxt + nk2))
                nxt += nk2
                gids.extend(self.moment_gid[cell.id])
            self.cell_gids[cell.id] = np.array(gids, dtype=np.int64)
        self.n_dofs = nxt

    def edge_dof_positions(self, mesh, eid, fracture_id):
        """Positions of the edge-interior DOFs in canonical order."""
        if self.k == 1:
            return np.zeros((0, 2))
        a, b = mesh.edges[eid].canonical()
        pa = mesh.vertices[a].uv(mesh, fracture_id)
        pb = mesh.vertices[b].uv(mesh, fracture_id)
        params = [t for t, _ in geo.gauss_segment(2 * self.k - 3)]
        params = sorted(params)
        return np.array([pa + t * (pb - pa) for t in params])


def build_dof_layout(mesh, k) -> DofLayout:
    return DofLayout(mesh, k)


def dirichlet_values(mesh, layout, problem):
    """Constrained DOF ids and their interpolated boundary values."""
    values = {}
    for edge in mesh.edges:
        if not edge.alive or edge.boundary_label != DIRICHLET or not edge.neighbors:
            continue
        fid = problem.edge_fracture(edge)
        g = problem.dirichlet_value(edge)
        for v in edge.endpoints:
            gid = layout.vertex_gid.get(v)
            if gid is not None and gid not in values:
                pt = mesh.vertices[v].uv(mesh, fid)
                values[gid] = float(g(pt[None, :])[0])
        if layout.k > 1 and edge.id in layout.edge_gid:
            pts = layout.edge_dof_positions(mesh, edge.id, fid)
            vals = g(pts)
            for gid, val in zip(layout.edge_gid[edge.id], vals):
                if gid not in values:
                    values[gid] = float(val)
    return values


def assemble(mesh, layout, problem):
    """Global stiffness matrix and load vector over all active cells."""
    rows, cols, vals = [], [], []
    rhs = np.zeros(layout.n_dofs)
    for cell in mesh.active_cells():
        vc = get_vem_cell(mesh, cell.id, layout.k, problem)
        gids = layout.cell_gids[cell.id]
        n = len(gids)
        rows.append(np.repeat(gids, n))
        cols.append(np.tile(gids, n))
        vals.append(vc.stiffness.ravel())
        np.add.at(rhs, gids, vc.load)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(layout.n_dofs, layout.n_dofs),
    ).tocsr()
    return A, rhs


def solve_problem(problem, k, mesh=None, layout=None, solver="direct"):
    """SOLVE step: assemble, impose Dirichlet data, factorize.

    Returns (u, layout). The full DOF vector contains the boundary values.
    """
    mesh = mesh if mesh is not None else problem.mesh
    layout = layout if layout is not None else DofLayout(mesh, k)
    A, rhs = assemble(mesh, layout, problem)
    bc = dirichlet_values(mesh, layout, problem)
    if not bc:
        raise ValueError("empty Dirichlet boundary: the system is singular")
    u = np.zeros(layout.n_dofs)
    fixed = np.zeros(layout.n_dofs, dtype=bool)
    for gid, val in bc.items():
        u[gid] = val
        fixed[gid] = True
    free = ~fixed
    rhs_free = rhs[free] - A[free][:, fixed] @ u[fixed]
    A_free = A[free][:, free].tocsc()
    if solver == "direct":
        u_free = spla.spsolve(A_free, rhs_free)
    elif solver == "cg":
        u_free, info = spla.cg(A_free, rhs_free, rtol=1e-12, maxiter=20 * A_free.shape[0])
        if info != 0:
            raise RuntimeError(f"conjugate gradient did not converge (info={info})")
    else:
        raise ValueError(f"unknown solver '{solver}'")
    u[free] = u_free
    return u, layout


def _exact_energy_pieces(mesh, cell, k, problem):
    """Exact gradient and monomial gradients at the cell quadrature (cached)."""
    key = ("exact_energy", k)
    got = cell.cache.get(key)
    if got is None:
        vc = get_vem_cell(mesh, cell.id, k, problem)
        fd = problem.fractures[cell.fracture]
        qp, qw = vc.quad
        gU = fd.exact_grad(qp)
        Gx, Gy = eval_monomial_gradients(vc.alphas, qp, vc.geom.centroid, vc.geom.D)
        gU2 = float(np.sum(qw * (gU ** 2).sum(axis=1)))
        got = (gU, Gx, Gy, gU2)
        cell.cache[key] = got
    return got


def energy_error(mesh, layout, u, problem):
    """Relative broken energy error of the projected discrete solution.

    The gradient difference is formed pointwise at the quadrature nodes
    before squaring; the expanded quadratic form would cancel catastrophically
    on patch tests.
    """
    num = 0.0
    den = 0.0
    for cell in mesh.active_cells():
        vc = get_vem_cell(mesh, cell.id, layout.k, problem)
        c = vc.project(u[layout.cell_gids[cell.id]])
        gU, Gx, Gy, gU2 = _exact_energy_pieces(mesh, cell, layout.k, problem)
        qw = vc.quad[1]
        dx = gU[:, 0] - Gx @ c
        dy = gU[:, 1] - Gy @ c
        num += vc.K * float(np.sum(qw * (dx * dx + dy * dy)))
        den += vc.K * gU2
    return float(np.sqrt(num / den))


def discrete_energy_norm(mesh, layout, u, problem):
    """Broken energy norm of the projected discrete solution."""
    total = 0.0
    for cell in mesh.active_cells():
        vc = get_vem_cell(mesh, cell.id, layout.k, problem)
        c = vc.project(u[layout.cell_gids[cell.id]])
        total += vc.K * float(c @ vc.grad_gram @ c)
    return float(np.sqrt(total))
