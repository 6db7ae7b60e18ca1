"""SOLVE -> ESTIMATE -> MARK -> REFINE driver with bulk marking."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import vem
from .estimator import estimate
from .mesh import MeshQualityReport
from .refine import RefinementParams, refine


@dataclass
class AdaptiveConfig:
    k: int = 1
    theta: float = 0.5
    params: RefinementParams = field(default_factory=RefinementParams)
    dof_budget: int = 10_000
    rate_window: int = 5
    solver: str = "direct"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("marking fraction theta must lie in [0, 1]")


@dataclass
class IterationRecord:
    m: int
    n_dofs: int
    n_cells: int
    eta: float
    eta_rel: float
    energy_err: float
    effectivity: float
    alpha: float
    quality: MeshQualityReport
    n_marked: int = 0
    n_refined: int = 0
    n_extended: int = 0
    t_solve: float = 0.0
    t_mark: float = 0.0
    t_refine: float = 0.0


def doerfler_mark(per_cell_eta_sq, theta):
    """Minimal greedy bulk-marking set.

    Cells are sorted by decreasing squared local estimator (ties by ascending
    id) and the shortest prefix reaching theta times the total is returned.
    An all-zero estimator yields the empty set.
    """
    items = sorted(per_cell_eta_sq.items(), key=lambda kv: (-kv[1], kv[0]))
    values = np.array([v for _, v in items], dtype=float)
    if len(values) == 0:
        return []
    csum = np.cumsum(values)
    total = csum[-1]
    if total <= 0.0:
        return []
    target = theta * total
    n_take = int(np.searchsorted(csum, target, side="left")) + 1
    if theta == 0.0:
        return []
    n_take = min(n_take, len(values))
    while n_take > 1 and csum[n_take - 2] >= target:
        n_take -= 1
    marked = [cid for cid, v in items[:n_take] if v > 0.0]
    return marked


def rate_alpha(records, window):
    """Least-squares slope of log eta_rel against log DOFs over the window."""
    if len(records) < window:
        return float("nan")
    tail = records[-window:]
    x = np.log([r.n_dofs for r in tail])
    y = np.log([r.eta_rel for r in tail])
    if not np.all(np.isfinite(y)):
        return float("nan")
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def run_adaptive(problem, config: AdaptiveConfig, on_iteration=None):
    """Drive the adaptive loop until the DOF budget or a clean stop.

    Returns the list of IterationRecord. `on_iteration(record, mesh, layout,
    u, report)` is invoked after each record is completed (refine counts of
    the step are filled in before the callback fires).
    """
    mesh = problem.mesh
    records = []
    stalls = 0
    for m in range(100_000):
        t0 = time.perf_counter()
        layout = vem.build_dof_layout(mesh, config.k)
        u, _ = vem.solve_problem(problem, config.k, mesh=mesh, layout=layout,
                                 solver=config.solver)
        t_solve = time.perf_counter() - t0

        t0 = time.perf_counter()
        norm = vem.discrete_energy_norm(mesh, layout, u, problem)
        report = estimate(mesh, layout, u, problem, energy_norm=norm)
        marked = doerfler_mark(report.per_cell, config.theta)
        t_mark = time.perf_counter() - t0

        if problem.has_exact:
            err = vem.energy_error(mesh, layout, u, problem)
            eff = err / report.eta_rel if report.eta_rel > 0 else float("nan")
        else:
            err = float("nan")
            eff = float("nan")

        record = IterationRecord(
            m=m,
            n_dofs=layout.n_dofs,
            n_cells=len(mesh.active_cells()),
            eta=report.eta,
            eta_rel=report.eta_rel,
            energy_err=err,
            effectivity=eff,
            alpha=float("nan"),
            quality=mesh.quality_report(layout.n_dofs),
            t_solve=t_solve,
            t_mark=t_mark,
        )
        records.append(record)
        record.alpha = rate_alpha(records, config.rate_window)

        stop = layout.n_dofs >= config.dof_budget or not marked
        if not stop:
            t0 = time.perf_counter()
            outcome = refine(mesh, marked, config.params)
            record.t_refine = time.perf_counter() - t0
            record.n_marked = len(marked)
            record.n_refined = len(outcome.refined)
            record.n_extended = outcome.n_extended
            if not outcome.refined:
                stop = True
        if on_iteration is not None:
            on_iteration(record, mesh, layout, u, report)
        if stop:
            break
        if records and len(records) >= 2 and records[-1].n_dofs == records[-2].n_dofs:
            stalls += 1
            if stalls >= 3:
                raise RuntimeError("adaptive loop stalled: DOF count stopped growing")
        else:
            stalls = 0
    return records
