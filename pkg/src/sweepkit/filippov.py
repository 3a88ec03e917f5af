"""Successive selection refinement for the sweeping process perturbed by F.

Starting from the unperturbed trajectory q, alternate

    zeta_i  = solve with fixed selection z_i,
    z_{i+1} = point of F(t, zeta_i(t)) nearest to z_i(t)   (nodewise),

until the state iterates stop moving or the factorial a priori bound on
their increments falls below the tolerance.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import BoundCertificate, certify, factorial_bound
from .errors import GridMismatch, MaxIterationsExceeded
from .fields import ProblemSpec, minimal_norm_selection, sample
from .stepper import GridFunction, TimeGrid, Trajectory, solve_fixed_selection, solve_unperturbed


def refine_selection(spec: ProblemSpec, prev_z: GridFunction, current_x: GridFunction) -> GridFunction:
    """new_z_k = point of F(t_k, x_k) nearest to prev_z_k."""
    if not prev_z.grid.same_as(current_x.grid):
        raise GridMismatch("selection and state live on different grids")
    F = spec.perturb
    nodes = prev_z.grid.nodes
    vals = np.array([F(t, x, w) for t, x, w in zip(nodes, current_x.values, prev_z.values)])
    return GridFunction(prev_z.grid, vals, "selection")


def selection_residual(spec: ProblemSpec, z: GridFunction, traj: Trajectory) -> float:
    """max_k dist(z_k, F(t_k, x_k))."""
    if not z.grid.same_as(traj.grid):
        raise GridMismatch("selection and trajectory live on different grids")
    F = spec.perturb
    nodes = z.grid.nodes
    return float(max(np.linalg.norm(F(t, x, w) - w)
                     for t, x, w in zip(nodes, traj.x.values, z.values)))


@dataclass
class IterationRecord:
    i: int
    sup_y_delta: float
    sup_z_delta: float
    factorial_bound: float
    selection_residual: float
    chain_excess: float
    domination_excess: float


@dataclass
class IterationReport:
    tol: float
    tol_requested: float
    slack: float
    records: list = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0
    stop_reason: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["records"] = [asdict(r) for r in self.records]
        return d


def noise_floor(spec: ProblemSpec, grid: TimeGrid) -> float:
    """Smallest meaningful tolerance, 10 h (1 + sup gamma)."""
    return 10.0 * grid.h_max * (1.0 + float(np.max(sample(spec.perturb.gamma, grid.nodes))))


def iterate(spec: ProblemSpec, grid: TimeGrid, tol: float, max_iter: int, *,
            cert: BoundCertificate | None = None, quadrature: str = "left",
            history: list | None = None):
    """Run the refinement loop; returns (z, trajectory, report).

    If ``history`` is a list, (z_i, zeta_i) pairs are appended to it.
    Raises MaxIterationsExceeded (carrying the last iterate) when neither
    stopping rule fires within ``max_iter`` solves.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    floor = noise_floor(spec, grid)
    tol_used = tol
    if tol < floor:
        warnings.warn(f"tol {tol:g} is below the discretisation floor {floor:g}; clamped", stacklevel=2)
        tol_used = floor
    cert = certify(spec, grid) if cert is None else cert
    slack = cert.slack(grid.h_max)
    report = IterationReport(tol=tol_used, tol_requested=tol, slack=slack)

    nodes = grid.nodes
    kk = sample(spec.perturb.k, nodes)
    q = solve_unperturbed(spec, grid, quadrature=quadrature)
    z = GridFunction(grid, np.array([minimal_norm_selection(spec.perturb, t, x)
                                     for t, x in zip(nodes, q.x.values)]), "selection")
    y_prev = np.zeros_like(q.x.values)
    zeta_prev = q.x.values
    traj = None
    for i in range(max_iter):
        traj = solve_fixed_selection(spec, z, grid, quadrature=quadrature)
        if history is not None:
            history.append((z, traj))
        y_next = traj.x.values - q.x.values
        dy = float(np.max(np.linalg.norm(y_next - y_prev, axis=1)))
        z_next = refine_selection(spec, z, traj.x)
        dz_nodes = np.linalg.norm(z_next.values - z.values, axis=1)
        dzeta = np.linalg.norm(traj.x.values - zeta_prev, axis=1)
        fb = factorial_bound(cert, spec, i, grid.t_end)
        rec = IterationRecord(
            i=i,
            sup_y_delta=dy,
            sup_z_delta=float(dz_nodes.max()),
            factorial_bound=fb,
            selection_residual=selection_residual(spec, z, traj),
            chain_excess=float(np.max(dz_nodes - kk * dzeta - 2 * spec.perturb.eps)),
            domination_excess=dy - (1.1 * fb + slack),
        )
        report.records.append(rec)
        if dy <= tol_used or fb <= tol_used:
            report.converged = True
            report.iterations_used = i
            report.stop_reason = "state_delta" if dy <= tol_used else "factorial_bound"
            return z, traj, report
        y_prev = y_next
        zeta_prev = traj.x.values
        z = z_next
    report.iterations_used = max_iter
    report.stop_reason = "max_iter"
    raise MaxIterationsExceeded(f"no convergence within {max_iter} iterations", z, traj, report)


@dataclass
class FinalEstimateReport:
    max_state_excess: float
    max_selection_excess: float

    @property
    def passed(self):
        return self.max_state_excess <= 0 and self.max_selection_excess <= 0


def final_estimate_check(cert: BoundCertificate, q: Trajectory, traj: Trajectory,
                         z: GridFunction, sel_tol: float = 1e-10) -> FinalEstimateReport:
    """|x_k - q_k| <= Phi r(t_k) + slack(h) and |z_k| <= rdot(t_k) + sel_tol."""
    grid = traj.grid
    dev = np.linalg.norm(traj.x.values - q.x.values, axis=1)
    state = dev - (cert.Phi * cert.on_solver_grid("r") + cert.slack(grid.h_max))
    sel = z.norms() - (cert.on_solver_grid("rdot") + sel_tol)
    return FinalEstimateReport(float(state.max()), float(sel.max()))
