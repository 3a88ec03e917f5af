"""Catching-up time stepping for the fixed-selection integro-differential sweeping process.

    x_{k+1} = proj_{C(t_{k+1})}( x_k - h_k [ f1(t_k, x_k) + V_k + z_k ] ),
    V_k     = sum_{j<k} h_j f2(t_k, t_j, x_j)        (left rectangle)

Each step is one projection, so every node is feasible by construction.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, InfeasibleInitialPoint
from .fields import ProblemSpec, sample
from .geometry import normal_cone_membership

KINDS = ("state", "selection", "derivative")


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a time grid needs at least 2 nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t0: float, t_end: float, h: float) -> "TimeGrid":
        if not h > 0:
            raise ValueError("step h must be positive")
        n = max(1, math.ceil((t_end - t0) / h - 1e-9))
        return cls(np.linspace(t0, t_end, n + 1))

    @property
    def t0(self):
        return float(self.nodes[0])

    @property
    def t_end(self):
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h_max(self) -> float:
        return float(self.steps.max())

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.nodes.size - 1

    def refine(self, m: int) -> "TimeGrid":
        """Split every interval into m equal parts."""
        m = int(m)
        if m < 1:
            raise ValueError("refinement factor must be >= 1")
        if m == 1:
            return self
        a, b = self.nodes[:-1], self.nodes[1:]
        frac = np.arange(m) / m
        inner = (a[:, None] + (b - a)[:, None] * frac[None, :]).ravel()
        return TimeGrid(np.append(inner, self.nodes[-1]))

    def same_as(self, other: "TimeGrid") -> bool:
        return self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes)


@dataclass
class GridFunction:
    """Vector values on grid nodes. ``state`` interpolates linearly, ``selection``
    and ``derivative`` are piecewise constant and left-continuous in the index
    sense: on [t_k, t_{k+1}) the value is values[k]."""

    grid: TimeGrid
    values: np.ndarray
    kind: str = "state"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.nodes.size:
            raise ValueError("one value per grid node is required")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite entries")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        self.values = v

    @property
    def dim(self):
        return self.values.shape[1]

    def __call__(self, t):
        t = float(t)
        nodes = self.grid.nodes
        if self.kind == "state":
            return np.array([np.interp(t, nodes, self.values[:, i]) for i in range(self.dim)])
        k = int(np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 1))
        return self.values[k].copy()

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)

    @classmethod
    def constant(cls, grid: TimeGrid, value, kind="selection"):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.nodes.size, 1)), kind)


@dataclass
class Trajectory:
    x: GridFunction
    xdot: GridFunction
    z: GridFunction
    volterra: GridFunction
    residuals: np.ndarray
    predictor: np.ndarray = field(repr=False)

    @property
    def grid(self):
        return self.x.grid

    @property
    def values(self):
        return self.x.values


def _check_prefix(x_prefix: GridFunction, k: int):
    if not 0 <= k < x_prefix.grid.nodes.size:
        raise IndexError(f"node index {k} outside the grid")


def volterra_term(spec: ProblemSpec, x_prefix: GridFunction, k: int,
                  quadrature: str = "left") -> np.ndarray:
    """Quadrature of int_{T0}^{t_k} f2(t_k, s, x(s)) ds from the nodes 0..k.

    ``left``: sum_{j<k} h_j f2(t_k, t_j, x_j). ``trapezoid`` averages both
    interval ends and also uses x_k.
    """
    _check_prefix(x_prefix, k)
    d = x_prefix.dim
    if k == 0:
        return np.zeros(d)
    nodes = x_prefix.grid.nodes
    h = np.diff(nodes[: k + 1])
    tk = nodes[k]
    if quadrature == "left":
        F = spec.kernel.eval_history(tk, nodes[:k], x_prefix.values[:k])
        return h @ F
    if quadrature == "trapezoid":
        F = spec.kernel.eval_history(tk, nodes[: k + 1], x_prefix.values[: k + 1])
        return 0.5 * (h @ F[:-1] + h @ F[1:])
    raise ValueError(f"unknown quadrature {quadrature!r}")


class _VolterraAccumulator:
    """Produces V_k step by step, with a running sum for separable kernels."""

    def __init__(self, spec, nodes, dim, quadrature):
        self.kernel = spec.kernel
        self.nodes = nodes
        self.h = np.diff(nodes)
        self.quadrature = quadrature
        self.dim = dim
        self.running = np.zeros(dim)
        self.separable = self.kernel.factors is not None
        if quadrature not in ("left", "trapezoid"):
            raise ValueError(f"unknown quadrature {quadrature!r}")

    def term(self, k, X):
        if k == 0 or self.kernel.is_zero:
            return np.zeros(self.dim)
        tk = self.nodes[k]
        if self.separable:
            a, b = self.kernel.factors
            j = k - 1
            if self.quadrature == "left":
                self.running = self.running + self.h[j] * b(self.nodes[j]) * X[j]
            else:
                self.running = self.running + 0.5 * self.h[j] * (
                    b(self.nodes[j]) * X[j] + b(self.nodes[k]) * X[k])
            return a(tk) * self.running
        if self.quadrature == "left":
            F = self.kernel.eval_history(tk, self.nodes[:k], X[:k])
            return self.h[:k] @ F
        F = self.kernel.eval_history(tk, self.nodes[: k + 1], X[: k + 1])
        return 0.5 * (self.h[:k] @ F[:-1] + self.h[:k] @ F[1:])


def check_selection_bound(spec: ProblemSpec, z: GridFunction) -> float:
    """Largest excess of |z_k| over gamma(t_k)."""
    gam = sample(spec.perturb.gamma, z.grid.nodes)
    return float(np.max(z.norms() - gam))


def solve_fixed_selection(spec: ProblemSpec, z: GridFunction, grid: TimeGrid, *,
                          x0=None, quadrature: str = "left",
                          check_selection: bool = True) -> Trajectory:
    """Catching-up solution of the sweeping process driven by the fixed selection z."""
    if not grid.same_as(z.grid):
        raise GridMismatch("selection is not defined on the solver grid")
    C = spec.set
    x0 = spec.x0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    if C.distance(grid.t0, x0) > C.eps:
        raise InfeasibleInitialPoint(f"x0 is at distance {C.distance(grid.t0, x0):.3g} from C(T0)")
    if check_selection:
        excess = check_selection_bound(spec, z)
        if excess > spec.perturb.eps:
            raise ValueError(f"selection exceeds gamma by {excess:.3g}")

    nodes = grid.nodes
    h = grid.steps
    n, d = grid.n, spec.dim
    X = np.empty((n + 1, d))
    V = np.zeros((n + 1, d))
    Y = np.empty((n + 1, d))
    X[0] = x0
    Y[0] = x0
    acc = _VolterraAccumulator(spec, nodes, d, quadrature)
    f1 = spec.drift
    zv = z.values
    for k in range(n):
        V[k] = acc.term(k, X)
        p = f1(nodes[k], X[k]) + V[k] + zv[k]
        Y[k + 1] = X[k] - h[k] * p
        X[k + 1] = C.project(nodes[k + 1], Y[k + 1])
    V[n] = acc.term(n, X)

    xdot = np.empty_like(X)
    xdot[:-1] = np.diff(X, axis=0) / h[:, None]
    xdot[-1] = xdot[-2]
    resid = np.array([C.distance(t, x) for t, x in zip(nodes, X)])
    return Trajectory(
        x=GridFunction(grid, X, "state"),
        xdot=GridFunction(grid, xdot, "derivative"),
        z=GridFunction(grid, z.values.copy(), "selection"),
        volterra=GridFunction(grid, V, "state"),
        residuals=resid,
        predictor=Y,
    )


def solve_unperturbed(spec: ProblemSpec, grid: TimeGrid, *, quadrature: str = "left") -> Trajectory:
    """Reference trajectory q(.) started from q0 with z = 0."""
    z = GridFunction.constant(grid, np.zeros(spec.dim))
    return solve_fixed_selection(spec, z, grid, x0=spec.q0, quadrature=quadrature)


# --------------------------------------------------------------------------
# checks on computed trajectories

@dataclass
class DeviationReport:
    max_ratio: float
    max_excess: float
    n_violations: int
    n_nodes: int

    @property
    def passed(self):
        return self.n_violations == 0


def deviation_check(traj1: Trajectory, traj2: Trajectory, cert) -> DeviationReport:
    """Nodewise check of |x1 - x2| <= Phi (|x1(T0) - x2(T0)| + sum_{j<k} h_j |z1_j - z2_j|) + slack(h)."""
    if not traj1.grid.same_as(traj2.grid):
        raise GridMismatch("trajectories live on different grids")
    grid = traj1.grid
    h = grid.steps
    lhs = np.linalg.norm(traj1.x.values - traj2.x.values, axis=1)
    dz = np.linalg.norm(traj1.z.values - traj2.z.values, axis=1)
    acc = np.concatenate([[0.0], np.cumsum(h * dz[:-1])])
    d0 = float(np.linalg.norm(traj1.x.values[0] - traj2.x.values[0]))
    rhs = cert.Phi * (d0 + acc)
    slack = cert.slack(grid.h_max)
    excess = lhs - (rhs + slack)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lhs > 0, lhs / (rhs + slack), 0.0)
    return DeviationReport(float(ratio.max()), float(excess.max()), int(np.sum(excess > 0)), lhs.size)


@dataclass
class InclusionReport:
    n_active: int
    n_violations: int
    max_error: float

    @property
    def passed(self):
        return self.n_violations == 0


def inclusion_residual_check(spec: ProblemSpec, traj: Trajectory, tol: float = 1e-9) -> InclusionReport:
    """Check that -xdot_k - f1 - V_k - z_k is a proximal normal to C(t_{k+1}) at x_{k+1}.

    That vector is (y_{k+1} - x_{k+1}) / h_k with y the predictor; directions
    are only compared when the displacement is above rounding level.
    """
    C = spec.set
    nodes = traj.grid.nodes
    h = traj.grid.steps
    X, Y = traj.x.values, traj.predictor
    step_cap = 0.5 * C.prox_const
    active = bad = 0
    worst = 0.0
    for k in range(traj.grid.n):
        disp = Y[k + 1] - X[k + 1]
        nd = float(np.linalg.norm(disp))
        scale = 1.0 + float(np.linalg.norm(Y[k + 1]))
        if nd <= 1e-12 * scale:
            continue
        active += 1
        step = min(h[k], step_cap)
        v = disp / nd
        t = nodes[k + 1]
        p = C.project(t, X[k + 1] + step * v)
        err = float(np.linalg.norm(p - X[k + 1]))
        worst = max(worst, err)
        allowed = tol + 1e-13 * step * scale / nd
        if not normal_cone_membership(C, t, X[k + 1], v, step, allowed):
            bad += 1
    return InclusionReport(active, bad, worst)


def write_csv(traj: Trajectory, path) -> None:
    """One row per node: t, x_*, z_*, dist_C, volterra_norm (17 significant digits).

    ``path`` may also be an open text stream.
    """
    d = traj.x.dim
    header = ["t"] + [f"x_{i}" for i in range(d)] + [f"z_{i}" for i in range(d)] + ["dist_C", "volterra_norm"]
    vnorm = traj.volterra.norms()
    rows = [[t, *traj.x.values[k], *traj.z.values[k], traj.residuals[k], vnorm[k]]
            for k, t in enumerate(traj.grid.nodes)]
    if hasattr(path, "write"):
        _write_rows(path, header, rows)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, header, rows)


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{float(v):.17g}" for v in row])


def read_selection_csv(path, grid: TimeGrid) -> GridFunction:
    """Read z_* columns (optionally with a leading t column) from a CSV on ``grid``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = [i for i, name in enumerate(header) if name.startswith("z_")]
    if not cols:
        raise ValueError("selection CSV needs z_0 .. z_{d-1} columns")
    vals = np.array([[float(r[i]) for i in cols] for r in body])
    if "t" in header:
        ts = np.array([float(r[header.index("t")]) for r in body])
        if ts.shape != grid.nodes.shape or not np.allclose(ts, grid.nodes, rtol=0, atol=1e-12):
            raise GridMismatch("selection CSV time column does not match the grid")
    return GridFunction(grid, vals, "selection")
