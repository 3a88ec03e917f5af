"""Full invariant suite for one scenario: validate, solve, certify, iterate, check."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import QUAD_FACTOR, certify, fubini_identity_check
from .config import ScenarioConfig, reference_solution
from .errors import MaxIterationsExceeded, SweepError
from .fields import SamplingPlan, sample, validate
from .filippov import final_estimate_check, iterate, selection_residual
from .stepper import (GridFunction, TimeGrid, Trajectory, check_selection_bound, deviation_check,
                      inclusion_residual_check, solve_fixed_selection, solve_unperturbed)

FEASIBILITY_TOL = 1e-9
SELECTION_TOL = 1e-10
FUBINI_TOL = 1e-6
MIN_ORDER_RATIO = 1.8
N_DEVIATION_PAIRS = 4
CERT_POINTS = 201


@dataclass
class Check:
    name: str
    passed: bool
    max_violation: float
    detail: str = ""


@dataclass
class VerificationReport:
    scenario: str | None
    hypotheses: list = field(default_factory=list)
    certificate: dict | None = None
    iterations: dict | None = None
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def add(self, name, violation, tol=0.0, detail=""):
        v = float(violation)
        self.checks.append(Check(name, bool(v <= tol), v, detail))

    def to_dict(self) -> dict:
        return json_safe({
            "scenario": self.scenario,
            "status": "PASS" if self.passed else "FAIL",
            "hypotheses": self.hypotheses,
            "certificate": self.certificate,
            "iterations": self.iterations,
            "checks": [asdict(c) for c in self.checks],
        })


def json_safe(obj):
    """Replace non-finite floats by strings so the report stays strict JSON."""
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def random_selection(spec, grid: TimeGrid, rng: np.random.Generator, blocks: int = 8) -> GridFunction:
    """Piecewise-constant selection with |z| <= gamma, drawn uniformly from the gamma-ball."""
    n = grid.n + 1
    d = spec.dim
    gam = sample(spec.perturb.gamma, grid.nodes)
    cuts = np.sort(rng.integers(0, n, size=blocks - 1))
    dirs = rng.normal(size=(blocks, d))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    lens = rng.uniform(0.0, 1.0, size=blocks) ** (1.0 / d)
    piece = np.searchsorted(cuts, np.arange(n), side="right")
    vals = dirs[piece] * lens[piece, None] * gam[:, None]
    return GridFunction(grid, vals, "selection")


def random_initial_point(spec, rng: np.random.Generator, spread: float = 0.5) -> np.ndarray:
    """A feasible point near x0."""
    C = spec.set
    y = spec.x0 + rng.uniform(-spread, spread, size=spec.dim)
    if C.distance(spec.t0, y) >= 0.999 * C.prox_const:
        return spec.x0.copy()
    return C.project(spec.t0, y)


def deviation_pairs(spec, grid, cert, n_pairs: int, seed: int = 1):
    """Run ``n_pairs`` Monte-Carlo pairs; returns the list of DeviationReports."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_pairs):
        z1 = random_selection(spec, grid, rng)
        z2 = random_selection(spec, grid, rng)
        a = solve_fixed_selection(spec, z1, grid, x0=random_initial_point(spec, rng))
        b = solve_fixed_selection(spec, z2, grid, x0=spec.q0)
        out.append(deviation_check(a, b, cert))
    return out


def cauchy_decay_violation(records, c_T: float) -> float:
    """Largest growth of sup_z_delta between consecutive iterations with i >= c(T)."""
    worst = 0.0
    for a, b in zip(records, records[1:]):
        if a.i >= c_T:
            worst = max(worst, b.sup_z_delta - a.sup_z_delta)
    return worst


def reference_error(cfg: ScenarioConfig, spec, grid: TimeGrid, traj_for_grid) -> float:
    traj = traj_for_grid(grid)
    exact = reference_solution(cfg.reference, grid.nodes)
    return float(np.max(np.abs(traj.x.values[:, 0] - exact)))


def _solver_for(cfg: ScenarioConfig, spec, tol, max_iter):
    if cfg.reference["applies_to"] == "solve":
        return lambda g: solve_fixed_selection(spec, cfg.selection_function(spec, g), g)

    def run(g):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return iterate(spec, g, tol, max_iter)[1]
    return run


def verify(cfg: ScenarioConfig, plan: SamplingPlan | None = None,
           n_pairs: int = N_DEVIATION_PAIRS) -> tuple[VerificationReport, Trajectory | None]:
    """Run every invariant suite on one scenario; returns the report and the final trajectory."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _verify(cfg, plan, n_pairs)


def _verify(cfg, plan, n_pairs):
    rep = VerificationReport(cfg.name)
    spec = cfg.build()
    grid = cfg.time_grid()
    h = grid.h_max

    try:
        val = validate(spec, plan)
    except SweepError as exc:
        rep.add("hypotheses", math.inf, detail=str(exc))
        return rep, None
    rep.hypotheses = [asdict(c) for c in val.checks]
    for c in val.checks:
        rep.checks.append(Check(f"hypothesis:{c.name}", c.passed, float(c.max_violation)))

    try:
        cert = certify(spec, grid)
    except SweepError as exc:
        rep.add("certificate", math.inf, detail=str(exc))
        return rep, None
    rep.certificate = cert.to_dict(CERT_POINTS)
    slack = cert.slack(h)
    scale = 1.0 + (abs(cert.Phi) if math.isfinite(cert.Phi) else 0.0)
    for name, v in cert.invariant_violations().items():
        rep.add(f"certificate:{name}", v, 1e-12 * scale)

    q = solve_unperturbed(spec, grid)
    tol, max_iter = cfg.iteration["tol"], cfg.iteration["max_iter"]
    history: list = []
    traj = z = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            z, traj, it = iterate(spec, grid, tol, max_iter, cert=cert, history=history)
        rep.add("iteration:converged", 0.0)
    except MaxIterationsExceeded as exc:
        z, traj, it = exc.z, exc.traj, exc.report
        rep.add("iteration:converged", math.inf, detail=str(exc))
    except (SweepError, ValueError) as exc:
        rep.add("iteration:converged", math.inf, detail=str(exc))
        it = None
    if it is not None:
        rep.iterations = it.to_dict()
        recs = it.records
        rep.add("iteration:factorial_domination", max(r.domination_excess for r in recs))
        rep.add("iteration:lipschitz_chain", max(r.chain_excess for r in recs))
        rep.add("iteration:selection_bound",
                max(check_selection_bound(spec, zi) for zi, _ in history), spec.perturb.eps)
        bound = cert.Phi * cert.on_solver_grid("r") + slack
        rep.add("iteration:state_bound",
                max(float(np.max(np.linalg.norm(tr.x.values - q.x.values, axis=1) - bound))
                    for _, tr in history))
        rep.add("iteration:cauchy_decay", cauchy_decay_violation(recs, float(cert.c[-1])),
                2 * spec.perturb.eps)
        k_sup = float(np.max(sample(spec.perturb.k, grid.nodes)))
        rep.add("iteration:selection_residual",
                selection_residual(spec, z, traj), it.tol * (1.0 + k_sup) + spec.perturb.eps)

    trajs = [("q", q)] + ([("x", traj)] if traj is not None else [])
    for label, tr in trajs:
        rep.add(f"feasibility:{label}", float(np.max(tr.residuals)), FEASIBILITY_TOL)
        inc = inclusion_residual_check(spec, tr)
        rep.add(f"inclusion:{label}", inc.n_violations, 0, f"max_error={inc.max_error:.3e}")
        rep.add(f"norm_bound:{label}", float(np.max(tr.x.norms())) - (cert.eta + slack))
    if traj is not None:
        fe = final_estimate_check(cert, q, traj, z, SELECTION_TOL)
        rep.add("final_estimate:state", fe.max_state_excess)
        rep.add("final_estimate:selection", fe.max_selection_excess)

    for i in (1, 2, 3):
        lhs, rhs = fubini_identity_check(spec, cert.Phi, i, spec.t_end)
        rep.add(f"fubini:i={i}", abs(lhs - rhs), max(FUBINI_TOL, 10 * h / QUAD_FACTOR))

    devs = deviation_pairs(spec, grid, cert, n_pairs)
    rep.add("deviation_estimate", sum(d.n_violations for d in devs), 0,
            f"max_ratio={max(d.max_ratio for d in devs):.6f}")

    if cfg.reference is not None:
        run = _solver_for(cfg, spec, tol, max_iter)
        err = reference_error(cfg, spec, grid, run)
        rep.add("reference:error", err, cfg.reference["tol"])
        fine = TimeGrid.uniform(grid.t0, grid.t_end, h / 2)
        err_fine = reference_error(cfg, spec, fine, run)
        if err <= 1e-12 and err_fine <= 1e-12:
            rep.add("reference:order", 0.0, detail="exact on both grids")
        else:
            ratio = err / err_fine if err_fine > 0 else math.inf
            rep.add("reference:order", MIN_ORDER_RATIO - ratio, detail=f"ratio={ratio:.4f}")
    return rep, traj
