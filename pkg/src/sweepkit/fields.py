"""Single-valued data f1, f2, the set-valued perturbation F and their moduli.

Modulus functions (beta1, beta2, gamma, k, g, and the Lipschitz families
lip1(eta), lip2(eta)) are plain callables of time that must accept numpy
arrays. ``Const`` covers the common constant case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InfeasibleInitialPoint, KernelDomain
from .geometry import MovingSetOracle, hypomonotonicity_suite, variation_check

EPS_F = 1e-10


class Const:
    """Constant modulus t -> c (also (t, s) -> c for the kernel bound g)."""

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, t, s=None):
        t = np.asarray(t, dtype=float)
        if s is not None:
            t = np.broadcast_arrays(t, np.asarray(s, dtype=float))[0]
        if t.ndim == 0:
            return self.value
        return np.full(t.shape, self.value)

    def __repr__(self):
        return f"Const({self.value!r})"


def sample(fn, t) -> np.ndarray:
    """Evaluate a modulus on an array of times, tolerating scalar-only callables."""
    t = np.asarray(t, dtype=float)
    try:
        out = np.asarray(fn(t), dtype=float)
        if out.shape == t.shape:
            return out
        if out.ndim == 0:
            return np.full(t.shape, float(out))
    except (TypeError, ValueError):
        pass
    return np.array([float(fn(s)) for s in t.ravel()]).reshape(t.shape)


def _vec(y):
    return np.atleast_1d(np.asarray(y, dtype=float))


# --------------------------------------------------------------------------
# drift f1

@dataclass
class DriftField:
    """f1(t, x) with growth bound beta1 and Lipschitz family lip1(eta)."""

    eval: Callable
    beta1: Callable
    lip1: Callable

    def __call__(self, t, x):
        return _vec(self.eval(t, x))


def zero_drift(dim: int) -> DriftField:
    z = np.zeros(dim)
    return DriftField(lambda t, x: z, Const(0.0), lambda eta: Const(0.0))


def constant_drift(value) -> DriftField:
    c = _vec(value)
    n = float(np.linalg.norm(c))
    return DriftField(lambda t, x: c, Const(n), lambda eta: Const(0.0))


def square_wave(t, period):
    """+1 on the first half of each period, -1 on the second."""
    return 1.0 if (t / period) % 1.0 < 0.5 else -1.0


def linear_drift(matrix, offset=None, forcing=0.0, period=1.0) -> DriftField:
    """f1(t, x) = A x + b0 + forcing * square_wave(t) * 1.

    With A = [[1]], forcing = -1 this is the diode clamp, whose free motion
    is dx/dt = -x + u(t) because the drift enters the inclusion with a minus sign.
    """
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    b0 = np.zeros(A.shape[0]) if offset is None else _vec(offset)
    ones = np.ones(A.shape[0])
    forcing = float(forcing)
    period = float(period)
    normA = float(np.linalg.norm(A, 2))
    bmax = float(np.linalg.norm(b0) + abs(forcing) * np.linalg.norm(ones)) if forcing else float(np.linalg.norm(b0))

    def f(t, x):
        out = A @ x + b0
        if forcing:
            out = out + forcing * square_wave(t, period) * ones
        return out

    return DriftField(f, Const(max(normA, bmax)), lambda eta: Const(normA))


# --------------------------------------------------------------------------
# Volterra kernel f2

@dataclass
class VolterraKernel:
    """f2(t, s, x) on s <= t, with |f2| <= g(t, s) + beta2(t) |x|.

    ``history`` optionally evaluates f2(t, s_j, x_j) for a whole prefix at
    once (arrays s of shape (k,), X of shape (k, d)). ``separable`` marks
    kernels a(t) b(s) x, for which ``factors = (a, b)`` enables a running sum.
    """

    eval: Callable
    g: Callable
    beta2: Callable
    lip2: Callable
    history: Callable | None = None
    factors: tuple | None = None
    is_zero: bool = False

    def __call__(self, t, s, x):
        if s > t:
            raise KernelDomain(f"kernel evaluated at s={s} > t={t}")
        return _vec(self.eval(t, s, x))

    def eval_history(self, t, s, X):
        s = np.asarray(s, dtype=float)
        if s.size and s.max() > t:
            raise KernelDomain(f"kernel evaluated at s={s.max()} > t={t}")
        if self.history is not None:
            return np.asarray(self.history(t, s, X), dtype=float).reshape(X.shape[0], -1)
        return np.array([self.eval(t, sj, xj) for sj, xj in zip(s, X)], dtype=float).reshape(X.shape[0], -1)


def zero_kernel(dim: int) -> VolterraKernel:
    z = np.zeros(dim)
    return VolterraKernel(lambda t, s, x: z, Const(0.0), Const(0.0), lambda eta: Const(0.0),
                          history=lambda t, s, X: np.zeros_like(X), is_zero=True)


def memory_kernel(scale: float = 1.0) -> VolterraKernel:
    """f2(t, s, x) = scale * x."""
    a = float(scale)
    return VolterraKernel(lambda t, s, x: a * _vec(x), Const(0.0), Const(abs(a)),
                          lambda eta: Const(abs(a)),
                          history=lambda t, s, X: a * X,
                          factors=(lambda t: a, lambda s: 1.0))


def constant_kernel(value) -> VolterraKernel:
    c = _vec(value)
    return VolterraKernel(lambda t, s, x: c, Const(np.linalg.norm(c)), Const(0.0),
                          lambda eta: Const(0.0),
                          history=lambda t, s, X: np.broadcast_to(c, X.shape).copy())


def separable_kernel(a, b, interval) -> VolterraKernel:
    """f2(t, s, x) = a(t) b(s) x with a, b affine: a = (a0, a1) means a0 + a1 t."""
    a0, a1 = map(float, a)
    b0, b1 = map(float, b)
    t0, t1 = map(float, interval)
    bsup = max(abs(b0 + b1 * t0), abs(b0 + b1 * t1))

    def fa(t):
        return a0 + a1 * t

    def fb(s):
        return b0 + b1 * s

    beta2 = lambda t: np.abs(fa(np.asarray(t, dtype=float))) * bsup  # noqa: E731
    return VolterraKernel(lambda t, s, x: fa(t) * fb(s) * _vec(x), Const(0.0), beta2,
                          lambda eta: beta2,
                          history=lambda t, s, X: (fa(t) * fb(s))[:, None] * X,
                          factors=(fa, fb))


# --------------------------------------------------------------------------
# set-valued perturbation F

@dataclass
class PerturbationMap:
    """F(t, x) seen only through ``nearest(t, x, w)``, a deterministic point of
    F(t, x) closest to w."""

    nearest: Callable
    gamma: Callable
    k: Callable
    eps: float = EPS_F

    def __call__(self, t, x, w):
        return _vec(self.nearest(t, _vec(x), _vec(w)))


def _lex_nearest(points: np.ndarray, w: np.ndarray) -> np.ndarray:
    d2 = np.sum((points - w) ** 2, axis=1)
    ties = np.flatnonzero(d2 == d2.min())
    if ties.size == 1:
        return points[ties[0]].copy()
    cand = points[ties]
    order = np.lexsort(cand.T[::-1])
    return cand[order[0]].copy()


def zero_map(dim: int) -> PerturbationMap:
    z = np.zeros(dim)
    return PerturbationMap(lambda t, x, w: z.copy(), Const(0.0), Const(0.0))


def singleton_map(value, gamma=None) -> PerturbationMap:
    c = _vec(value)
    g = float(np.linalg.norm(c)) if gamma is None else float(gamma)
    return PerturbationMap(lambda t, x, w: c.copy(), Const(g), Const(0.0))


def finite_map(points, gamma=None) -> PerturbationMap:
    """F(t, x) = fixed finite set; ties broken towards the lexicographically smallest point.

    A flat list of numbers is read as one-dimensional points.
    """
    P = np.asarray(points, dtype=float)
    P = P[:, None] if P.ndim == 1 else P
    g = float(np.max(np.linalg.norm(P, axis=1))) if gamma is None else float(gamma)
    return PerturbationMap(lambda t, x, w: _lex_nearest(P, w), Const(g), Const(0.0))


def ball_map(center, radius, gamma=None) -> PerturbationMap:
    """F(t, x) = B[center, radius] (convex valued, constant in x)."""
    c = _vec(center)
    r = float(radius)
    g = float(np.linalg.norm(c)) + r if gamma is None else float(gamma)

    def nearest(t, x, w):
        d = w - c
        n = np.linalg.norm(d)
        if n <= r:
            return w.copy()
        return c + d * (r / n)

    return PerturbationMap(nearest, Const(g), Const(0.0))


def lipschitz_two_point_map(dim: int = 1, gamma=None, lipschitz=None) -> PerturbationMap:
    """F(t, x) = prod_i {-1 - sin(x_i)/2, 1 + cos(x_i)/2}; Lipschitz 1/2 in Hausdorff distance."""
    g = 1.5 * math.sqrt(dim) if gamma is None else float(gamma)
    k = 0.5 if lipschitz is None else float(lipschitz)

    def nearest(t, x, w):
        lo = -1.0 - 0.5 * np.sin(x)
        hi = 1.0 + 0.5 * np.cos(x)
        # per-coordinate choice; ties go to the smaller value
        return np.where(np.abs(hi - w) < np.abs(lo - w), hi, lo)

    return PerturbationMap(nearest, Const(g), Const(k))


def minimal_norm_selection(perturb: PerturbationMap, t: float, x) -> np.ndarray:
    """The point of F(t, x) nearest to the origin."""
    x = _vec(x)
    return perturb(t, x, np.zeros_like(x))


# --------------------------------------------------------------------------
# problem instance and validation

@dataclass
class ProblemSpec:
    t0: float
    t_end: float
    x0: np.ndarray
    set: MovingSetOracle
    drift: DriftField
    kernel: VolterraKernel
    perturb: PerturbationMap
    q0: np.ndarray | None = None
    r0: float | None = None

    def __post_init__(self):
        self.t0 = float(self.t0)
        self.t_end = float(self.t_end)
        if not self.t_end > self.t0:
            raise ValueError("interval must satisfy T0 < T")
        self.x0 = _vec(self.x0)
        self.q0 = self.x0.copy() if self.q0 is None else _vec(self.q0)
        if self.x0.size != self.set.dim or self.q0.size != self.set.dim:
            raise ValueError("initial points do not match the set dimension")

    @property
    def dim(self):
        return self.set.dim

    @property
    def length(self):
        return self.t_end - self.t0

    def initial_radius(self) -> float:
        """r0, defaulting to |x0 - q0|."""
        if self.r0 is None:
            return float(np.linalg.norm(self.x0 - self.q0))
        return float(self.r0)


@dataclass
class SamplingPlan:
    n_times: int = 16
    n_points: int = 32
    radius: float = 2.0
    seed: int = 0
    n_hypo: int = 400


@dataclass
class HypothesisCheck:
    name: str
    max_violation: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_violation <= self.tol)


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c.name for c in self.checks if not c.passed]


def _moduli(spec: ProblemSpec, eta: float):
    return {
        "beta1": spec.drift.beta1, "lip1": spec.drift.lip1(eta),
        "beta2": spec.kernel.beta2, "lip2": spec.kernel.lip2(eta),
        "gamma": spec.perturb.gamma, "k": spec.perturb.k,
        "variation_rate": spec.set.variation_rate,
    }


def validate(spec: ProblemSpec, plan: SamplingPlan | None = None) -> ValidationReport:
    """Sampled (necessary, not sufficient) checks of every standing hypothesis.

    Raises InfeasibleInitialPoint when x0 or q0 is not in C(T0); every other
    failure is recorded in the returned report.
    """
    plan = plan or SamplingPlan()
    if plan.n_times < 1 or plan.n_points < 1:
        raise ValueError("sampling plan must be non-empty")
    C = spec.set
    for name, p in (("x0", spec.x0), ("q0", spec.q0)):
        if C.distance(spec.t0, p) > C.eps:
            raise InfeasibleInitialPoint(f"{name} is at distance {C.distance(spec.t0, p):.3g} from C(T0)")

    rng = np.random.default_rng(plan.seed)
    ts = np.linspace(spec.t0, spec.t_end, plan.n_times)
    centre = spec.x0
    pts = [centre + rng.uniform(-plan.radius, plan.radius, size=spec.dim) for _ in range(plan.n_points)]
    eta = plan.radius + float(np.linalg.norm(centre))
    checks = []

    bad = 0.0
    for name, fn in _moduli(spec, eta).items():
        vals = sample(fn, ts)
        if not np.all(np.isfinite(vals)):
            bad = math.inf
        else:
            bad = max(bad, float(-vals.min()))
    gflat = np.array([float(spec.kernel.g(t, s)) for t in ts for s in ts if s <= t])
    bad = max(bad, math.inf if not np.all(np.isfinite(gflat)) else float(-gflat.min()))
    checks.append(HypothesisCheck("moduli_nonnegative_finite", max(bad, 0.0), 0.0))

    # set: absolutely continuous variation
    pairs = [tuple(sorted(rng.uniform(spec.t0, spec.t_end, size=2))) for _ in range(plan.n_times)]
    pairs.append((spec.t0, spec.t_end))
    vr = variation_check(C, pairs, pts)
    checks.append(HypothesisCheck("set_variation", vr.max_violation, C.eps))

    # set: prox-regularity via hypomonotonicity of sampled normals
    hr = hypomonotonicity_suite(C, list(ts[:: max(1, len(ts) // 4)]), plan.n_hypo, rng)
    checks.append(HypothesisCheck("set_hypomonotonicity", max(0.0, -hr.min_residual), hr.tol))

    # drift: growth and Lipschitz on B[0, eta]
    f1 = spec.drift
    lip1 = f1.lip1(eta)
    g_viol, l_viol = 0.0, 0.0
    for t in ts:
        b1 = float(f1.beta1(t))
        L1 = float(lip1(t))
        for i, x in enumerate(pts):
            fx = f1(t, x)
            g_viol = max(g_viol, float(np.linalg.norm(fx)) - b1 * (1 + np.linalg.norm(x)))
            y = pts[(i + 1) % len(pts)]
            l_viol = max(l_viol, float(np.linalg.norm(fx - f1(t, y)) - L1 * np.linalg.norm(x - y)))
    checks.append(HypothesisCheck("drift_growth", g_viol, 1e-10))
    checks.append(HypothesisCheck("drift_lipschitz", l_viol, 1e-10))

    # kernel: growth on points of C(t), Lipschitz on B[0, eta]
    f2 = spec.kernel
    lip2 = f2.lip2(eta)
    g_viol, l_viol = 0.0, 0.0
    for t in ts:
        b2 = float(f2.beta2(t))
        L2 = float(lip2(t))
        for s in ts[ts <= t][:: max(1, plan.n_times // 4)]:
            gts = float(f2.g(t, s))
            for i, x in enumerate(pts):
                fx = f2(t, s, x)
                y = pts[(i + 1) % len(pts)]
                l_viol = max(l_viol, float(np.linalg.norm(fx - f2(t, s, y)) - L2 * np.linalg.norm(x - y)))
                if C.distance(s, x) < C.prox_const:
                    xc = C.project(s, x)
                    g_viol = max(g_viol, float(np.linalg.norm(f2(t, s, xc)) - gts - b2 * np.linalg.norm(xc)))
    checks.append(HypothesisCheck("kernel_growth", g_viol, 1e-10))
    checks.append(HypothesisCheck("kernel_lipschitz", l_viol, 1e-10))

    # perturbation: boundedness and Lipschitz transport of the nearest-point oracle
    F = spec.perturb
    b_viol, l_viol = 0.0, 0.0
    for t in ts:
        gam = float(F.gamma(t))
        kt = float(F.k(t))
        for i, x in enumerate(pts):
            y = pts[(i + 3) % len(pts)]
            w = pts[(i + 7) % len(pts)]
            px = F(t, x, w)
            py = F(t, y, w)
            b_viol = max(b_viol, float(np.linalg.norm(px)) - gam)
            l_viol = max(l_viol, float(np.linalg.norm(py - w) - np.linalg.norm(px - w)
                                       - kt * np.linalg.norm(x - y)))
    checks.append(HypothesisCheck("perturbation_bounded", b_viol, F.eps))
    checks.append(HypothesisCheck("perturbation_lipschitz", l_viol, F.eps))
    return ValidationReport(checks)
