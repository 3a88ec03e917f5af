"""Moving constraint sets C(t) as projection oracles, plus prox-regularity checks.

Every oracle exposes the nearest-point map and the distance function of
C(t), its prox-regularity radius ``prox_const`` (``inf`` for convex sets) and
an absolutely continuous, nondecreasing variation function ``variation(t)``
with a.e. derivative ``variation_rate(t)`` bounding how fast C(t) moves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NotANormal, PointNotInSet, RegionViolation

EPS_GEO = 1e-12
MAX_DIM = 16


def _vec(y) -> np.ndarray:
    return np.atleast_1d(np.asarray(y, dtype=float))


class MovingSetOracle:
    """Base class for C(t). Subclasses implement ``_project`` and ``distance``."""

    dim: int = 1
    prox_const: float = math.inf
    eps: float = EPS_GEO
    # Declared speed bound; variation(t) = rate * t unless a subclass overrides.
    rate: float = 0.0

    def _project(self, t: float, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, t: float, y) -> float:
        raise NotImplementedError

    def variation(self, t: float) -> float:
        return self.rate * t

    def variation_rate(self, t):
        return np.zeros_like(np.asarray(t, dtype=float)) + self.rate

    def project(self, t: float, y, check: bool = True) -> np.ndarray:
        y = _vec(y)
        if check and self.prox_const < math.inf and self.distance(t, y) >= self.prox_const:
            raise RegionViolation(
                f"d(y, C({t:g})) = {self.distance(t, y):.6g} >= R = {self.prox_const:g}; "
                "projection may be non-unique (reduce the step h)"
            )
        return self._project(t, y)

    def anchor(self, t: float) -> np.ndarray:
        """A point on or near the boundary of C(t), used to centre random samples."""
        return np.zeros(self.dim)

    @property
    def convex(self) -> bool:
        return math.isinf(self.prox_const)


def _check_dim(dim: int) -> int:
    if not 1 <= dim <= MAX_DIM:
        raise ValueError(f"dimension must be in [1, {MAX_DIM}], got {dim}")
    return dim


class WholeSpace(MovingSetOracle):
    def __init__(self, dim: int = 1):
        self.dim = _check_dim(dim)

    def _project(self, t, y):
        return y.copy()

    def distance(self, t, y):
        return 0.0


class HalfSpace(MovingSetOracle):
    """C(t) = {x : <n, x> >= offset + speed * t} with n normalised."""

    def __init__(self, normal, offset=0.0, speed=0.0, variation_rate=None):
        n = _vec(normal)
        self.dim = _check_dim(n.size)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset)
        self.speed = float(speed)
        self.rate = abs(self.speed) if variation_rate is None else float(variation_rate)

    def level(self, t):
        return self.offset + self.speed * t

    def _project(self, t, y):
        gap = self.level(t) - float(self.normal @ y)
        if gap <= 0.0:
            return y.copy()
        return y + gap * self.normal

    def distance(self, t, y):
        return max(0.0, self.level(t) - float(self.normal @ _vec(y)))

    def anchor(self, t):
        return self.level(t) * self.normal


class Box(MovingSetOracle):
    """Axis-aligned box translated by s(t) = velocity*t + amplitude*sin(omega*t).

    Infinite bounds are allowed, so half-lines such as [0, inf) and the play
    operator's moving interval [u(t) - rho, u(t) + rho] are both boxes.
    """

    def __init__(self, lower, upper, velocity=None, amplitude=None, omega=0.0,
                 variation_rate=None):
        self.lower = _vec(lower)
        self.upper = _vec(upper)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(self.lower > self.upper):
            raise ValueError("empty box: lower > upper")
        self.dim = _check_dim(self.lower.size)
        zero = np.zeros(self.dim)
        self.velocity = zero if velocity is None else _vec(velocity)
        self.amplitude = zero if amplitude is None else _vec(amplitude)
        self.omega = float(omega)
        speed = np.linalg.norm(self.velocity) + abs(self.omega) * np.linalg.norm(self.amplitude)
        self.rate = float(speed) if variation_rate is None else float(variation_rate)

    def shift(self, t):
        return self.velocity * t + self.amplitude * math.sin(self.omega * t)

    def _project(self, t, y):
        s = self.shift(t)
        return np.minimum(np.maximum(y, self.lower + s), self.upper + s)

    def distance(self, t, y):
        y = _vec(y)
        return float(np.linalg.norm(self._project(t, y) - y))

    def anchor(self, t):
        s = self.shift(t)
        lo = np.where(np.isfinite(self.lower), self.lower, self.upper - 1.0)
        lo = np.where(np.isfinite(lo), lo, 0.0)
        return lo + s


class Ball(MovingSetOracle):
    """Closed ball B[c + v t, radius] (convex)."""

    def __init__(self, center, radius, velocity=None, variation_rate=None):
        self.center0 = _vec(center)
        self.dim = _check_dim(self.center0.size)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self.velocity = np.zeros(self.dim) if velocity is None else _vec(velocity)
        self.rate = float(np.linalg.norm(self.velocity)) if variation_rate is None else float(variation_rate)

    def center(self, t):
        return self.center0 + self.velocity * t

    def _project(self, t, y):
        c = self.center(t)
        d = y - c
        r = np.linalg.norm(d)
        if r <= self.radius:
            return y.copy()
        return c + d * (self.radius / r)

    def distance(self, t, y):
        return max(0.0, float(np.linalg.norm(_vec(y) - self.center(t))) - self.radius)

    def anchor(self, t):
        e = np.zeros(self.dim)
        e[0] = self.radius
        return self.center(t) + e


class BallComplement(MovingSetOracle):
    """Complement of the open ball B(c + v t, radius); radius-prox-regular."""

    def __init__(self, center, radius, velocity=None, variation_rate=None):
        self.center0 = _vec(center)
        self.dim = _check_dim(self.center0.size)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self.prox_const = self.radius
        self.velocity = np.zeros(self.dim) if velocity is None else _vec(velocity)
        self.rate = float(np.linalg.norm(self.velocity)) if variation_rate is None else float(variation_rate)

    def center(self, t):
        return self.center0 + self.velocity * t

    def _project(self, t, y):
        c = self.center(t)
        d = y - c
        r = np.linalg.norm(d)
        if r >= self.radius:
            return y.copy()
        if r == 0.0:
            # tie-break at the centre: first coordinate axis
            e = np.zeros(self.dim)
            e[0] = 1.0
            return c + self.radius * e
        return c + d * (self.radius / r)

    def distance(self, t, y):
        return max(0.0, self.radius - float(np.linalg.norm(_vec(y) - self.center(t))))

    def anchor(self, t):
        return self.center(t)


class Annulus(MovingSetOracle):
    """Static closed annulus inner <= |x - c| <= outer; inner-prox-regular."""

    def __init__(self, center, inner, outer):
        self.center0 = _vec(center)
        self.dim = _check_dim(self.center0.size)
        self.inner = float(inner)
        self.outer = float(outer)
        if not 0 < self.inner < self.outer:
            raise ValueError("need 0 < inner < outer")
        self.prox_const = self.inner

    def _project(self, t, y):
        d = y - self.center0
        r = np.linalg.norm(d)
        if self.inner <= r <= self.outer:
            return y.copy()
        if r == 0.0:
            e = np.zeros(self.dim)
            e[0] = 1.0
            return self.center0 + self.inner * e
        return self.center0 + d * (min(max(r, self.inner), self.outer) / r)

    def distance(self, t, y):
        r = float(np.linalg.norm(_vec(y) - self.center0))
        return max(0.0, self.inner - r, r - self.outer)

    def anchor(self, t):
        return self.center0.copy()


class FunctionSet(MovingSetOracle):
    """Wraps user-supplied callables; the caller declares R, the variation and eps."""

    def __init__(self, dim: int, project: Callable, distance: Callable,
                 variation: Callable, variation_rate: Callable,
                 prox_const: float = math.inf, eps: float = EPS_GEO):
        self.dim = _check_dim(dim)
        self._proj_fn = project
        self._dist_fn = distance
        self._var = variation
        self._var_rate = variation_rate
        self.prox_const = float(prox_const)
        self.eps = float(eps)

    def _project(self, t, y):
        return _vec(self._proj_fn(t, y))

    def distance(self, t, y):
        return float(self._dist_fn(t, _vec(y)))

    def variation(self, t):
        return float(self._var(t))

    def variation_rate(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return float(self._var_rate(float(t)))
        return np.array([self._var_rate(float(s)) for s in t])


# --------------------------------------------------------------------------
# operations

def project(oracle: MovingSetOracle, t: float, y) -> np.ndarray:
    return oracle.project(t, y)


def normal_cone_membership(oracle: MovingSetOracle, t: float, x, v, step: float,
                           tol: float = 1e-9) -> bool:
    """Return True iff ``x`` is the projection of ``x + step*v`` onto C(t).

    For step < R this certifies that v is a proximal normal to C(t) at x.
    """
    x = _vec(x)
    v = _vec(v)
    if oracle.distance(t, x) > oracle.eps:
        raise PointNotInSet(f"x is at distance {oracle.distance(t, x):.3g} from C({t:g})")
    if not 0.0 < step < oracle.prox_const:
        raise ValueError(f"step must lie in (0, R), got {step}")
    if np.linalg.norm(v) > 1.0 + 1e-12:
        raise ValueError("direction must have norm <= 1")
    p = oracle.project(t, x + step * v)
    return bool(np.linalg.norm(p - x) <= tol)


def _membership_step(oracle):
    return 1.0 if oracle.convex else 0.5 * oracle.prox_const


def hypomonotonicity_residual(oracle: MovingSetOracle, t: float, x1, v1, x2, v2,
                              tol: float = 1e-9) -> float:
    """<v2 - v1, x2 - x1> + (|v1| + |v2|) / (2R) * |x2 - x1|^2.

    Nonnegative for every pair of proximal normals of an R-prox-regular set.
    The quadratic term is dropped when R is infinite.
    """
    x1, v1, x2, v2 = map(_vec, (x1, v1, x2, v2))
    step = _membership_step(oracle)
    for x, v in ((x1, v1), (x2, v2)):
        nv = np.linalg.norm(v)
        u = v / nv if nv > 0 else v
        if not normal_cone_membership(oracle, t, x, u, step, tol):
            raise NotANormal(f"{v} is not a proximal normal at {x}")
    dx = x2 - x1
    res = float((v2 - v1) @ dx)
    if not oracle.convex:
        res += 0.5 * (np.linalg.norm(v1) + np.linalg.norm(v2)) / oracle.prox_const * float(dx @ dx)
    return res


@dataclass
class VariationReport:
    max_violation: float
    worst: tuple | None
    n_samples: int
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_violation <= self.tol


def variation_check(oracle: MovingSetOracle, sample_times: Sequence[tuple[float, float]],
                    sample_points: Sequence) -> VariationReport:
    """Largest sampled excess of |d(y,C(t)) - d(y,C(s))| over |v(t) - v(s)|."""
    if len(sample_times) == 0 or len(sample_points) == 0:
        raise ValueError("variation_check needs non-empty samples")
    worst, worst_at = -math.inf, None
    for s, t in sample_times:
        dv = abs(oracle.variation(t) - oracle.variation(s))
        for y in sample_points:
            y = _vec(y)
            viol = abs(oracle.distance(t, y) - oracle.distance(s, y)) - dv
            if viol > worst:
                worst, worst_at = viol, (s, t, tuple(y.tolist()))
    return VariationReport(max(worst, 0.0), worst_at, len(sample_times) * len(sample_points), oracle.eps)


@dataclass
class HypomonotonicityReport:
    n_pairs: int
    min_residual: float
    n_violations: int
    tol: float

    @property
    def passed(self):
        return self.n_violations == 0


def sample_normal_pairs(oracle: MovingSetOracle, t: float, n: int, rng: np.random.Generator,
                        radius: float = 1.5):
    """Random (x, v) with x in C(t) and v a proximal normal of norm <= 1.

    Points y are drawn around ``oracle.anchor(t)``; x = proj(y) and v points
    from x towards y with a random length in [0, 1]. Interior draws give v = 0.
    """
    centre = oracle.anchor(t)
    out = []
    while len(out) < n:
        y = centre + rng.uniform(-radius, radius, size=oracle.dim)
        if oracle.distance(t, y) >= 0.999 * oracle.prox_const:
            continue
        x = oracle.project(t, y)
        d = y - x
        nd = np.linalg.norm(d)
        v = d / nd * rng.uniform(0.0, 1.0) if nd > 0 else np.zeros(oracle.dim)
        out.append((x, v))
    return out


def hypomonotonicity_suite(oracle: MovingSetOracle, times: Sequence[float], n_pairs: int,
                           rng: np.random.Generator, tol: float = 1e-9,
                           radius: float = 1.5) -> HypomonotonicityReport:
    per_t = max(1, n_pairs // max(1, len(times)))
    worst, bad, count = math.inf, 0, 0
    for t in times:
        a = sample_normal_pairs(oracle, t, per_t, rng, radius)
        b = sample_normal_pairs(oracle, t, per_t, rng, radius)
        for (x1, v1), (x2, v2) in zip(a, b):
            r = hypomonotonicity_residual(oracle, t, x1, v1, x2, v2)
            worst = min(worst, r)
            bad += r < -tol
            count += 1
    return HypomonotonicityReport(count, worst, bad, tol)
