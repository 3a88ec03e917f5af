"""A priori bound evaluators: Gronwall-type bounds, eta, Psi, phi(t), Phi, c(t), r(t).

All time integrals use the composite trapezoid rule on a quadrature grid
(by default the solver grid refined 4x). Integrals of the form
int a(s) exp(B(t) - B(s)) ds are done with an exponentially fitted product
rule: a and B piecewise linear, the exponential integrated exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import NegativeInput, R0TooSmall
from .fields import Const, ProblemSpec, sample
from .stepper import TimeGrid

QUAD_FACTOR = 4
LOG_FACTORIAL_FROM = 20


def _cumint(y, t):
    return cumulative_trapezoid(y, t, initial=0.0)


def _phi1(d):
    """int_0^1 exp(d v) dv"""
    if abs(d) < 1e-8:
        return 1.0 + 0.5 * d
    return math.expm1(d) / d


def _phi2(d):
    """int_0^1 v exp(d v) dv"""
    if abs(d) < 0.05:
        term, total = 1.0, 0.5
        for n in range(1, 10):
            term *= d / n
            total += term / (n + 2)
        return total
    return (d * math.exp(d) - math.expm1(d)) / (d * d)


def exp_weighted_cumint(t, B, a) -> np.ndarray:
    """J(t_m) = int_{t_0}^{t_m} a(s) exp(B(t_m) - B(s)) ds for nodal a and B."""
    t = np.asarray(t, dtype=float)
    B = np.asarray(B, dtype=float)
    a = np.asarray(a, dtype=float)
    J = np.zeros_like(t)
    h = np.diff(t)
    dB = np.diff(B)
    acc = 0.0
    for j in range(h.size):
        p1, p2 = _phi1(dB[j]), _phi2(dB[j])
        acc = acc * math.exp(dB[j]) + h[j] * (a[j] * p2 + a[j + 1] * (p1 - p2))
        J[j + 1] = acc
    return J


def _nonneg(*arrays):
    for arr in arrays:
        if np.any(np.asarray(arr) < 0):
            raise NegativeInput("bound inputs must be nonnegative")


def gronwall_linear(rho0: float, a, b1, b2, t) -> np.ndarray:
    """Bound rho(t) <= rho0 exp(int (b+1)) + int a(s) exp(int_s^t (b+1)) ds, b = max(b1, b2).

    Valid for any nonnegative rho with rho' <= a + b1 rho + b2 int rho.
    """
    t = np.asarray(t, dtype=float)
    a, b1, b2 = (np.broadcast_to(np.asarray(v, dtype=float), t.shape) for v in (a, b1, b2))
    _nonneg(rho0, a, b1, b2)
    B = _cumint(np.maximum(b1, b2) + 1.0, t)
    return rho0 * np.exp(B) + exp_weighted_cumint(t, B, a)


def gronwall_sqrt(rho0: float, K1, K2, K3, t) -> np.ndarray:
    """Bound on sqrt(rho) when rho' <= K1 rho + K2 sqrt(rho) + K3 sqrt(rho) int sqrt(rho)."""
    t = np.asarray(t, dtype=float)
    K1, K2, K3 = (np.broadcast_to(np.asarray(v, dtype=float), t.shape) for v in (K1, K2, K3))
    _nonneg(rho0, K1, K2, K3)
    return gronwall_linear(math.sqrt(rho0), K2 / 2.0, K1 / 2.0, K3 / 2.0, t)


def quad_nodes(spec: ProblemSpec, grid: TimeGrid | None = None, factor: int = QUAD_FACTOR,
               n: int = 4000) -> np.ndarray:
    if grid is not None:
        return grid.refine(factor).nodes
    return np.linspace(spec.t0, spec.t_end, n + 1)


def _g_rows(g, s_nodes, tau_nodes, upper_to_s: bool):
    """Row integrals of the kernel bound g.

    upper_to_s=False: G(s) = int_{T0}^{T} g(s, tau) dtau  (full rows)
    upper_to_s=True:  G(s) = int_{T0}^{s} g(s, tau) dtau  (lower triangle)
    """
    if isinstance(g, Const):
        if upper_to_s:
            return g.value * (s_nodes - tau_nodes[0])
        return np.full(s_nodes.shape, g.value * (tau_nodes[-1] - tau_nodes[0]))
    out = np.empty(s_nodes.size)
    for m, s in enumerate(s_nodes):
        tau = tau_nodes[: m + 1] if upper_to_s else tau_nodes
        if tau.size < 2:
            out[m] = 0.0
            continue
        try:
            vals = np.broadcast_to(np.asarray(g(s, tau), dtype=float), tau.shape)
        except (TypeError, ValueError):
            vals = np.array([float(g(s, x)) for x in tau])
        out[m] = trapezoid(vals, tau)
    return out


def compute_Psi(spec: ProblemSpec, t) -> tuple[float, np.ndarray]:
    """Psi = exp(int (b+1)), b = 2 max(beta1 + gamma, beta2); returns (Psi, b)."""
    bg = sample(spec.drift.beta1, t) + sample(spec.perturb.gamma, t)
    b = 2.0 * np.maximum(bg, sample(spec.kernel.beta2, t))
    return float(np.exp(trapezoid(b + 1.0, t))), b


def compute_eta(spec: ProblemSpec, t=None) -> float:
    """Smallest eta admitted by the a priori norm bound (mu0 = max |x0|, |q0|)."""
    t = quad_nodes(spec) if t is None else np.asarray(t, dtype=float)
    mu0 = max(float(np.linalg.norm(spec.x0)), float(np.linalg.norm(spec.q0)))
    Psi, _ = compute_Psi(spec, t)
    bg = sample(spec.drift.beta1, t) + sample(spec.perturb.gamma, t)
    vdot = np.abs(sample(spec.set.variation_rate, t))
    G = _g_rows(spec.kernel.g, t, t, upper_to_s=False)
    return mu0 * Psi + Psi * float(trapezoid(vdot + 2.0 * bg + 2.0 * G, t))


def compute_phi_t(spec: ProblemSpec, eta: float, t=None) -> np.ndarray:
    """phi(t) = |v'(t)| + (1+eta)(beta1+gamma)(t) + int_{T0}^t g(t,s) ds + eta (T-T0) beta2(t)."""
    if eta < 0:
        raise NegativeInput("eta must be nonnegative")
    t = quad_nodes(spec) if t is None else np.asarray(t, dtype=float)
    bg = sample(spec.drift.beta1, t) + sample(spec.perturb.gamma, t)
    vdot = np.abs(sample(spec.set.variation_rate, t))
    G = _g_rows(spec.kernel.g, t, t, upper_to_s=True)
    return vdot + (1.0 + eta) * bg + G + eta * spec.length * sample(spec.kernel.beta2, t)


def compute_Phi(spec: ProblemSpec, eta: float, t=None, phi=None) -> tuple[float, np.ndarray]:
    """Phi = exp(int (K+1)) with K = max(L1^eta + phi/R, L2^eta); phi/R is 0 for convex sets."""
    t = quad_nodes(spec) if t is None else np.asarray(t, dtype=float)
    phi = compute_phi_t(spec, eta, t) if phi is None else np.asarray(phi, dtype=float)
    R = spec.set.prox_const
    L1 = sample(spec.drift.lip1(eta), t)
    L2 = sample(spec.kernel.lip2(eta), t)
    curv = np.zeros_like(t) if math.isinf(R) else phi / R
    K = np.maximum(L1 + curv, L2)
    return float(np.exp(trapezoid(K + 1.0, t))), K


def compute_r(spec: ProblemSpec, Phi: float, r0: float | None = None, t=None):
    """c(t) = Phi int k, r solving r' = gamma + Phi k r from r0 (closed form), and r'."""
    t = quad_nodes(spec) if t is None else np.asarray(t, dtype=float)
    need = float(np.linalg.norm(spec.x0 - spec.q0))
    r0 = spec.initial_radius() if r0 is None else float(r0)
    if r0 < need - 1e-12:
        raise R0TooSmall(f"r0 = {r0} < |x0 - q0| = {need}")
    k = sample(spec.perturb.k, t)
    gam = sample(spec.perturb.gamma, t)
    _nonneg(k, gam)
    c = Phi * _cumint(k, t)
    r = r0 * np.exp(c) + exp_weighted_cumint(t, c, gam)
    rdot = gam + Phi * k * r
    return c, r, rdot


def pow_over_factorial(x, i: int):
    """x**i / i! elementwise for x >= 0, in log space once i > 20."""
    x = np.asarray(x, dtype=float)
    if i == 0:
        return np.ones_like(x)
    if i <= LOG_FACTORIAL_FROM:
        return x ** i / math.factorial(i)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(i * np.log(x[pos]) - math.lgamma(i + 1))
    return out


def _upto(t_nodes, t, *arrays):
    """Restrict nodal arrays to [T0, t], appending an interpolated node at t."""
    m = int(np.searchsorted(t_nodes, t, side="right"))
    ts = t_nodes[:m]
    cut = [a[:m] for a in arrays]
    if ts[-1] < t:
        ts = np.append(ts, t)
        cut = [np.append(a, np.interp(t, t_nodes, a)) for a in cut]
    return ts, cut


@dataclass
class BoundCertificate:
    """All a priori quantities on the quadrature grid ``t``.

    ``stride`` maps solver node k to quadrature node k * stride.
    """

    t: np.ndarray
    stride: int
    eta: float
    Psi: float
    Phi: float
    b: np.ndarray
    K: np.ndarray
    phi_t: np.ndarray
    c: np.ndarray
    r: np.ndarray
    rdot: np.ndarray
    r0: float
    gamma: np.ndarray

    def slack(self, h: float) -> float:
        """Additive allowance 10 (1 + sup phi) h for comparing grid solutions with bounds."""
        return 10.0 * (1.0 + float(np.max(self.phi_t))) * h

    def on_solver_grid(self, name: str) -> np.ndarray:
        return getattr(self, name)[:: self.stride]

    def to_dict(self, max_points: int | None = None) -> dict:
        """Scalars plus solver-grid arrays, thinned to at most ``max_points`` (endpoints kept)."""
        out = {k: float(getattr(self, k)) for k in ("eta", "Psi", "Phi", "r0")}
        out["sup_phi"] = float(np.max(self.phi_t))
        out["c_T"] = float(self.c[-1])
        idx = np.arange(self.on_solver_grid("t").size)
        if max_points is not None and idx.size > max_points:
            idx = np.unique(np.round(np.linspace(0, idx.size - 1, max_points)).astype(int))
        for name in ("t", "b", "K", "phi_t", "c", "r", "rdot"):
            out[name] = self.on_solver_grid(name)[idx].tolist()
        return out

    def invariant_violations(self) -> dict:
        """Sizes of violations of Psi, Phi >= 1, r >= r0, rdot >= gamma, c(T0) = 0, c nondecreasing."""
        arrays = (self.b, self.K, self.phi_t, self.c, self.r, self.rdot)
        finite = all(np.all(np.isfinite(a)) for a in arrays) and np.isfinite([self.eta, self.Psi, self.Phi]).all()
        return {
            "finite": 0.0 if finite else math.inf,
            "Psi_ge_1": max(0.0, 1.0 - self.Psi),
            "Phi_ge_1": max(0.0, 1.0 - self.Phi),
            "r_ge_r0": max(0.0, float(np.max(self.r0 - self.r))),
            "rdot_ge_gamma": max(0.0, float(np.max(self.gamma - self.rdot))),
            "c_T0_zero": abs(float(self.c[0])),
            "c_nondecreasing": max(0.0, float(-np.min(np.diff(self.c)))) if self.c.size > 1 else 0.0,
        }


def certify(spec: ProblemSpec, grid: TimeGrid, quad_factor: int = QUAD_FACTOR,
            r0: float | None = None) -> BoundCertificate:
    t = grid.refine(quad_factor).nodes
    with np.errstate(over="ignore", invalid="ignore"):
        return _certify(spec, t, quad_factor, r0)


def _certify(spec, t, quad_factor, r0):
    eta = compute_eta(spec, t)
    Psi, b = compute_Psi(spec, t)
    phi = compute_phi_t(spec, eta, t)
    Phi, K = compute_Phi(spec, eta, t, phi)
    r0 = spec.initial_radius() if r0 is None else float(r0)
    c, r, rdot = compute_r(spec, Phi, r0, t)
    return BoundCertificate(t, quad_factor, eta, Psi, Phi, b, K, phi, c, r, rdot, r0,
                            sample(spec.perturb.gamma, t))


def factorial_bound(cert: BoundCertificate, spec: ProblemSpec, i: int, t: float) -> float:
    """Phi (r0 c(t)^i / i! + int_{T0}^t (c(t) - c(s))^i / i! gamma(s) ds)."""
    if i < 0:
        raise ValueError("i must be >= 0")
    ts, (c, gam) = _upto(cert.t, t, cert.c, cert.gamma)
    ct = c[-1]
    integral = trapezoid(pow_over_factorial(np.maximum(ct - c, 0.0), i) * gam, ts) if ts.size > 1 else 0.0
    return float(cert.Phi * (cert.r0 * float(pow_over_factorial(ct, i)) + integral))


def fubini_identity_check(spec: ProblemSpec, Phi: float, i: int, t: float, nodes=None):
    """Both sides of the Fubini identity behind the factorial estimate, by nested quadrature.

    lhs = int_{T0}^t Phi k(s) int_{T0}^s (c(s)-c(tau))^{i-1}/(i-1)! gamma(tau) dtau ds
    rhs = int_{T0}^t (c(t)-c(s))^i / i! gamma(s) ds
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    s = np.linspace(spec.t0, t, 2001) if nodes is None else np.asarray(nodes, dtype=float)
    k = sample(spec.perturb.k, s)
    gam = sample(spec.perturb.gamma, s)
    c = Phi * _cumint(k, s)
    inner = np.zeros_like(s)
    for m in range(1, s.size):
        w = pow_over_factorial(np.maximum(c[m] - c[: m + 1], 0.0), i - 1) * gam[: m + 1]
        inner[m] = trapezoid(w, s[: m + 1])
    lhs = float(trapezoid(Phi * k * inner, s))
    rhs = float(trapezoid(pow_over_factorial(np.maximum(c[-1] - c, 0.0), i) * gam, s))
    return lhs, rhs
