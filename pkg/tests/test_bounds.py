import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp, trapezoid

from sweepkit import fields as fl
from sweepkit import geometry as geo
from sweepkit.bounds import (BoundCertificate, compute_eta, compute_Phi, compute_phi_t, compute_Psi,
                             compute_r, exp_weighted_cumint, factorial_bound, fubini_identity_check,
                             gronwall_linear, gronwall_sqrt, pow_over_factorial)
from sweepkit.config import SCENARIOS
from sweepkit.errors import NegativeInput, R0TooSmall

from conftest import make_spec

T = np.linspace(0.0, 1.0, 4001)
E = math.e


def unit_map(gamma=1.0, k=1.0):
    """Perturbation with declared gamma and k (the values themselves are irrelevant here)."""
    return fl.PerturbationMap(lambda t, x, w: np.zeros_like(x), fl.Const(gamma), fl.Const(k))


def cert_with(c, gamma, Phi=1.0, r0=0.0, t=T):
    z = np.zeros_like(t)
    return BoundCertificate(t, 1, 0.0, 1.0, Phi, z, z, z, c, z, z, r0, gamma)


# -- Gronwall evaluators ------------------------------------------------------

def test_gronwall_linear_pure_exponential():
    assert gronwall_linear(1.0, 0.0, 0.0, 0.0, T)[-1] == pytest.approx(E, abs=1e-12)


def test_gronwall_linear_forcing_only():
    assert gronwall_linear(0.0, 1.0, 0.0, 0.0, T)[-1] == pytest.approx(E - 1, abs=1e-12)


def test_gronwall_linear_dominates_equality_case():
    # rho' = a + b1 rho + b2 int rho with all constants 1
    sol = solve_ivp(lambda t, u: [1 + u[0] + u[1], u[0]], (0, 1), [1.0, 0.0],
                    rtol=1e-11, atol=1e-12, dense_output=True)
    rho = sol.sol(T)[0]
    bound = gronwall_linear(1.0, 1.0, 1.0, 1.0, T)
    assert np.all(bound >= rho - 1e-9)


def test_gronwall_sqrt_examples():
    assert gronwall_sqrt(4.0, 0.0, 0.0, 0.0, T)[-1] == pytest.approx(2 * E, abs=1e-12)
    b = gronwall_sqrt(0.0, 0.0, 2.0, 0.0, T)
    assert b[-1] == pytest.approx(E - 1, abs=1e-12)
    # rho' = 2 sqrt(rho), rho(0) = 0 has rho = t^2
    assert np.all(b >= T - 1e-12)


def test_gronwall_sqrt_dominates_equality_case():
    def rhs(t, u):
        s = math.sqrt(max(u[0], 0.0))
        return [0.5 * u[0] + 1.0 * s + 0.8 * s * u[1], s]

    sol = solve_ivp(rhs, (0, 1), [0.25, 0.0], rtol=1e-11, atol=1e-12, dense_output=True)
    root = np.sqrt(np.maximum(sol.sol(T)[0], 0))
    assert np.all(gronwall_sqrt(0.25, 0.5, 1.0, 0.8, T) >= root - 1e-9)


def test_negative_inputs_rejected():
    with pytest.raises(NegativeInput):
        gronwall_linear(-1.0, 0.0, 0.0, 0.0, T)
    with pytest.raises(NegativeInput):
        gronwall_sqrt(1.0, 0.0, -np.ones_like(T), 0.0, T)


@settings(max_examples=60, deadline=None)
@given(rho0=st.floats(0, 5), a=st.floats(0, 3), b1=st.floats(0, 3), b2=st.floats(0, 3),
       bump=st.floats(0.01, 1.0), which=st.integers(0, 3))
def test_gronwall_linear_monotone_in_inputs(rho0, a, b1, b2, bump, which):
    t = np.linspace(0, 1, 201)
    base = [rho0, a, b1, b2]
    up = list(base)
    up[which] += bump
    assert np.all(gronwall_linear(*up, t) >= gronwall_linear(*base, t) - 1e-12)


@settings(max_examples=50, deadline=None)
@given(d=st.floats(-3, 3), a0=st.floats(0, 2), a1=st.floats(0, 2))
def test_exp_weighted_cumint_exact_for_linear_data(d, a0, a1):
    # a(s) = a0 + a1 s, B = d s: integral has a closed form
    t = np.linspace(0, 1, 11)
    J = exp_weighted_cumint(t, d * t, a0 + a1 * t)[-1]
    fine = np.linspace(0, 1, 200_001)
    ref = trapezoid((a0 + a1 * fine) * np.exp(d * (1 - fine)), fine)
    assert J == pytest.approx(ref, rel=1e-8, abs=1e-10)


# -- eta, phi, Phi ------------------------------------------------------------

def test_eta_zero_data():
    assert compute_eta(make_spec(), T) == 0.0


def test_eta_constant_data():
    spec = make_spec(drift=fl.constant_drift([1.0]), x0=(1.0,))
    Psi, b = compute_Psi(spec, T)
    assert np.all(b == 2.0)
    assert Psi == pytest.approx(E ** 3, rel=1e-12)
    assert compute_eta(spec, T) == pytest.approx(3 * E ** 3, abs=1e-9)


def test_eta_affine_in_mu0():
    a = compute_eta(make_spec(drift=fl.constant_drift([1.0]), x0=(1.0,)), T)
    b = compute_eta(make_spec(drift=fl.constant_drift([1.0]), x0=(2.0,)), T)
    assert b - a == pytest.approx(E ** 3, rel=1e-12)


def test_eta_uses_larger_of_x0_q0():
    spec = make_spec(x0=(0.5,), q0=(-2.0,))
    assert compute_eta(spec, T) == pytest.approx(2.0 * E, rel=1e-12)


def test_phi_examples():
    assert np.all(compute_phi_t(make_spec(), 3.0, T) == 0.0)
    moving = make_spec(geo.Box([0.0], [math.inf], velocity=[1.0]))
    np.testing.assert_allclose(compute_phi_t(moving, 3.0, T), 1.0)
    memory = make_spec(kernel=fl.memory_kernel(1.0))
    np.testing.assert_allclose(compute_phi_t(memory, 2.0, T), 2.0)
    with pytest.raises(NegativeInput):
        compute_phi_t(memory, -1.0, T)


def test_phi_kernel_bound_integral():
    spec = make_spec(kernel=fl.constant_kernel([2.0]))
    np.testing.assert_allclose(compute_phi_t(spec, 0.0, T), 2.0 * T, atol=1e-12)


def test_Phi_examples():
    Phi, K = compute_Phi(make_spec(), 0.0, T)
    assert np.all(K == 0.0) and Phi == pytest.approx(E, rel=1e-12)
    spec = make_spec(geo.BallComplement([0.0, 0.0], 1.0), drift=fl.linear_drift(np.eye(2)), x0=(2.0, 0.0))
    Phi, K = compute_Phi(spec, 1.0, T, phi=np.ones_like(T))
    np.testing.assert_allclose(K, 2.0)
    assert Phi == pytest.approx(E ** 3, rel=1e-12)


def test_Phi_decreases_with_R():
    phi = np.ones_like(T)
    Ks = []
    for R in (0.5, 1.0, 4.0):
        spec = make_spec(geo.BallComplement([0.0, 0.0], R), drift=fl.linear_drift(np.eye(2)), x0=(5.0, 0.0))
        Ks.append(compute_Phi(spec, 1.0, T, phi=phi)[1])
    assert np.all(Ks[0] > Ks[1]) and np.all(Ks[1] > Ks[2])


# -- r, c, factorial bound ----------------------------------------------------

def test_r_without_lipschitz_constant():
    spec = make_spec(perturb=unit_map(gamma=0.5, k=0.0), x0=(0.3,), q0=(0.0,))
    c, r, rdot = compute_r(spec, 3.0, None, T)
    assert np.all(c == 0.0)
    np.testing.assert_allclose(r, 0.3 + 0.5 * T, atol=1e-12)
    np.testing.assert_allclose(rdot, 0.5)


def test_r_without_gamma():
    spec = make_spec(perturb=unit_map(gamma=0.0, k=1.0), x0=(0.3,), q0=(0.0,))
    c, r, _ = compute_r(spec, 2.0, None, T)
    np.testing.assert_allclose(r, 0.3 * np.exp(c), rtol=1e-13)


def test_r_closed_form():
    spec = make_spec(perturb=unit_map())
    c, r, rdot = compute_r(spec, 2.0, 0.0, T)
    np.testing.assert_allclose(c, 2 * T, atol=1e-13)
    assert r[-1] == pytest.approx((E ** 2 - 1) / 2, abs=1e-9)
    np.testing.assert_allclose(rdot, 1 + 2 * r)


def test_r0_too_small():
    spec = make_spec(x0=(1.0,), q0=(0.0,))
    with pytest.raises(R0TooSmall):
        compute_r(spec, 1.0, 0.5, T)


def test_factorial_bound_examples():
    cert = cert_with(T.copy(), np.ones_like(T))
    spec = make_spec(perturb=unit_map())
    assert factorial_bound(cert, spec, 1, 1.0) == pytest.approx(0.5, abs=1e-9)
    assert factorial_bound(cert, spec, 0, 1.0) == pytest.approx(1.0, abs=1e-12)
    cert0 = cert_with(2 * T, np.zeros_like(T), Phi=3.0, r0=0.5)
    assert factorial_bound(cert0, spec, 3, 1.0) == pytest.approx(3.0 * 0.5 * 8 / 6, rel=1e-12)
    with pytest.raises(ValueError):
        factorial_bound(cert, spec, -1, 1.0)


def test_factorial_bound_at_interior_time():
    cert = cert_with(T.copy(), np.ones_like(T))
    # int_0^0.3 (0.3 - s) ds = 0.045
    assert factorial_bound(cert, make_spec(), 1, 0.3) == pytest.approx(0.045, abs=1e-9)


def test_factorial_bound_decays(scenario_runs):
    run = scenario_runs["lipschitz-two-point-F"]
    cert, spec = run["cert"], run["spec"]
    start = math.ceil(cert.c[-1])
    vals = [factorial_bound(cert, spec, i, spec.t_end) for i in range(start, start + 40)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-3 * vals[0]


def test_pow_over_factorial_log_branch_is_continuous():
    x = np.array([0.0, 0.5, 3.0, 40.0])
    direct = x ** 21 / math.factorial(21)
    np.testing.assert_allclose(pow_over_factorial(x, 21), direct, rtol=1e-12)
    assert np.all(np.isfinite(pow_over_factorial(np.array([500.0]), 400)))


# -- Fubini identity ----------------------------------------------------------

def test_fubini_hand_values():
    spec = make_spec(perturb=unit_map())
    lhs, rhs = fubini_identity_check(spec, 1.0, 1, 1.0)
    assert lhs == pytest.approx(0.5, abs=1e-6) and rhs == pytest.approx(0.5, abs=1e-6)
    lhs, rhs = fubini_identity_check(spec, 1.0, 2, 1.0)
    assert lhs == pytest.approx(1 / 6, abs=1e-6) and rhs == pytest.approx(1 / 6, abs=1e-6)
    assert abs(lhs - rhs) <= 1e-6


def test_fubini_without_gamma():
    spec = make_spec(perturb=unit_map(gamma=0.0))
    assert fubini_identity_check(spec, 2.0, 1, 1.0) == (0.0, 0.0)
    with pytest.raises(ValueError):
        fubini_identity_check(spec, 2.0, 0, 1.0)


@pytest.mark.parametrize("name", list(SCENARIOS))
def test_fubini_on_scenarios(scenario_runs, name):
    run = scenario_runs[name]
    tol = max(1e-6, 10 * run["grid"].h_max / 4)
    for i in (1, 2, 3):
        lhs, rhs = fubini_identity_check(run["spec"], run["cert"].Phi, i, run["spec"].t_end)
        assert abs(lhs - rhs) <= tol


# -- certificate invariants ---------------------------------------------------

@pytest.mark.parametrize("name", list(SCENARIOS))
def test_certificate_invariants(scenario_runs, name):
    cert = scenario_runs[name]["cert"]
    assert cert.Psi >= 1 and cert.Phi >= 1
    assert np.all(cert.r >= cert.r0) and np.all(cert.rdot >= cert.gamma)
    assert cert.c[0] == 0.0 and np.all(np.diff(cert.c) >= 0)
    assert all(v == 0.0 for v in cert.invariant_violations().values())


def test_certificate_export_is_thinned():
    run_t = np.linspace(0, 1, 4 * 1000 + 1)
    z = np.zeros_like(run_t)
    cert = BoundCertificate(run_t, 4, 1.0, 1.0, 1.0, z, z, z, z, z, z, 0.0, z)
    d = cert.to_dict(max_points=201)
    assert len(d["t"]) == 201 and d["t"][0] == 0.0 and d["t"][-1] == 1.0
    assert len(cert.to_dict()["t"]) == 1001


def test_non_finite_certificate_is_reported():
    spec = make_spec(geo.BallComplement([0.0, 0.0], 0.01), drift=fl.constant_drift([50.0, 0.0]),
                     x0=(3.0, 0.0), interval=(0.0, 5.0))
    from sweepkit.bounds import certify
    from sweepkit.stepper import TimeGrid
    cert = certify(spec, TimeGrid.uniform(0, 5, 0.1))
    assert cert.invariant_violations()["finite"] == math.inf
