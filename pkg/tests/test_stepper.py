import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from sweepkit import fields as fl
from sweepkit import geometry as geo
from sweepkit.bounds import certify
from sweepkit.config import SCENARIOS, reference_solution, scenario_config
from sweepkit.errors import GridMismatch, InfeasibleInitialPoint, RegionViolation
from sweepkit.stepper import (GridFunction, TimeGrid, deviation_check, inclusion_residual_check,
                              read_selection_csv, solve_fixed_selection, solve_unperturbed,
                              volterra_term, write_csv)

from conftest import make_spec


def zero_sel(grid, d=1):
    return GridFunction.constant(grid, np.zeros(d))


# -- grid types -------------------------------------------------------------

def test_uniform_grid():
    g = TimeGrid.uniform(0.0, 1.0, 1e-3)
    assert g.n == 1000 and g.t0 == 0.0 and g.t_end == 1.0
    assert g.h_max == pytest.approx(1e-3)
    assert TimeGrid.uniform(0.0, 1.0, 0.3).h_max <= 0.3


def test_grid_rejects_bad_nodes():
    for nodes in ([0.0], [0.0, 0.0, 1.0], [1.0, 0.5]):
        with pytest.raises(ValueError):
            TimeGrid(np.array(nodes))
    with pytest.raises(ValueError):
        TimeGrid.uniform(0, 1, 0.0)


def test_refine_keeps_nodes():
    g = TimeGrid(np.array([0.0, 0.3, 1.0]))
    r = g.refine(4)
    assert r.n == 8
    np.testing.assert_array_equal(r.nodes[::4], g.nodes)


def test_grid_function_interpolation_kinds():
    g = TimeGrid(np.array([0.0, 1.0, 2.0]))
    vals = np.array([[0.0], [2.0], [4.0]])
    assert GridFunction(g, vals, "state")(0.5)[0] == 1.0
    assert GridFunction(g, vals, "selection")(0.5)[0] == 0.0
    assert GridFunction(g, vals, "derivative")(1.0)[0] == 2.0
    with pytest.raises(ValueError):
        GridFunction(g, vals[:2])
    with pytest.raises(ValueError):
        GridFunction(g, vals * np.nan)


# -- Volterra quadrature ----------------------------------------------------

def test_volterra_term_empty_integral():
    spec = make_spec(kernel=fl.memory_kernel())
    g = TimeGrid.uniform(0, 1, 0.1)
    np.testing.assert_array_equal(volterra_term(spec, GridFunction.constant(g, [1.0]), 0), [0.0])


def test_volterra_term_constant_kernel():
    spec = make_spec(kernel=fl.constant_kernel([1.0]))
    g = TimeGrid.uniform(0, 1, 1e-2)
    v = volterra_term(spec, GridFunction.constant(g, [7.0]), g.n)
    assert v[0] == pytest.approx(g.n * 1e-2, abs=1e-12)


def test_volterra_term_cosine_history():
    spec = make_spec(kernel=fl.memory_kernel())
    g = TimeGrid.uniform(0, 1, 1e-3)
    x = GridFunction(g, np.cos(g.nodes)[:, None])
    v = volterra_term(spec, x, g.n)
    assert abs(v[0] - math.sin(1.0)) <= 1e-3
    vt = volterra_term(spec, x, g.n, quadrature="trapezoid")
    assert abs(vt[0] - math.sin(1.0)) <= 1e-6


def test_accumulator_matches_direct_quadrature():
    kernels = [fl.memory_kernel(0.7), fl.separable_kernel((1.0, 0.5), (2.0, -1.0), (0.0, 1.0)),
               fl.VolterraKernel(lambda t, s, x: np.sin(t - s) * x, fl.Const(0.0), fl.Const(1.0),
                                 lambda eta: fl.Const(1.0))]
    for quad in ("left", "trapezoid"):
        for K in kernels:
            spec = make_spec(kernel=K, x0=(1.0,))
            g = TimeGrid.uniform(0, 1, 0.05)
            tr = solve_fixed_selection(spec, zero_sel(g), g, quadrature=quad)
            for k in (0, 1, 7, g.n):
                np.testing.assert_allclose(tr.volterra.values[k], volterra_term(spec, tr.x, k, quad),
                                           rtol=1e-12, atol=1e-14)


# -- solver examples --------------------------------------------------------

@pytest.mark.parametrize("h", [1e-2, 1e-3])
def test_moving_wall_exact(h):
    spec = make_spec(geo.Box([0.0], [math.inf], velocity=[1.0]))
    g = TimeGrid.uniform(0, 1, h)
    tr = solve_fixed_selection(spec, zero_sel(g), g)
    assert np.max(np.abs(tr.x.values[:, 0] - g.nodes)) <= 1e-12
    q = solve_unperturbed(spec, g)
    np.testing.assert_array_equal(q.x.values, tr.x.values)


def test_volterra_oscillator_against_cosine():
    spec = make_spec(kernel=fl.memory_kernel(), x0=(1.0,))
    g = TimeGrid.uniform(0, 1, 1e-3)
    tr = solve_fixed_selection(spec, zero_sel(g), g)
    assert abs(tr.x.values[-1, 0] - math.cos(1.0)) <= 5e-3


def test_clamped_half_line_stays_at_zero():
    spec = make_spec(geo.Box([0.0], [math.inf]), perturb=fl.singleton_map([0.8]))
    g = TimeGrid.uniform(0, 1, 1e-2)
    tr = solve_fixed_selection(spec, GridFunction.constant(g, [0.8]), g)
    assert np.all(tr.x.values == 0.0)


def test_unperturbed_static_set_stays_put():
    spec = make_spec(geo.Ball([0.0, 0.0], 1.0), x0=(0.3, -0.2))
    g = TimeGrid.uniform(0, 1, 0.1)
    np.testing.assert_array_equal(solve_unperturbed(spec, g).x.values, np.tile([0.3, -0.2], (g.n + 1, 1)))


def test_unperturbed_exponential_decay():
    # the drift enters with a minus sign, so f1 = +x gives x' = -x
    spec = make_spec(drift=fl.linear_drift([[1.0]]), x0=(1.0,))
    g = TimeGrid.uniform(0, 1, 1e-3)
    q = solve_unperturbed(spec, g)
    assert np.max(np.abs(q.x.values[:, 0] - np.exp(-g.nodes))) <= 5e-3


def test_matches_reference_ode_integrator_in_free_space():
    drift = fl.linear_drift([[0.0, -1.0], [1.0, 0.3]])
    kernel = fl.separable_kernel((1.0, 0.0), (0.5, 0.0), (0.0, 1.0))
    spec = make_spec(drift=drift, kernel=kernel, x0=(1.0, 0.0))
    A = np.array([[0.0, -1.0], [1.0, 0.3]])

    # x' = -A x - 0.5 I(t), I' = x
    def rhs(t, u):
        x, I = u[:2], u[2:]
        return np.concatenate([-A @ x - 0.5 * I, x])

    ref = solve_ivp(rhs, (0, 1), [1.0, 0.0, 0.0, 0.0], rtol=1e-11, atol=1e-12, dense_output=True)
    errs = []
    for h in (2e-3, 1e-3):
        g = TimeGrid.uniform(0, 1, h)
        tr = solve_fixed_selection(spec, zero_sel(g, 2), g)
        errs.append(np.max(np.abs(tr.x.values - ref.sol(g.nodes)[:2].T)))
    assert errs[1] < 1e-2
    assert errs[0] / errs[1] >= 1.8


def test_solver_errors():
    spec = make_spec(geo.Box([0.0], [1.0]), x0=(0.5,))
    g = TimeGrid.uniform(0, 1, 0.1)
    with pytest.raises(GridMismatch):
        solve_fixed_selection(spec, zero_sel(TimeGrid.uniform(0, 1, 0.2)), g)
    with pytest.raises(InfeasibleInitialPoint):
        solve_fixed_selection(spec, zero_sel(g), g, x0=[2.0])
    with pytest.raises(ValueError):
        solve_fixed_selection(spec, GridFunction.constant(g, [1.0]), g)


def test_region_violation_on_coarse_step():
    spec = make_spec(geo.BallComplement([0.0, 0.0], 1.0), drift=fl.constant_drift([10.0, 0.0]),
                     x0=(1.0, 0.0))
    g = TimeGrid.uniform(0, 1, 0.1)
    with pytest.raises(RegionViolation):
        solve_fixed_selection(spec, zero_sel(g, 2), g)


def test_determinism_bit_identical(scenario_runs):
    run = scenario_runs["lipschitz-two-point-F"]
    again = solve_fixed_selection(run["spec"], run["z"], run["grid"])
    np.testing.assert_array_equal(again.x.values, run["traj"].x.values)
    np.testing.assert_array_equal(again.volterra.values, run["traj"].volterra.values)


def test_xdot_is_forward_difference_per_interval():
    spec = make_spec(kernel=fl.memory_kernel(), x0=(1.0,))
    g = TimeGrid.uniform(0, 1, 0.1)
    tr = solve_fixed_selection(spec, zero_sel(g), g)
    np.testing.assert_allclose(tr.xdot.values[:-1, 0], np.diff(tr.x.values[:, 0]) / g.steps)


# -- invariants on built-in scenarios ----------------------------------------

@pytest.mark.parametrize("name", list(SCENARIOS))
def test_feasibility_by_construction(scenario_runs, name):
    run = scenario_runs[name]
    for tr in (run["q"], run["traj"]):
        assert np.max(tr.residuals) <= 1e-9


@pytest.mark.parametrize("name", list(SCENARIOS))
def test_discrete_inclusion_residual(scenario_runs, name):
    run = scenario_runs[name]
    for tr in (run["q"], run["traj"]):
        rep = inclusion_residual_check(run["spec"], tr)
        assert rep.passed, rep


@pytest.mark.parametrize("name", list(SCENARIOS))
def test_a_priori_norm_bound(scenario_runs, name):
    run = scenario_runs[name]
    cert = run["cert"]
    for tr in (run["q"], run["traj"]):
        assert np.max(tr.x.norms()) <= cert.eta + cert.slack(run["grid"].h_max)


@pytest.mark.parametrize("name", [n for n, s in SCENARIOS.items() if "reference" in s])
def test_grid_refinement_convergence(name):
    import warnings

    from sweepkit.filippov import iterate
    cfg = scenario_config(name)
    spec = cfg.build()
    errs = []
    for h in (cfg.h(), cfg.h() / 2):
        g = TimeGrid.uniform(spec.t0, spec.t_end, h)
        if cfg.reference["applies_to"] == "solve":
            tr = solve_fixed_selection(spec, zero_sel(g, spec.dim), g)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                tr = iterate(spec, g, cfg.iteration["tol"], cfg.iteration["max_iter"])[1]
        errs.append(float(np.max(np.abs(tr.x.values[:, 0] - reference_solution(cfg.reference, g.nodes)))))
    assert errs[0] <= cfg.reference["tol"]
    assert (errs[0] <= 1e-12 and errs[1] <= 1e-12) or errs[1] <= errs[0] / 1.8


# -- deviation estimate -----------------------------------------------------

def test_deviation_identical_inputs():
    spec = make_spec(kernel=fl.memory_kernel(), x0=(1.0,))
    g = TimeGrid.uniform(0, 1, 0.01)
    tr = solve_fixed_selection(spec, zero_sel(g), g)
    rep = deviation_check(tr, tr, certify(spec, g))
    assert rep.passed and rep.max_ratio == 0.0


def test_deviation_static_convex_shift():
    spec = make_spec(geo.Ball([0.0, 0.0], 2.0), x0=(0.0, 0.0))
    g = TimeGrid.uniform(0, 1, 0.01)
    a = solve_fixed_selection(spec, zero_sel(g, 2), g)
    b = solve_fixed_selection(spec, zero_sel(g, 2), g, x0=[0.5, 0.5])
    cert = certify(spec, g)
    assert cert.Phi >= 1.0
    rep = deviation_check(a, b, cert)
    assert rep.passed and rep.max_ratio <= 1.0


def test_deviation_grid_mismatch():
    spec = make_spec()
    g1, g2 = TimeGrid.uniform(0, 1, 0.1), TimeGrid.uniform(0, 1, 0.2)
    a = solve_fixed_selection(spec, zero_sel(g1), g1)
    b = solve_fixed_selection(spec, zero_sel(g2), g2)
    with pytest.raises(GridMismatch):
        deviation_check(a, b, certify(spec, g1))


def test_deviation_two_point_pairs():
    from sweepkit.verification import deviation_pairs
    cfg = scenario_config("two-point-F")
    spec, grid = cfg.build(), TimeGrid.uniform(0, 1, 1e-2)
    reps = deviation_pairs(spec, grid, certify(spec, grid), 100, seed=5)
    assert sum(r.n_violations for r in reps) == 0


@settings(max_examples=30, deadline=None)
@given(z1=st.floats(-1, 1), z2=st.floats(-1, 1), x0=st.floats(-0.5, 0.5))
def test_deviation_property_on_half_line(z1, z2, x0):
    spec = make_spec(geo.Box([-0.5], [math.inf], velocity=[0.5]), drift=fl.linear_drift([[0.5]]),
                     perturb=fl.ball_map([0.0], 1.0))
    g = TimeGrid.uniform(0, 1, 0.02)
    cert = certify(spec, g)
    a = solve_fixed_selection(spec, GridFunction.constant(g, [z1]), g, x0=[x0])
    b = solve_fixed_selection(spec, GridFunction.constant(g, [z2]), g)
    assert deviation_check(a, b, cert).passed


# -- CSV ---------------------------------------------------------------------

def test_csv_layout_and_selection_roundtrip(tmp_path):
    spec = make_spec(geo.Ball([0.0, 0.0], 1.0), perturb=fl.ball_map([0.0, 0.0], 1.0), x0=(0.1, 0.2))
    g = TimeGrid.uniform(0, 1, 0.1)
    z = GridFunction(g, np.column_stack([np.linspace(0, 0.5, g.n + 1), -np.full(g.n + 1, 1 / 3)]),
                     "selection")
    tr = solve_fixed_selection(spec, z, g)
    path = tmp_path / "traj.csv"
    write_csv(tr, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x_0,x_1,z_0,z_1,dist_C,volterra_norm"
    assert len(lines) == g.n + 2
    assert "-0.33333333333333331" in lines[1]
    back = read_selection_csv(path, g)
    np.testing.assert_array_equal(back.values, z.values)
    buf = io.StringIO()
    write_csv(tr, buf)
    assert buf.getvalue() == path.read_text()
    with pytest.raises(GridMismatch):
        read_selection_csv(path, TimeGrid.uniform(0, 1, 0.05))
