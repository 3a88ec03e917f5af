import numpy as np
import pytest

from sweepkit import fields as fl
from sweepkit.geometry import WholeSpace

ACCEPTANCE_LINES: dict[int, str] = {}


def make_spec(set_=None, drift=None, kernel=None, perturb=None, x0=(0.0,), interval=(0.0, 1.0),
              q0=None, r0=None):
    """ProblemSpec with zero data unless overridden."""
    set_ = set_ or WholeSpace(len(x0))
    d = set_.dim
    return fl.ProblemSpec(interval[0], interval[1], x0, set_,
                          drift or fl.zero_drift(d), kernel or fl.zero_kernel(d),
                          perturb or fl.zero_map(d), q0=q0, r0=r0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def scenario_runs():
    """Per built-in scenario: spec, grid, certificate, q, and the iterate output."""
    import warnings

    from sweepkit.bounds import certify
    from sweepkit.config import SCENARIOS, scenario_config
    from sweepkit.filippov import iterate
    from sweepkit.stepper import solve_unperturbed

    runs = {}
    for name in SCENARIOS:
        cfg = scenario_config(name)
        spec, grid = cfg.build(), cfg.time_grid()
        cert = certify(spec, grid)
        history = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            z, traj, report = iterate(spec, grid, cfg.iteration["tol"], cfg.iteration["max_iter"],
                                      cert=cert, history=history)
        runs[name] = dict(cfg=cfg, spec=spec, grid=grid, cert=cert, q=solve_unperturbed(spec, grid),
                          z=z, traj=traj, report=report, history=history)
    return runs
