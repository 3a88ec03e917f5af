"""Catching-up solver and a priori bound checker for perturbed integro-differential sweeping processes."""
from .bounds import BoundCertificate, certify, factorial_bound, gronwall_linear, gronwall_sqrt
from .config import ScenarioConfig, parse_config, scenario_config
from .errors import SweepError
from .fields import ProblemSpec, validate
from .filippov import IterationReport, iterate
from .geometry import MovingSetOracle
from .stepper import GridFunction, TimeGrid, Trajectory, solve_fixed_selection, solve_unperturbed

__version__ = "0.1.0"
