"""Scenario configuration: JSON parsing, the built-in registry, and problem construction."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import fields as fl
from . import geometry as geo
from .errors import ConfigError
from .fields import ProblemSpec
from .stepper import GridFunction, TimeGrid, read_selection_csv

TOP_KEYS = {"scenario", "problem", "grid", "iteration", "selection", "reference", "output", "tags"}
PROBLEM_KEYS = {"set", "drift", "kernel", "perturbation", "interval", "x0", "q0", "r0"}


def _num(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{what}: expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{what}: must be finite")
    return float(v)


def _vector(v, what, allow_null=None):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{what}: expected a non-empty array")
    out = []
    for i, e in enumerate(v):
        if e is None and allow_null is not None:
            out.append(allow_null)
        else:
            out.append(_num(e, f"{what}[{i}]"))
    return out


def _matrix(v, what):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{what}: expected an array of rows")
    rows = [_vector(r, f"{what}[{i}]") for i, r in enumerate(v)]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{what}: ragged matrix")
    return rows


def _params(block, what, allowed):
    if not isinstance(block, dict) or "name" not in block:
        raise ConfigError(f"{what}: expected an object with a 'name'")
    params = block.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{what}.params must be an object")
    unknown = set(params) - set(allowed)
    if unknown:
        raise ConfigError(f"{what}: unknown parameters {sorted(unknown)}")
    return params


# --------------------------------------------------------------------------
# component registries: name -> (allowed params, builder(params, dim, interval))

def _set_whole(p, dim, interval):
    return geo.WholeSpace(int(_num(p.get("dim", dim), "set.dim")))


def _set_half(p, dim, interval):
    return geo.HalfSpace(_vector(p["normal"], "set.normal"), _num(p.get("offset", 0.0), "set.offset"),
                         _num(p.get("speed", 0.0), "set.speed"), _opt(p, "variation_rate"))


def _opt(p, key):
    return None if p.get(key) is None else _num(p[key], f"set.{key}")


def _set_box(p, dim, interval):
    lower = _vector(p["lower"], "set.lower", allow_null=-math.inf)
    upper = _vector(p["upper"], "set.upper", allow_null=math.inf)
    vel = _vector(p["velocity"], "set.velocity") if "velocity" in p else None
    amp = _vector(p["amplitude"], "set.amplitude") if "amplitude" in p else None
    return geo.Box(lower, upper, vel, amp, _num(p.get("omega", 0.0), "set.omega"), _opt(p, "variation_rate"))


def _set_ball(p, dim, interval):
    vel = _vector(p["velocity"], "set.velocity") if "velocity" in p else None
    return geo.Ball(_vector(p["center"], "set.center"), _num(p["radius"], "set.radius"), vel,
                    _opt(p, "variation_rate"))


def _set_ball_complement(p, dim, interval):
    vel = _vector(p["velocity"], "set.velocity") if "velocity" in p else None
    return geo.BallComplement(_vector(p["center"], "set.center"), _num(p["radius"], "set.radius"), vel,
                              _opt(p, "variation_rate"))


def _set_annulus(p, dim, interval):
    return geo.Annulus(_vector(p["center"], "set.center"), _num(p["inner"], "set.inner"),
                       _num(p["outer"], "set.outer"))


SETS = {
    "whole-space": ({"dim"}, _set_whole),
    "half-space": ({"normal", "offset", "speed", "variation_rate"}, _set_half),
    "box": ({"lower", "upper", "velocity", "amplitude", "omega", "variation_rate"}, _set_box),
    "ball": ({"center", "radius", "velocity", "variation_rate"}, _set_ball),
    "ball-complement": ({"center", "radius", "velocity", "variation_rate"}, _set_ball_complement),
    "annulus": ({"center", "inner", "outer"}, _set_annulus),
}

DRIFTS = {
    "zero": (set(), lambda p, d, I: fl.zero_drift(d)),
    "constant": ({"value"}, lambda p, d, I: fl.constant_drift(_vector(p["value"], "drift.value"))),
    "linear": ({"matrix", "offset", "forcing", "period"}, lambda p, d, I: fl.linear_drift(
        _matrix(p["matrix"], "drift.matrix"),
        _vector(p["offset"], "drift.offset") if "offset" in p else None,
        _num(p.get("forcing", 0.0), "drift.forcing"), _num(p.get("period", 1.0), "drift.period"))),
}

KERNELS = {
    "zero": (set(), lambda p, d, I: fl.zero_kernel(d)),
    "memory": ({"scale"}, lambda p, d, I: fl.memory_kernel(_num(p.get("scale", 1.0), "kernel.scale"))),
    "constant": ({"value"}, lambda p, d, I: fl.constant_kernel(_vector(p["value"], "kernel.value"))),
    "separable": ({"a", "b"}, lambda p, d, I: fl.separable_kernel(
        _vector(p["a"], "kernel.a"), _vector(p["b"], "kernel.b"), I)),
}


def _gamma(p):
    return None if p.get("gamma") is None else _num(p["gamma"], "perturbation.gamma")


def _finite_points(p):
    pts = p["points"]
    if not isinstance(pts, list) or not pts:
        raise ConfigError("perturbation.points must be a non-empty array")
    if all(isinstance(e, list) for e in pts):
        return _matrix(pts, "perturbation.points")
    return _vector(pts, "perturbation.points")


PERTURBATIONS = {
    "zero": (set(), lambda p, d, I: fl.zero_map(d)),
    "singleton": ({"value", "gamma"}, lambda p, d, I: fl.singleton_map(
        _vector(p["value"], "perturbation.value"), _gamma(p))),
    "finite": ({"points", "gamma"}, lambda p, d, I: fl.finite_map(_finite_points(p), _gamma(p))),
    "ball": ({"center", "radius", "gamma"}, lambda p, d, I: fl.ball_map(
        _vector(p["center"], "perturbation.center"), _num(p["radius"], "perturbation.radius"), _gamma(p))),
    "lipschitz-two-point": ({"gamma", "lipschitz"}, lambda p, d, I: fl.lipschitz_two_point_map(
        d, _gamma(p), None if p.get("lipschitz") is None else _num(p["lipschitz"], "perturbation.lipschitz"))),
}


def _build(registry, block, what, dim, interval):
    if not isinstance(block, dict) or block.get("name") not in registry:
        name = block.get("name") if isinstance(block, dict) else block
        raise ConfigError(f"{what}: unknown name {name!r}; known: {sorted(registry)}")
    allowed, builder = registry[block["name"]]
    p = _params(block, what, allowed)
    try:
        return builder(p, dim, interval)
    except KeyError as exc:
        raise ConfigError(f"{what}: missing parameter {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None


# --------------------------------------------------------------------------
# closed-form references

def _ref_values(ref, t):
    kind = ref["kind"]
    if kind == "linear":
        return ref.get("intercept", 0.0) + ref["slope"] * t
    if kind == "cos":
        return np.cos(t)
    if kind == "exp":
        return ref.get("scale", 1.0) * np.exp(ref["rate"] * t)
    if kind == "clamped-linear":
        return np.maximum(ref.get("intercept", 0.0) + ref["slope"] * t, ref["floor"])
    raise ConfigError(f"unknown reference kind {kind!r}")


def reference_solution(ref, t):
    """Closed-form first coordinate x_0(t) declared by a scenario."""
    return _ref_values(ref, np.asarray(t, dtype=float))


# --------------------------------------------------------------------------
# built-in scenarios

def _blk(name, **params):
    return {"name": name, "params": params} if params else {"name": name}


ZERO = {"drift": _blk("zero"), "kernel": _blk("zero"), "perturbation": _blk("zero")}

SCENARIOS = {
    "moving-wall": {
        "tags": ["1D", "convex", "moving-set"],
        "problem": {**ZERO, "set": _blk("box", lower=[0.0], upper=[None], velocity=[1.0]),
                    "interval": [0.0, 1.0], "x0": [0.0]},
        "grid": {"h": 0.01},
        "reference": {"kind": "linear", "slope": 1.0, "applies_to": "solve", "tol": 1e-12},
    },
    "play-operator": {
        "tags": ["1D", "convex", "moving-set", "hysteresis"],
        "problem": {**ZERO, "set": _blk("box", lower=[-0.5], upper=[0.5], amplitude=[1.0],
                                        omega=2 * math.pi),
                    "interval": [0.0, 2.0], "x0": [0.0]},
        "grid": {"h": 0.001},
    },
    "volterra-cosine": {
        "tags": ["1D", "free", "volterra"],
        "problem": {**ZERO, "set": _blk("whole-space", dim=1), "kernel": _blk("memory", scale=1.0),
                    "interval": [0.0, 1.0], "x0": [1.0]},
        "grid": {"h": 0.001},
        "reference": {"kind": "cos", "applies_to": "solve", "tol": 5e-3},
    },
    "exp-decay": {
        "tags": ["1D", "free", "drift"],
        "problem": {**ZERO, "set": _blk("whole-space", dim=1), "drift": _blk("linear", matrix=[[1.0]]),
                    "interval": [0.0, 1.0], "x0": [1.0]},
        "grid": {"h": 0.001},
        "reference": {"kind": "exp", "rate": -1.0, "applies_to": "solve", "tol": 5e-3},
    },
    "ball-complement-obstacle": {
        "tags": ["2D", "nonconvex", "obstacle"],
        "problem": {**ZERO, "set": _blk("ball-complement", center=[0.0, 0.0], radius=1.0),
                    "drift": _blk("constant", value=[-1.0, 0.0]),
                    "interval": [0.0, 1.2], "x0": [-1.5, 0.2]},
        "grid": {"h": 0.001},
    },
    "diode-clamp": {
        "tags": ["1D", "convex", "circuit"],
        "problem": {**ZERO, "set": _blk("box", lower=[0.0], upper=[None]),
                    "drift": _blk("linear", matrix=[[1.0]], forcing=-1.0, period=1.0),
                    "interval": [0.0, 2.0], "x0": [0.5]},
        "grid": {"h": 0.001},
    },
    "two-point-F": {
        "tags": ["1D", "free", "nonconvex-F", "k=0"],
        "problem": {**ZERO, "set": _blk("whole-space", dim=1),
                    "perturbation": _blk("finite", points=[-1.0, 1.0]),
                    "interval": [0.0, 1.0], "x0": [0.0]},
        "grid": {"h": 0.001},
        "reference": {"kind": "linear", "slope": 1.0, "applies_to": "iterate", "tol": 1e-12},
    },
    "lipschitz-two-point-F": {
        "tags": ["1D", "convex", "volterra", "nonconvex-F", "k>0"],
        "problem": {"set": _blk("box", lower=[None], upper=[0.75]),
                    "drift": _blk("linear", matrix=[[0.5]]),
                    "kernel": _blk("memory", scale=0.25),
                    "perturbation": _blk("lipschitz-two-point"),
                    "interval": [0.0, 1.0], "x0": [0.0]},
        "grid": {"h": 0.001},
        "iteration": {"tol": 1e-6, "max_iter": 20},
    },
    "singleton-F": {
        "tags": ["1D", "convex", "k=0"],
        "problem": {**ZERO, "set": _blk("box", lower=[-0.25], upper=[None]),
                    "perturbation": _blk("singleton", value=[0.5]),
                    "interval": [0.0, 1.0], "x0": [0.0]},
        "grid": {"h": 0.001},
        "reference": {"kind": "clamped-linear", "slope": -0.5, "floor": -0.25,
                      "applies_to": "iterate", "tol": 1e-12},
    },
    "ball-F": {
        "tags": ["2D", "convex", "convex-F"],
        "problem": {**ZERO, "set": _blk("ball", center=[0.0, 0.0], radius=1.0),
                    "drift": _blk("linear", matrix=[[0.0, -1.0], [1.0, 0.0]]),
                    "perturbation": _blk("ball", center=[0.0, 0.0], radius=0.5),
                    "interval": [0.0, 2.0], "x0": [1.0, 0.0]},
        "grid": {"h": 0.001},
    },
}

DEFAULT_ITERATION = {"tol": 1e-6, "max_iter": 50}
DEFAULT_SELECTION = {"kind": "zero"}


@dataclass
class ScenarioConfig:
    name: str | None
    problem: dict
    grid: dict
    iteration: dict
    selection: dict
    reference: dict | None = None
    output: dict = field(default_factory=dict)
    tags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"scenario": self.name, "problem": self.problem, "grid": self.grid,
               "iteration": self.iteration, "selection": self.selection}
        if self.reference is not None:
            out["reference"] = self.reference
        if self.output:
            out["output"] = self.output
        if self.tags:
            out["tags"] = self.tags
        return copy.deepcopy(out)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def interval(self):
        return tuple(self.problem["interval"])

    def h(self) -> float:
        if "h" in self.grid:
            return self.grid["h"]
        t0, t1 = self.interval
        return (t1 - t0) / self.grid["nodes"]

    def time_grid(self) -> TimeGrid:
        t0, t1 = self.interval
        if "nodes" in self.grid:
            return TimeGrid(np.linspace(t0, t1, int(self.grid["nodes"]) + 1))
        return TimeGrid.uniform(t0, t1, self.grid["h"])

    def build(self) -> ProblemSpec:
        return build_problem(self.problem)

    def selection_function(self, spec: ProblemSpec, grid: TimeGrid) -> GridFunction:
        kind = self.selection.get("kind", "zero")
        if kind == "zero":
            return GridFunction.constant(grid, np.zeros(spec.dim))
        if kind == "constant":
            return GridFunction.constant(grid, self.selection["value"])
        if kind == "file":
            return read_selection_csv(self.selection["path"], grid)
        raise ConfigError(f"unknown selection kind {kind!r}")


def build_problem(problem: dict) -> ProblemSpec:
    unknown = set(problem) - PROBLEM_KEYS
    if unknown:
        raise ConfigError(f"problem: unknown keys {sorted(unknown)}")
    for key in ("set", "drift", "kernel", "perturbation", "interval", "x0"):
        if key not in problem:
            raise ConfigError(f"problem: missing {key!r}")
    interval = _vector(problem["interval"], "problem.interval")
    if len(interval) != 2 or not interval[0] < interval[1]:
        raise ConfigError("problem.interval must be [T0, T] with T0 < T")
    x0 = _vector(problem["x0"], "problem.x0")
    C = _build(SETS, problem["set"], "set", len(x0), interval)
    if C.dim != len(x0):
        raise ConfigError(f"x0 has dimension {len(x0)}, set has {C.dim}")
    drift = _build(DRIFTS, problem["drift"], "drift", C.dim, interval)
    kernel = _build(KERNELS, problem["kernel"], "kernel", C.dim, interval)
    perturb = _build(PERTURBATIONS, problem["perturbation"], "perturbation", C.dim, interval)
    q0 = None if problem.get("q0") is None else _vector(problem["q0"], "problem.q0")
    r0 = None if problem.get("r0") is None else _num(problem["r0"], "problem.r0")
    try:
        return ProblemSpec(interval[0], interval[1], x0, C, drift, kernel, perturb, q0=q0, r0=r0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_blocks(cfg: ScenarioConfig):
    g = cfg.grid
    if not isinstance(g, dict) or len(set(g) & {"h", "nodes"}) != 1 or set(g) - {"h", "nodes"}:
        raise ConfigError("grid must contain exactly one of 'h' or 'nodes'")
    if "h" in g and not _num(g["h"], "grid.h") > 0:
        raise ConfigError("grid.h must be > 0")
    if "nodes" in g and (not isinstance(g["nodes"], int) or g["nodes"] < 1):
        raise ConfigError("grid.nodes must be a positive integer")
    it = cfg.iteration
    if set(it) - {"tol", "max_iter"}:
        raise ConfigError("iteration accepts only 'tol' and 'max_iter'")
    if not _num(it["tol"], "iteration.tol") > 0:
        raise ConfigError("iteration.tol must be > 0")
    if not isinstance(it["max_iter"], int) or it["max_iter"] < 1:
        raise ConfigError("iteration.max_iter must be a positive integer")
    sel = cfg.selection
    if sel.get("kind") not in ("zero", "constant", "file"):
        raise ConfigError("selection.kind must be zero, constant or file")
    if sel["kind"] == "constant":
        _vector(sel.get("value"), "selection.value")
    if sel["kind"] == "file" and not isinstance(sel.get("path"), str):
        raise ConfigError("selection.path must be a string")
    if cfg.reference is not None:
        ref = cfg.reference
        if ref.get("applies_to") not in ("solve", "iterate"):
            raise ConfigError("reference.applies_to must be solve or iterate")
        _num(ref.get("tol"), "reference.tol")
        reference_solution(ref, [0.0])


def parse_config(doc) -> ScenarioConfig:
    """Build a ScenarioConfig from a decoded JSON document (or a JSON string)."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    name = doc.get("scenario")
    base = {}
    if name is not None:
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; see list-scenarios")
        base = copy.deepcopy(SCENARIOS[name])
    if "problem" in doc:
        base["problem"] = copy.deepcopy(doc["problem"])
    if "problem" not in base:
        raise ConfigError("config needs a 'scenario' name or a 'problem' block")
    for key in ("grid", "iteration", "selection", "reference", "output", "tags"):
        if key in doc:
            base[key] = copy.deepcopy(doc[key])
    cfg = ScenarioConfig(
        name=name,
        problem=base["problem"],
        grid=base.get("grid", {"h": 1e-3}),
        iteration={**DEFAULT_ITERATION, **base.get("iteration", {})},
        selection=base.get("selection", dict(DEFAULT_SELECTION)),
        reference=base.get("reference"),
        output=base.get("output", {}),
        tags=base.get("tags", []),
    )
    _check_blocks(cfg)
    cfg.build()
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def scenario_config(name: str, **overrides) -> ScenarioConfig:
    doc = {"scenario": name}
    doc.update(overrides)
    return parse_config(doc)


def list_scenarios() -> list[str]:
    """One line per registered scenario: name, dimension, tags."""
    lines = []
    for name, sc in SCENARIOS.items():
        dim = len(sc["problem"]["x0"])
        lines.append(f"{name:<26} d={dim}  {','.join(sc.get('tags', []))}")
    return lines
