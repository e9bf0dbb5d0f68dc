"""Problem files, result serialization, and the shipped demo problems.

A problem file is a JSON document: dimensions, horizon, dynamics, base cost
coefficients, a discount family, and optional solver/verification settings.
Matrix and vector entries are numbers, {"poly": [c0, c1, ...]} polynomials
in time (coefficients in increasing degree), or whole-field tabulations
{"tabulated": {"times": [...], "values": [...]}} interpolated linearly.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ProblemFileError
from .problem import (BaseCosts, Dimensions, DynamicsField, ProblemSpec,
                      make_discounted, make_kernel, validate)
from .riccati import SolveOptions
from .verification import VerifyOptions

_ENTRY = {
    "oneOf": [
        {"type": "number"},
        {"type": "object", "additionalProperties": False,
         "required": ["poly"],
         "properties": {"poly": {"type": "array", "minItems": 1,
                                 "items": {"type": "number"}}}},
    ]
}

_NUM_ARRAY_1D = {"type": "array", "minItems": 1, "items": {"type": "number"}}


def _grid_spec(rank: int) -> dict:
    inner = _ENTRY
    for _ in range(rank):
        inner = {"type": "array", "minItems": 1, "items": inner}
    return {
        "oneOf": [
            inner,
            {"type": "object", "additionalProperties": False,
             "required": ["tabulated"],
             "properties": {"tabulated": {
                 "type": "object", "additionalProperties": False,
                 "required": ["times", "values"],
                 "properties": {"times": _NUM_ARRAY_1D,
                                "values": {"type": "array", "minItems": 2}}}}},
        ]
    }


_DISCOUNT = {
    "oneOf": [
        {"type": "object", "additionalProperties": False,
         "required": ["family", "delta"],
         "properties": {"family": {"const": "exponential"},
                        "delta": {"type": "number"}}},
        {"type": "object", "additionalProperties": False,
         "required": ["family", "k"],
         "properties": {"family": {"const": "hyperbolic"},
                        "k": {"type": "number"}}},
        {"type": "object", "additionalProperties": False,
         "required": ["family", "beta", "delta", "width"],
         "properties": {"family": {"const": "quasi_hyperbolic"},
                        "beta": {"type": "number"},
                        "delta": {"type": "number"},
                        "width": {"type": "number"}}},
        {"type": "object", "additionalProperties": False,
         "required": ["family", "times", "values"],
         "properties": {"family": {"const": "tabulated"},
                        "times": _NUM_ARRAY_1D,
                        "values": {"type": "array", "minItems": 3}}},
    ]
}

PROBLEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dims", "horizon", "dynamics", "base_costs", "discount"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "dims": {"type": "object", "additionalProperties": False,
                 "required": ["n", "m"],
                 "properties": {"n": {"type": "integer", "minimum": 1},
                                "m": {"type": "integer", "minimum": 1}}},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "dynamics": {"type": "object", "additionalProperties": False,
                     "required": ["A", "B", "b"],
                     "properties": {"A": _grid_spec(2), "B": _grid_spec(2),
                                    "b": _grid_spec(1)}},
        "base_costs": {"type": "object", "additionalProperties": False,
                       "required": ["Q", "S", "M", "q", "rho", "G", "g"],
                       "properties": {"Q": _grid_spec(2), "S": _grid_spec(2),
                                      "M": _grid_spec(2), "q": _grid_spec(1),
                                      "rho": _grid_spec(1), "G": _grid_spec(2),
                                      "g": _grid_spec(1)}},
        "discount": _DISCOUNT,
        "solver": {"type": "object", "additionalProperties": False,
                   "properties": {
                       "grid_points": {"type": "integer", "minimum": 2},
                       "tolerance": {"type": "number", "exclusiveMinimum": 0},
                       "max_iterations": {"type": "integer", "minimum": 1},
                       "damping": {"type": "number", "exclusiveMinimum": 0,
                                   "maximum": 1}}},
        "verification": {"type": "object", "additionalProperties": False,
                         "properties": {
                             "seed": {"type": "integer"},
                             "spike_points": {"type": "integer", "minimum": 1},
                             "bellman_controls": {"type": "integer", "minimum": 1},
                             "value_points": {"type": "integer", "minimum": 1},
                             "gradient_points": {"type": "integer", "minimum": 1},
                             "state_box": {"type": "number",
                                           "exclusiveMinimum": 0}}},
    },
}


# ---------------------------------------------------------------------------
# coefficient construction


def _entry_fn(entry):
    """Scalar entry -> callable of t (constants stay constant)."""
    if isinstance(entry, dict):
        coeffs = [float(c) for c in entry["poly"]]
        return lambda t: float(np.polynomial.polynomial.polyval(t, coeffs))
    val = float(entry)
    return lambda t: val


def _field_fn(node, shape, what):
    """Matrix/vector field -> callable of t."""
    if isinstance(node, dict) and "tabulated" in node:
        times = np.asarray(node["tabulated"]["times"], dtype=float)
        vals = np.asarray(node["tabulated"]["values"], dtype=float)
        if vals.shape != (len(times),) + shape:
            raise ProblemFileError(
                f"{what}: tabulated values have shape {vals.shape}, expected "
                f"{(len(times),) + shape}")
        if np.any(np.diff(times) <= 0):
            raise ProblemFileError(f"{what}: tabulation times must increase")

        def fn(t, times=times, vals=vals):
            t = min(max(float(t), times[0]), times[-1])
            i = int(np.searchsorted(times, t, side="right") - 1)
            i = min(max(i, 0), len(times) - 2)
            w = (t - times[i]) / (times[i + 1] - times[i])
            return (1.0 - w) * vals[i] + w * vals[i + 1]

        return fn, False
    arr = np.asarray(node, dtype=object)
    if arr.shape != shape:
        raise ProblemFileError(f"{what} has shape {arr.shape}, expected {shape}")
    flat = [arr[idx] for idx in np.ndindex(shape)]
    if all(not isinstance(e, dict) for e in flat):
        const = np.asarray(node, dtype=float).reshape(shape)
        return (lambda t, c=const: c), True
    fns = np.empty(shape, dtype=object)
    for idx in np.ndindex(shape):
        fns[idx] = _entry_fn(arr[idx])

    def fn(t):
        out = np.empty(shape)
        for idx in np.ndindex(shape):
            out[idx] = fns[idx](t)
        return out

    return fn, False


def _base_coeff(node, shape, what):
    fn, is_const = _field_fn(node, shape, what)
    return fn(0.0) if is_const else fn


@dataclass
class LoadedProblem:
    spec: ProblemSpec
    solve_options: SolveOptions
    verify_options: VerifyOptions
    grid_points: int
    document: dict
    validation: object = None


def parse_problem(document: dict, *, source: str = "<memory>",
                  force: bool = False,
                  validation_samples: int = 60) -> LoadedProblem:
    """Build a validated problem from a parsed JSON document."""
    try:
        jsonschema.validate(document, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ProblemFileError(
            f"{source}: schema violation at /{path}: {exc.message}") from exc

    dims = Dimensions(n=document["dims"]["n"], m=document["dims"]["m"])
    n, m = dims.n, dims.m
    horizon = float(document["horizon"])
    dyn_doc = document["dynamics"]
    A_fn, _ = _field_fn(dyn_doc["A"], (n, n), "A")
    B_fn, _ = _field_fn(dyn_doc["B"], (n, m), "B")
    b_fn, _ = _field_fn(dyn_doc["b"], (n,), "b")
    dynamics = DynamicsField(A=A_fn, B=B_fn, b=b_fn)

    costs = document["base_costs"]
    try:
        base = BaseCosts(
            Q=_base_coeff(costs["Q"], (n, n), "Q"),
            S=_base_coeff(costs["S"], (m, n), "S"),
            M=_base_coeff(costs["M"], (m, m), "M"),
            q=_base_coeff(costs["q"], (n,), "q"),
            rho=_base_coeff(costs["rho"], (m,), "rho"),
            G=np.asarray(costs["G"], dtype=float).reshape(n, n),
            g=np.asarray(costs["g"], dtype=float).reshape(n),
        )
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(f"{source}: terminal weights G, g must be "
                               f"constant arrays ({exc})") from exc

    disc = dict(document["discount"])
    family = disc.pop("family")
    try:
        kernel = make_kernel(family, **disc)
        spec = make_discounted(dims, horizon, dynamics, base, kernel,
                               name=document.get("name", ""),
                               description=document.get("description", ""))
    except Exception as exc:
        raise ProblemFileError(f"{source}: {exc}") from exc

    report = validate(spec, validation_samples)
    if not report.ok and not force:
        raise ProblemFileError(
            f"{source}: problem violates the standing assumptions:\n{report}")

    solver = document.get("solver", {})
    solve_options = SolveOptions(
        tolerance=solver.get("tolerance", 1e-10),
        max_iterations=solver.get("max_iterations", 200),
        damping=solver.get("damping", 1.0))
    grid_points = solver.get("grid_points", 1000)
    vdoc = document.get("verification", {})
    verify_options = VerifyOptions(
        seed=vdoc.get("seed", 42),
        spike_points=vdoc.get("spike_points", 30),
        bellman_controls=vdoc.get("bellman_controls", 100),
        value_points=vdoc.get("value_points", 50),
        gradient_points=vdoc.get("gradient_points", 100),
        state_box=vdoc.get("state_box", 2.0))
    return LoadedProblem(spec=spec, solve_options=solve_options,
                         verify_options=verify_options,
                         grid_points=grid_points, document=document,
                         validation=report)


def load_problem(path, *, force: bool = False) -> LoadedProblem:
    """Parse, schema-check and assumption-check a problem file."""
    path = Path(path)
    if not path.exists():
        raise ProblemFileError(f"file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemFileError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    return parse_problem(document, source=str(path), force=force)


# ---------------------------------------------------------------------------
# output serialization


def format_number(x: float) -> str:
    """17 significant digits: round-trips every double exactly."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def write_csv(path: Path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_number(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_problem_echo(path: Path, document: dict) -> None:
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")


def matrix_headers(prefix: str, shape: tuple) -> list:
    if len(shape) == 0:
        return [prefix]
    if len(shape) == 1:
        return [f"{prefix}_{i}" for i in range(shape[0])]
    return [f"{prefix}_{i}_{j}" for i in range(shape[0]) for j in range(shape[1])]


# ---------------------------------------------------------------------------
# shipped demo problems


def shipped_problem_names() -> list:
    root = resources.files("tilq").joinpath("problems")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def shipped_problem_path(name: str) -> Path:
    """Filesystem path of a packaged demo problem (without .json suffix)."""
    root = resources.files("tilq").joinpath("problems")
    candidate = root.joinpath(f"{name}.json")
    if not candidate.is_file():
        raise ProblemFileError(
            f"no shipped problem {name!r}; available: "
            f"{', '.join(shipped_problem_names())}")
    return Path(str(candidate))


def load_shipped_problem(name: str) -> LoadedProblem:
    return load_problem(shipped_problem_path(name))
