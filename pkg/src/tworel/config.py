"""Experiment configuration: YAML loading, defaults and up-front validation.

Every key sits at the top level except the ``intensity``, ``Z0``, ``h`` and
``fault_injection`` blocks. Unknown keys are rejected so typos fail fast.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .intensity import BoundViolation, IntensityModel, model_from_config
from .lyapunov import DriftParams, HypothesisError
from .recurrence import TheoremParams, validate_theorem_params
from .sampler import METHODS
from .state import State

EXPERIMENTS = (
    "simulate", "validate-sampler", "drift-check", "hitting-moments",
    "theorem-check", "dynkin-check", "stationary", "regeneration",
)

COMMON_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "results",
    "method": "thinning",
    "Z0": {"i": 0, "x": 0.0, "j": 0, "y": 0.0},
    "fault_injection": None,
}

# None marks a key that is accepted but has no default.
EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"horizon": 100.0},
    "validate-sampler": {"deltas": [0.1, 0.5, 1.0], "reps": 100_000},
    "drift-check": {"m": 1.0, "delta": 0.2, "grid_points": 10_000, "grid_upper": 1e4},
    "hitting-moments": {"K": None, "set_power": 1.0, "p": 1.0, "reps": 10_000, "bound": None, "time_cap": 1e6},
    "theorem-check": {
        "part": None, "m0": None, "delta": None, "K": None, "set_power": None, "k": None, "m": None,
        "epsilon": None, "k1": None, "K1": None, "reps": 10_000, "q_reps": 10_000, "q_grid": 6,
        "time_cap": 1e6, "strict": False,
    },
    "dynkin-check": {"h": {"kind": "lyapunov", "m": 1.0, "k": 0.0}, "horizon": 1.0, "reps": 100_000},
    "stationary": {"horizon": 1e5, "burn_in": 100.0, "bins": 50, "reference_rate": None, "ks_threshold": 0.01},
    "regeneration": {
        "K": None, "K1": None, "set_power": 1.0, "n_cycles": 6, "reps": 10_000, "q_reps": 10_000, "q_grid": 6,
        "time_cap": 1e6, "k": None, "m0": None, "delta": None, "epsilon": None, "m": None,
    },
}

REQUIRED = {
    "hitting-moments": ("K",),
    "theorem-check": ("part", "m0", "delta"),
    "regeneration": ("K", "K1"),
}


class ConfigError(ValueError):
    """Invalid configuration; maps to the usage-error exit status."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    output_dir: str
    method: str
    model: IntensityModel
    z0: State
    params: dict
    resolved: dict

    @property
    def certified_model(self) -> IntensityModel:
        return self.model

    @property
    def run_model(self) -> IntensityModel:
        """The model actually simulated, with any fault injection applied."""
        fault = self.resolved.get("fault_injection") or {}
        if not fault:
            return self.model
        return self.model.with_fault(float(fault.get("lambda_scale", 1.0)), float(fault.get("mu_scale", 1.0)))


def _parse_yaml(text: str, source: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark is not None else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"parse error at {where}: {problem}") from None


def _number(params: Mapping, key: str, *, positive: bool = False, nonneg: bool = False,
            integer: bool = False) -> None:
    val = params.get(key)
    if val is None:
        return
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{key} must be a finite number, got {val!r}")
    if integer and int(val) != val:
        raise ConfigError(f"{key} must be an integer, got {val!r}")
    if positive and not val > 0:
        raise ConfigError(f"{key} > 0 fails (got {val})")
    if nonneg and not val >= 0:
        raise ConfigError(f"{key} >= 0 fails (got {val})")


def resolve(raw: Mapping, overrides: Mapping | None = None, source: str = "<config>") -> ExperimentConfig:
    """Apply overrides and defaults, then validate every constraint before anything runs."""
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{source}: top level must be a mapping")
    data = copy.deepcopy(dict(raw))
    for key, val in (overrides or {}).items():
        if val is not None:
            data[key] = val
    exp = data.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {exp!r}")
    if "intensity" not in data:
        raise ConfigError("missing field intensity")
    allowed = {"experiment", "intensity", *COMMON_DEFAULTS, *EXPERIMENT_DEFAULTS[exp]}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) for experiment {exp}: {', '.join(unknown)}")
    resolved = {"experiment": exp}
    for key, default in {**COMMON_DEFAULTS, **EXPERIMENT_DEFAULTS[exp]}.items():
        resolved[key] = copy.deepcopy(data.get(key, default))
    resolved["intensity"] = copy.deepcopy(data["intensity"])
    for key in REQUIRED.get(exp, ()):
        if resolved.get(key) is None:
            raise ConfigError(f"missing field {key} (required by {exp})")

    try:
        model = model_from_config(resolved["intensity"])
    except KeyError as exc:
        raise ConfigError(f"missing field {exc.args[0]}") from None
    except (BoundViolation, ValueError, TypeError) as exc:
        raise ConfigError(f"intensity: {exc}") from None

    try:
        z0 = State.from_dict(resolved["Z0"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"Z0: {exc}") from None
    resolved["Z0"] = z0.to_dict()

    seed = resolved["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    if resolved["method"] not in METHODS:
        raise ConfigError(f"method must be one of {sorted(METHODS)}, got {resolved['method']!r}")
    fault = resolved["fault_injection"]
    if fault is not None:
        if not isinstance(fault, Mapping) or set(fault) - {"lambda_scale", "mu_scale"}:
            raise ConfigError("fault_injection accepts only lambda_scale and mu_scale")
        for key in fault:
            _number(fault, key, positive=True)

    params = {k: resolved[k] for k in EXPERIMENT_DEFAULTS[exp]}
    try:
        _validate_experiment(exp, params, model)
    except HypothesisError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(exp, int(seed), str(resolved["output_dir"]), resolved["method"], model, z0, params,
                            resolved)


def _validate_experiment(exp: str, p: dict, model: IntensityModel) -> None:
    for key in ("reps", "q_reps", "n_cycles", "bins", "grid_points", "q_grid"):
        _number(p, key, positive=True, integer=True)
    for key in ("horizon", "time_cap", "K", "K1", "set_power", "grid_upper"):
        _number(p, key, positive=True)
    for key in ("burn_in",):
        _number(p, key, nonneg=True)
    for key in ("p", "m", "m0", "k", "k1", "epsilon", "delta", "bound", "ks_threshold"):
        _number(p, key)

    if exp == "validate-sampler":
        deltas = p["deltas"]
        if not isinstance(deltas, list) or not deltas or any(not isinstance(d, (int, float)) or d < 0 for d in deltas):
            raise ConfigError("deltas must be a nonempty list of numbers >= 0")
        if p["reps"] < 10**4:
            raise ConfigError("reps >= 10^4 fails (validate-sampler)")
    elif exp == "drift-check":
        DriftParams(model.gamma, p["delta"], p["m"]).check_part1()
    elif exp == "hitting-moments":
        if p["reps"] < 100:
            raise ConfigError("reps >= 100 fails (hitting-moments)")
    elif exp == "theorem-check":
        if p["part"] not in (1, 2, 3):
            raise ConfigError(f"part must be 1, 2 or 3, got {p['part']!r}")
        validate_theorem_params(p["part"], model.gamma, theorem_params(p))
    elif exp == "dynkin-check":
        h = p["h"]
        if not isinstance(h, Mapping) or h.get("kind") not in ("constant", "lyapunov", "x", "y"):
            raise ConfigError("h.kind must be one of constant, lyapunov, x, y")
    elif exp == "stationary":
        if not p["horizon"] > p["burn_in"]:
            raise ConfigError("horizon > burn_in fails")
        ref = p["reference_rate"]
        if ref is not None and (not isinstance(ref, Mapping) or set(ref) - {"x", "y"}):
            raise ConfigError("reference_rate accepts only the keys x and y")
    elif exp == "regeneration":
        if not p["K1"] < p["K"]:
            raise ConfigError("K1 < K fails")
        if p["n_cycles"] < 6:
            raise ConfigError("n_cycles >= 6 fails (five excursion levels are checked)")
        if p["q_reps"] < 10**3:
            raise ConfigError("q_reps >= 10^3 fails")


def theorem_params(p: Mapping) -> TheoremParams:
    keys = ("m0", "delta", "K", "set_power", "k", "m", "epsilon", "k1", "K1", "time_cap", "q_reps", "q_grid",
            "strict")
    return TheoremParams(**{k: p[k] for k in keys if p.get(k) is not None})


def load_config(path: str | Path, overrides: Mapping | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return resolve(_parse_yaml(text, str(path)), overrides, str(path))
