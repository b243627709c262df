"""Intensity models for the two elements.

A model is a pair of rate families, one for the first element (``lambda``)
and one for the second (``mu``), together with constants ``gamma`` and
``Gamma`` such that, for every state,

    gamma / (1 + x) <= lambda(Z) <= Gamma,   gamma / (1 + y) <= mu(Z) <= Gamma.

Only the families below are accepted; each has a closed-form certificate of
that bound over the whole state space, which :func:`make_model` checks before
handing the model out.

=================  =============================================  ====================
kind               value (``own`` = x for lambda, y for mu)        parameters
=================  =============================================  ====================
constant           c                                              c
reciprocal         a + b / (1 + own)                              a, b
aging              Gamma - (Gamma - g0) / (1 + own)               g0
cross_step         g0 / (1 + own) + beta * 1(other > x0)          g0, beta, x0
piecewise_table    constant on rectangles of (x, y), per (i, j)   x_edges, y_edges, values
=================  =============================================  ====================
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels as K
from .state import State

KINDS = {
    "constant": K.KIND_CONSTANT,
    "reciprocal": K.KIND_RECIPROCAL,
    "aging": K.KIND_AGING,
    "cross_step": K.KIND_CROSS_STEP,
    "piecewise_table": K.KIND_TABLE,
}
REGIMES = ("00", "01", "10", "11")
RATE_NAMES = ("lambda", "mu")


class BoundViolation(ValueError):
    """A family parameterisation that breaks the gamma/Gamma bound."""


@dataclass(frozen=True)
class FamilyDescriptor:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown intensity family {self.kind!r}; expected one of {sorted(KINDS)}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _plain(self.params)}


def _plain(obj):
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _table_values(params: Mapping) -> np.ndarray:
    """Cell values as an array of shape (4, nx + 1, ny + 1), regime index 2*i + j."""
    x_edges = list(params.get("x_edges", []))
    y_edges = list(params.get("y_edges", []))
    shape = (len(x_edges) + 1, len(y_edges) + 1)
    values = params["values"]
    if isinstance(values, Mapping):
        missing = [r for r in REGIMES if r not in values]
        if missing:
            raise ValueError(f"piecewise_table values missing regime(s) {missing}")
        out = np.stack([np.asarray(values[r], dtype=float).reshape(shape) for r in REGIMES])
    else:
        arr = np.asarray(values, dtype=float)
        if arr.shape == (4,) + shape:
            out = arr
        else:
            out = np.broadcast_to(arr.reshape(shape), (4,) + shape).copy()
    return out


@dataclass(frozen=True)
class IntensityModel:
    """Rates of both elements plus the declared bound constants.

    The constructor does not certify anything; use :func:`make_model`.
    ``scale`` multiplies the two rates and exists only for fault injection.
    """

    lambda_spec: FamilyDescriptor
    mu_spec: FamilyDescriptor
    gamma: float
    Gamma: float
    scale: tuple[float, float] = (1.0, 1.0)

    @property
    def specs(self) -> tuple[FamilyDescriptor, FamilyDescriptor]:
        return (self.lambda_spec, self.mu_spec)

    @property
    def bound(self) -> float:
        """Dominating total rate used by thinning."""
        return 2.0 * self.Gamma * max(1.0, *self.scale)

    @property
    def arrays(self) -> np.ndarray:
        cached = self.__dict__.get("_arrays")
        if cached is None:
            cached = _encode(self)
            object.__setattr__(self, "_arrays", cached)
        return cached

    def rates(self, z: State) -> tuple[float, float]:
        M = self.arrays
        lam = K.rate(M, 0, z.i, z.x, z.j, z.y, z.x, z.y)
        mu = K.rate(M, 1, z.i, z.x, z.j, z.y, z.x, z.y)
        return float(lam), float(mu)

    def with_fault(self, lambda_scale: float = 1.0, mu_scale: float = 1.0) -> "IntensityModel":
        """Copy with the rates multiplied; the result is no longer certified."""
        return dataclasses.replace(self, scale=(float(lambda_scale), float(mu_scale)))

    def to_dict(self) -> dict:
        out = {
            "lambda": self.lambda_spec.to_dict(),
            "mu": self.mu_spec.to_dict(),
            "gamma": self.gamma,
            "Gamma": self.Gamma,
        }
        if self.scale != (1.0, 1.0):
            out["fault_scale"] = list(self.scale)
        return out


def _encode(model: IntensityModel) -> np.ndarray:
    """Flat float64 vector; layout documented in :mod:`tworel._kernels`."""
    header = np.zeros(22)
    data: list[float] = []
    for r, spec in enumerate(model.specs):
        p = spec.params
        base = 2 + 5 * r
        header[r] = KINDS[spec.kind]
        header[base + 4] = model.scale[r]
        if spec.kind == "constant":
            header[base] = p["c"]
        elif spec.kind == "reciprocal":
            header[base] = p.get("a", 0.0)
            header[base + 1] = p["b"]
        elif spec.kind == "aging":
            header[base] = p["g0"]
            header[base + 1] = model.Gamma
        elif spec.kind == "cross_step":
            header[base] = p["g0"]
            header[base + 1] = p["beta"]
            header[base + 2] = p["x0"]
        else:
            x_edges = [float(v) for v in p.get("x_edges", [])]
            y_edges = [float(v) for v in p.get("y_edges", [])]
            header[12 + 2 * r] = len(x_edges)
            header[13 + 2 * r] = len(y_edges)
            header[16 + 3 * r] = 22 + len(data)
            data.extend(x_edges)
            header[17 + 3 * r] = 22 + len(data)
            data.extend(y_edges)
            header[18 + 3 * r] = 22 + len(data)
            data.extend(_table_values(p).ravel().tolist())
    return np.concatenate([header, np.asarray(data, dtype=float)])


# ---------------------------------------------------------------- certification


def _require(ok: bool, rate: str, kind: str, constraint: str) -> None:
    if not ok:
        raise BoundViolation(f"{rate} ({kind}): constraint {constraint} fails")


def certify_family(spec: FamilyDescriptor, gamma: float, Gamma: float, rate: str = "lambda") -> None:
    """Raise :class:`BoundViolation` unless ``spec`` obeys the bound for every state."""
    p = spec.params
    kind = spec.kind
    try:
        if kind == "constant":
            c = float(p["c"])
            _require(c >= gamma, rate, kind, f"c >= gamma ({c} >= {gamma})")
            _require(c <= Gamma, rate, kind, f"c <= Gamma ({c} <= {Gamma})")
        elif kind == "reciprocal":
            a, b = float(p.get("a", 0.0)), float(p["b"])
            _require(a >= 0, rate, kind, f"a >= 0 ({a})")
            _require(b >= gamma, rate, kind, f"b >= gamma ({b} >= {gamma})")
            _require(a + b <= Gamma, rate, kind, f"a + b <= Gamma ({a + b} <= {Gamma})")
        elif kind == "aging":
            g0 = float(p["g0"])
            _require(gamma <= g0 <= Gamma, rate, kind, f"gamma <= g0 <= Gamma ({gamma} <= {g0} <= {Gamma})")
        elif kind == "cross_step":
            g0, beta, x0 = float(p["g0"]), float(p["beta"]), float(p["x0"])
            _require(g0 >= gamma, rate, kind, f"g0 >= gamma ({g0} >= {gamma})")
            _require(beta >= 0, rate, kind, f"beta >= 0 ({beta})")
            _require(x0 >= 0, rate, kind, f"x0 >= 0 ({x0})")
            _require(g0 + beta <= Gamma, rate, kind, f"g0 + beta <= Gamma ({g0 + beta} <= {Gamma})")
        else:
            for axis in ("x_edges", "y_edges"):
                edges = np.asarray(p.get(axis, []), dtype=float)
                _require(bool(np.all(edges > 0)), rate, kind, f"{axis} > 0")
                _require(bool(np.all(np.diff(edges) > 0)), rate, kind, f"{axis} strictly increasing")
            vals = _table_values(p)
            _require(bool(vals.min() >= gamma), rate, kind, f"every cell >= gamma (min {vals.min()})")
            _require(bool(vals.max() <= Gamma), rate, kind, f"every cell <= Gamma (max {vals.max()})")
    except KeyError as exc:
        raise ValueError(f"{rate} ({kind}): missing parameter {exc.args[0]!r}") from None


def make_model(lambda_spec, mu_spec, gamma: float, Gamma: float) -> IntensityModel:
    """Build a certified model; descriptors may be given as dicts ``{kind, params}``."""
    gamma = float(gamma)
    Gamma = float(Gamma)
    if not (gamma > 0 and math.isfinite(gamma)):
        raise BoundViolation(f"gamma must be positive and finite, got {gamma}")
    if not (Gamma >= gamma and math.isfinite(Gamma)):
        raise BoundViolation(f"Gamma must be finite and >= gamma, got Gamma={Gamma}, gamma={gamma}")
    specs = []
    for name, spec in zip(RATE_NAMES, (lambda_spec, mu_spec)):
        if isinstance(spec, Mapping):
            if "kind" not in spec:
                raise ValueError(f"intensity.{name}.kind is required")
            spec = FamilyDescriptor(spec["kind"], dict(spec.get("params", {})))
        certify_family(spec, gamma, Gamma, name)
        specs.append(spec)
    return IntensityModel(specs[0], specs[1], gamma, Gamma)


def model_from_config(block: Mapping) -> IntensityModel:
    for key in ("lambda", "mu", "gamma", "Gamma"):
        if key not in block:
            raise KeyError(f"intensity.{key}")
    return make_model(block["lambda"], block["mu"], block["gamma"], block["Gamma"])


# ---------------------------------------------------------------- convenience constructors


def constant_model(lam: float, mu: float, gamma: float | None = None, Gamma: float | None = None) -> IntensityModel:
    gamma = min(lam, mu) if gamma is None else gamma
    Gamma = max(lam, mu) if Gamma is None else Gamma
    return make_model({"kind": "constant", "params": {"c": lam}},
                      {"kind": "constant", "params": {"c": mu}}, gamma, Gamma)


def equality_model(gamma: float) -> IntensityModel:
    """``lambda = gamma/(1+x)``, ``mu = gamma/(1+y)``: the lower bound attained everywhere."""
    spec = {"kind": "reciprocal", "params": {"a": 0.0, "b": gamma}}
    return make_model(spec, spec, gamma, gamma)


# ---------------------------------------------------------------- operations


def evaluate(model: IntensityModel, z: State) -> tuple[float, float, float]:
    """(lambda, mu, Lambda) at ``z``."""
    lam, mu = model.rates(z)
    return lam, mu, lam + mu


def breakpoints(model: IntensityModel, z: State, horizon: float) -> list[float]:
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    return [float(s) for s in K.breakpoints(model.arrays, z.x, z.y, float(horizon))]


def default_grid(points: int = 64, upper: float = 1e3) -> list[State]:
    axis = np.concatenate([[0.0], np.geomspace(upper / 10 ** 6, upper, points - 1)])
    return [State(i, float(x), j, float(y))
            for i in (0, 1) for j in (0, 1) for x in axis for y in axis]


@dataclass(frozen=True)
class Violation:
    state: State
    inequality: str
    margin: float


def verify_bounds(model: IntensityModel, grid: Sequence[State] | None = None) -> list[Violation]:
    """Grid spot-check of the bound; an empty list means every point passed."""
    grid = default_grid() if grid is None else grid
    if len(grid) == 0:
        raise ValueError("grid must be nonempty")
    g, G = model.gamma, model.Gamma
    out = []
    for z in grid:
        lam, mu = model.rates(z)
        checks = (
            ("lambda >= gamma/(1+x)", lam - g / (1.0 + z.x)),
            ("lambda <= Gamma", G - lam),
            ("mu >= gamma/(1+y)", mu - g / (1.0 + z.y)),
            ("mu <= Gamma", G - mu),
        )
        for name, margin in checks:
            if margin < 0:
                out.append(Violation(z, name, float(margin)))
    return out
