"""Exact transition probabilities over short windows and their Monte-Carlo cross-checks.

``prob_no_jump`` and ``prob_some_jump`` are closed in terms of the integrated
hazard. ``prob_single_jump_window`` evaluates the probability that the only
event on [0, t] is one jump of a chosen component falling inside (s1, t1):

    integral over r in (s1, t1) of
        exp(-H(Z0, r)) * rate_a(Z0 + r) * exp(-H(jump_a(Z0 + r), t - r))

where ``H(Z, s)`` is the integrated total rate along the flow from ``Z``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .intensity import IntensityModel
from .quadrature import integrate_pieces
from .sampler import DEFAULT_METHOD, events_upto, first_events, integrated_hazard
from .state import State

OUTER_TOL = 1e-8
Z_PASS = 4.0


def prob_no_jump(model: IntensityModel, z: State, delta: float) -> float:
    if not delta >= 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    return math.exp(-integrated_hazard(model, z, delta))


def prob_some_jump(model: IntensityModel, z: State, delta: float) -> float:
    if not delta >= 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    return -math.expm1(-integrated_hazard(model, z, delta))


@dataclass(frozen=True)
class WindowSpec:
    s1: float
    t1: float
    t: float
    component: int

    def __post_init__(self) -> None:
        if not 0 <= self.s1 <= self.t1 <= self.t:
            raise ValueError(f"require 0 <= s1 <= t1 <= t, got s1={self.s1}, t1={self.t1}, t={self.t}")
        if not math.isfinite(self.t):
            raise ValueError("t must be finite")
        if self.component not in (0, 1):
            raise ValueError(f"component must be 0 or 1, got {self.component!r}")


def prob_single_jump_window(model: IntensityModel, z0: State, w: WindowSpec, tol: float = OUTER_TOL,
                            max_depth: int = 40) -> float:
    """Probability of exactly one event on [0, t], a jump of ``w.component`` inside (s1, t1).

    The outer integral is split at the breakpoints of the unjumped flow so that
    the jump rate is smooth on each piece; the post-jump factor is continuous
    in ``r``. Raises :class:`QuadratureError` if ``tol`` cannot be met.
    """
    if w.t1 <= w.s1:
        return 0.0
    M = model.arrays
    a = w.component
    i, x, j, y = z0.as_tuple()
    cuts = [s for s in K.breakpoints(M, x, y, w.t1) if w.s1 < s < w.t1]
    points = [w.s1, *cuts, w.t1]

    def piece_integrand(lo: float, hi: float) -> Callable[[float], float]:
        xm = x + 0.5 * (lo + hi)
        ym = y + 0.5 * (lo + hi)

        def f(r: float) -> float:
            xr, yr = x + r, y + r
            rho = K.rate(M, a, i, xr, j, yr, xm, ym)
            if rho == 0.0:
                return 0.0
            if a == 0:
                post = (1 - i, 0.0, j, yr)
            else:
                post = (i, xr, 1 - j, 0.0)
            h_pre = K.hazard(M, i, x, j, y, r)
            h_post = K.hazard(M, *post, w.t - r)
            return math.exp(-h_pre - h_post) * rho

        return f

    total = 0.0
    span = w.t1 - w.s1
    for lo, hi in zip(points[:-1], points[1:]):
        val, _ = integrate_pieces(piece_integrand(lo, hi), [lo, hi], tol * (hi - lo) / span, max_depth)
        total += val
    return min(max(total, 0.0), 1.0)


def single_jump_window_frequency(model: IntensityModel, z0: State, w: WindowSpec, reps: int, seed: int,
                                 method: str = DEFAULT_METHOD) -> tuple[float, float]:
    """Monte-Carlo frequency of the event in :func:`prob_single_jump_window` and its standard error."""
    counts, times, comps = events_upto(model, z0, w.t, reps, seed, keep=1, method=method)
    t0 = times[:, 0]
    hit = (counts == 1) & (comps[:, 0] == w.component) & (t0 > w.s1) & (t0 < w.t1)
    p = float(hit.mean())
    return p, math.sqrt(p * (1.0 - p) / reps)


@dataclass(frozen=True)
class IdentityRow:
    delta: float
    analytic: float
    empirical: float
    std_err: float
    z_score: float


@dataclass
class IdentityReport:
    rows: list[IdentityRow]
    reps: int
    seed: int
    threshold: float = Z_PASS
    method: str = DEFAULT_METHOD
    passed: bool = field(init=False)
    max_abs_z: float = field(init=False)

    def __post_init__(self) -> None:
        self.max_abs_z = max((abs(r.z_score) for r in self.rows), default=0.0)
        self.passed = self.max_abs_z <= self.threshold

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "reps": self.reps,
            "seed": self.seed,
            "method": self.method,
            "threshold": self.threshold,
            "max_abs_z": self.max_abs_z,
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _z_score(emp: float, ana: float, se: float) -> float:
    if se > 0:
        return (emp - ana) / se
    return 0.0 if emp == ana else math.inf


def validate_identities(model: IntensityModel, z: State, deltas: Sequence[float], reps: int, seed: int,
                        analytic: Callable[[IntensityModel, State, float], float] = prob_no_jump,
                        method: str = DEFAULT_METHOD) -> IdentityReport:
    """Compare empirical no-jump frequencies with ``analytic`` at every delta.

    ``analytic`` is replaceable so a corrupted formula can be shown to fail.
    """
    if reps < 10**4:
        raise ValueError(f"reps must be >= 10^4, got {reps}")
    deltas = [float(d) for d in deltas]
    if any(d < 0 for d in deltas):
        raise ValueError("deltas must be >= 0")
    horizon = max(deltas, default=0.0)
    T, _ = first_events(model, z, reps, seed, method=method, horizon=horizon)
    rows = []
    for d in deltas:
        p = float(analytic(model, z, d))
        emp = float(np.count_nonzero(T > d)) / reps
        se = math.sqrt(max(p * (1.0 - p), 0.0) / reps)
        rows.append(IdentityRow(d, p, emp, se, _z_score(emp, p, se)))
    return IdentityReport(rows, reps, seed, method=method)
