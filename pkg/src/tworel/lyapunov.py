"""Lyapunov functions, the extended generator and the recurrence constants.

``V_m(Z) = (1+x+y)^m`` and ``V_{k,m}(t, Z) = (1+t)^k V_m(Z)``. Both jump maps
reset one clock, so ``V_m(Z^cn) = (1+y)^m`` and ``V_m(Z^nc) = (1+x)^m`` for
any flags, and the generator has the closed form

    L V_m = lambda ((1+y)^m - V_m) + mu ((1+x)^m - V_m) + 2m (1+x+y)^(m-1).

Sublevel sets ``{V_m <= K}`` are called ``KK(K, m)`` below.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from . import _kernels as K
from .intensity import IntensityModel
from .state import State, jump_cn, jump_nc

DRIFT_RTOL = 1e-9
DRIFT_CSV_COLUMNS = ("i", "x", "j", "y", "LV", "bound", "margin", "pass")


class HypothesisError(ValueError):
    """A parameter constraint failed; the message names the inequality."""


def _require(ok: bool, constraint: str, detail: str = "") -> None:
    if not ok:
        raise HypothesisError(f"{constraint} fails" + (f" ({detail})" if detail else ""))


# ---------------------------------------------------------------- parameter holders


@dataclass(frozen=True)
class LyapunovSpec:
    m: float
    k: float = 0.0
    K: float = 1.0

    def __post_init__(self) -> None:
        _require(self.m >= 1, "m >= 1", f"m={self.m}")
        _require(self.k >= 0, "k >= 0", f"k={self.k}")
        _require(self.K > 0, "K > 0", f"K={self.K}")

    def contains(self, z: State) -> bool:
        return v(self.m, z) <= self.K


@dataclass(frozen=True)
class DriftParams:
    gamma: float
    delta: float
    m: float
    epsilon: float | None = None
    m0: float | None = None
    k: float = 0.0

    def __post_init__(self) -> None:
        _require(0 < self.delta < 1, "0 < delta < 1", f"delta={self.delta}")
        _require(self.m >= 1, "m >= 1", f"m={self.m}")

    @property
    def margin(self) -> float:
        """``(1-delta) gamma - 2m``, the drift coefficient in front of ``V_{m-1}``."""
        return (1.0 - self.delta) * self.gamma - 2.0 * self.m

    def check_part1(self) -> None:
        _require(self.margin > 0, "(1-delta)gamma > 2m",
                 f"(1-{self.delta})*{self.gamma} = {(1 - self.delta) * self.gamma:g} vs 2m = {2 * self.m:g}")

    def check_part2(self) -> None:
        _require(self.m0 is not None and self.epsilon is not None, "m0 and epsilon given")
        _require(1 + self.k < self.m, "1+k < m", f"k={self.k}, m={self.m}")
        _require(self.m < self.m0 - self.k, "m < m0-k", f"m={self.m}, m0={self.m0}, k={self.k}")
        _require(0 < self.epsilon < self.margin, "0 < epsilon < (1-delta)gamma-2m",
                 f"epsilon={self.epsilon}, (1-delta)gamma-2m={self.margin:g}")


# ---------------------------------------------------------------- functions


def v(m: float, z: State) -> float:
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    return z.norm ** m


def v_tk(k: float, m: float, t: float, z: State) -> float:
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return (1.0 + t) ** k * v(m, z)


def generator_on_v(model: IntensityModel, m: float, z: State) -> float:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    lam, mu = model.rates(z)
    base = z.norm ** m
    return (lam * ((1.0 + z.y) ** m - base) + mu * ((1.0 + z.x) ** m - base)
            + 2.0 * m * z.norm ** (m - 1.0))


# ---------------------------------------------------------------- test functions


@runtime_checkable
class TestFunction(Protocol):
    """A function of the state with both partial derivatives in the elapsed times."""

    def value(self, z: State) -> float: ...

    def grad(self, z: State) -> tuple[float, float]: ...


class _BuiltIn:
    """Test functions the compiled kernels know how to integrate along paths."""

    def encoded(self) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantFunction(_BuiltIn):
    c: float = 1.0

    def value(self, z: State) -> float:
        return self.c

    def grad(self, z: State) -> tuple[float, float]:
        return 0.0, 0.0

    def encoded(self) -> np.ndarray:
        return np.array([K.H_CONSTANT, self.c, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class LyapunovFunction(_BuiltIn):
    """``V_m``, or ``V_{k,m}`` at time ``t`` when ``k > 0``."""

    m: float
    k: float = 0.0
    t: float = 0.0

    def value(self, z: State) -> float:
        return v_tk(self.k, self.m, self.t, z)

    def grad(self, z: State) -> tuple[float, float]:
        d = (1.0 + self.t) ** self.k * self.m * z.norm ** (self.m - 1.0)
        return d, d

    def encoded(self) -> np.ndarray:
        return np.array([K.H_LYAPUNOV, self.m, self.k, 0.0, 0.0])


@dataclass(frozen=True)
class CoordinateX(_BuiltIn):
    def value(self, z: State) -> float:
        return z.x

    def grad(self, z: State) -> tuple[float, float]:
        return 1.0, 0.0

    def encoded(self) -> np.ndarray:
        return np.array([K.H_COORD_X, 0.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class CoordinateY(_BuiltIn):
    def value(self, z: State) -> float:
        return z.y

    def grad(self, z: State) -> tuple[float, float]:
        return 0.0, 1.0

    def encoded(self) -> np.ndarray:
        return np.array([K.H_COORD_Y, 0.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class CallableFunction:
    """Wrap plain callables ``f(z)`` and ``grad(z) -> (df/dx, df/dy)``."""

    f: Callable[[State], float]
    df: Callable[[State], tuple[float, float]]

    def value(self, z: State) -> float:
        return float(self.f(z))

    def grad(self, z: State) -> tuple[float, float]:
        gx, gy = self.df(z)
        return float(gx), float(gy)


def transport_term(h: TestFunction, z: State) -> float:
    """Derivative of ``h`` along the flow: ``dh/dx + dh/dy``."""
    gx, gy = h.grad(z)
    return gx + gy


def generator_apply(model: IntensityModel, h: TestFunction, z: State) -> float:
    lam, mu = model.rates(z)
    hz = h.value(z)
    return lam * (h.value(jump_cn(z)) - hz) + mu * (h.value(jump_nc(z)) - hz) + transport_term(h, z)


# ---------------------------------------------------------------- drift certificate


def k_of_delta(delta: float, m: float) -> float:
    """Threshold outside of which ``x/(1+x) + y/(1+y) >= 1 - delta``.

    Outside ``KK(K, m)`` we have ``S = x+y > K^(1/m) - 1``; on ``{x+y = S}`` the
    sum above is smallest at a corner, where it equals ``S/(1+S)``. Requiring
    that to be at least ``1-delta`` gives ``K = delta^(-m)``.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return delta ** (-m)


def grid_outside(K_level: float, m: float, points: int = 10**4, upper: float = 1e4) -> list[State]:
    """Log-spaced states strictly outside ``KK(K_level, m)``.

    ``S = x+y`` runs over 100 log-spaced values from just above the threshold
    to ``upper``; the split ``w = x/S`` over 100 values in [0, 1] including
    both corners. The four flag pairs are cycled over the grid.
    """
    n_s = max(int(round(math.sqrt(points))), 2)
    n_w = max(points // n_s, 2)
    s_min = K_level ** (1.0 / m) - 1.0
    lo = max(s_min, 1e-12) * (1.0 + 1e-9) + 1e-12
    hi = max(upper, 10.0 * lo)
    S = np.geomspace(lo, hi, n_s)
    W = np.linspace(0.0, 1.0, n_w)
    out = []
    flags = ((0, 0), (0, 1), (1, 0), (1, 1))
    for a, s in enumerate(S):
        for b, w in enumerate(W):
            i, j = flags[(a + b) % 4]
            out.append(State(i, float(s * w), j, float(s * (1.0 - w))))
    return out


@dataclass(frozen=True)
class DriftRow:
    state: State
    LV: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.LV

    @property
    def passed(self) -> bool:
        return self.LV <= self.bound + DRIFT_RTOL * max(abs(self.LV), abs(self.bound), 1.0)


@dataclass
class DriftReport:
    params: DriftParams
    rows: list[DriftRow]

    @property
    def violations(self) -> list[DriftRow]:
        return [r for r in self.rows if not r.passed]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_csv(self, only_violations: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DRIFT_CSV_COLUMNS)
        for r in self.violations if only_violations else self.rows:
            z = r.state
            w.writerow([z.i, repr(z.x), z.j, repr(z.y), repr(r.LV), repr(r.bound), repr(r.margin), int(r.passed)])
        return buf.getvalue()


def drift_check(model: IntensityModel, params: DriftParams, grid: Sequence[State] | None = None) -> DriftReport:
    """Check ``L V_m <= -((1-delta)gamma - 2m) V_{m-1}`` at every grid state outside ``KK(delta^-m, m)``."""
    m = params.m
    level = k_of_delta(params.delta, m)
    grid = grid_outside(level, m) if grid is None else list(grid)
    inside = [z for z in grid if v(m, z) <= level]
    if inside:
        raise ValueError(
            f"{len(inside)} grid state(s) lie inside the sublevel set V_{m:g} <= {level:g}, "
            f"e.g. {inside[0]}; the drift inequality is only claimed outside it"
        )
    c = params.margin
    rows = [DriftRow(z, generator_on_v(model, m, z), -c * v(m - 1.0, z)) for z in grid]
    return DriftReport(params, rows)


# ---------------------------------------------------------------- constants


def check_part2_constraints(k: float, K_level: float, m: float, m0: float, gamma: float, delta: float,
                            epsilon: float, set_power: float | None = None, strict: bool = False) -> None:
    """Hypotheses under which the moment constant ``C(k, K)`` is valid.

    ``K_level`` is the threshold of the target set at power ``set_power``
    (default ``m``); ``K >= K(delta)`` is checked as ``K^(1/p) >= 1/delta``,
    which does not depend on the power ``p``. ``strict`` additionally
    requires ``(1-delta) gamma > 2 m0``.
    """
    p = m if set_power is None else set_power
    _require(k > 0, "k > 0", f"k={k}")
    _require(0 < delta < 1, "0 < delta < 1", f"delta={delta}")
    _require(K_level ** (1.0 / p) * delta >= 1.0 - 1e-12, "K >= K(delta)",
             f"K={K_level:g} at power {p:g}, K(delta)={delta ** (-p):g}")
    _require(gamma > 2 * m0, "γ > 2m0", f"gamma={gamma}, m0={m0}")
    _require(1 + k < m, "1+k < m", f"k={k}, m={m}")
    _require(m < m0 - k, "m < m0-k", f"m={m}, m0={m0}, k={k}")
    eps_max = (1 - delta) * gamma - 2 * m
    _require(0 < epsilon < eps_max, "0 < epsilon < (1-delta)gamma-2m", f"epsilon={epsilon}, bound={eps_max:g}")
    if strict:
        _require((1 - delta) * gamma > 2 * m0, "(1-delta)gamma > 2m0",
                 f"{(1 - delta) * gamma:g} vs {2 * m0:g}")


def constant_C(k: float, K_level: float, m: float, m0: float, gamma: float, delta: float, epsilon: float,
               set_power: float | None = None, strict: bool = False) -> float:
    """``(k+1)/((1-delta)gamma - 2m - eps) * (1 + eps^-(m0-m) k^(1+m0-m)/(m0-m-k))``."""
    check_part2_constraints(k, K_level, m, m0, gamma, delta, epsilon, set_power, strict)
    b = m0 - m
    lead = (k + 1.0) / ((1.0 - delta) * gamma - 2.0 * m - epsilon)
    return lead * (1.0 + epsilon ** (-b) * k ** (1.0 + b) / (b - k))


def _c_tilde_term(ell: int, c_val: float, k1: float, p1: float, log_rho: float) -> float:
    base = (ell + 1.0) ** k1 * (2.0 * c_val + ell ** (k1 + 1.0))
    return math.exp(math.log(base) / p1 + (ell - 1) * log_rho)


def c_tilde_series(c_val: float, k: float, k1: float, q: float, terms: int) -> float:
    """First ``terms`` terms of the series defining ``C~``; used to cross-check truncation."""
    p1 = (k1 + 1.0) / (k + 1.0)
    p2 = (k1 + 1.0) / (k1 - k)
    if q >= 1.0:
        return _c_tilde_term(1, c_val, k1, p1, 0.0)
    log_rho = math.log1p(-q) / p2
    return math.fsum(_c_tilde_term(ell, c_val, k1, p1, log_rho) for ell in range(1, terms + 1))


def c_tilde_from_C(c_val: float, k: float, k1: float, q: float, rel_tail: float = 1e-9,
                   max_terms: int = 10**7) -> float:
    """Sum the ``C~`` series given ``C(k1, K)``, stopping on a rigorous relative tail bound.

    With ``rho = (1-q)^(1/p2)`` the term ratio ``a(l+1)/a(l)`` is at most
    ``r(l) = rho ((l+2)/(l+1))^(k1/p1) ((l+1)/l)^((k1+1)/p1)``, which decreases
    in ``l``; once ``r(L) < 1`` the tail after ``L`` is below ``a(L) r(L)/(1-r(L))``.
    """
    if not 0 < k < k1:
        raise ValueError(f"require 0 < k < k1, got k={k}, k1={k1}")
    if not q > 0:
        raise ValueError(f"q must be > 0 for the series to converge, got {q}")
    if q > 1:
        raise ValueError(f"q is a probability, got {q}")
    if not c_val > 0:
        raise ValueError("C(k1, K) must be positive")
    p1 = (k1 + 1.0) / (k + 1.0)
    p2 = (k1 + 1.0) / (k1 - k)
    if q == 1.0:
        return _c_tilde_term(1, c_val, k1, p1, 0.0)
    log_rho = math.log1p(-q) / p2
    rho = math.exp(log_rho)
    terms = []
    running = 0.0
    for ell in range(1, max_terms + 1):
        a = _c_tilde_term(ell, c_val, k1, p1, log_rho)
        terms.append(a)
        running += a
        r = rho * ((ell + 2.0) / (ell + 1.0)) ** (k1 / p1) * ((ell + 1.0) / ell) ** ((k1 + 1.0) / p1)
        if r < 1.0 and a * r / (1.0 - r) <= rel_tail * running:
            return math.fsum(terms)
    raise RuntimeError(f"series did not reach relative tail {rel_tail:g} within {max_terms} terms (q={q})")


def constant_C_tilde(k: float, k1: float, K_level: float, q: float, m0: float, gamma: float, delta: float,
                     epsilon: float, m: float | None = None, set_power: float | None = None,
                     strict: bool = False, rel_tail: float = 1e-9) -> float:
    """``C~(k1, K)``: the series over return cycles built on ``C(k1, K)``.

    ``m`` defaults to the midpoint of the admissible interval ``(1+k1, m0-k1)``.
    """
    if not q > 0:
        raise ValueError(f"q must be > 0 for the series to converge, got {q}")
    if not 0 < k < k1:
        raise ValueError(f"require 0 < k < k1, got k={k}, k1={k1}")
    m = default_m(k1, m0) if m is None else m
    c_val = constant_C(k1, K_level, m, m0, gamma, delta, epsilon, set_power, strict)
    return c_tilde_from_C(c_val, k, k1, q, rel_tail)


def default_m(k: float, m0: float) -> float:
    """Midpoint of ``(1+k, m0-k)``."""
    return 0.5 * ((1.0 + k) + (m0 - k))
