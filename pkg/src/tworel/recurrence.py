"""Monte-Carlo recurrence diagnostics: hitting-time moments, Dynkin residuals,
long-run occupation and the return-cycle structure around a small set.

Sets are ``KK(K, p) = {(1+x+y)^p <= K}``; ``p`` is called ``set_power``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import _kernels as K
from .intensity import IntensityModel
from .lyapunov import (
    HypothesisError,
    LyapunovFunction,
    _BuiltIn,
    _require,
    c_tilde_from_C,
    check_part2_constraints,
    constant_C,
    default_m,
    k_of_delta,
    v,
)
from .sampler import DEFAULT_METHOD, MAX_EVENTS, RngStream, _check_seed, derive_seed, method_code, simulate_path
from .state import State, jump

Z99 = float(stats.norm.ppf(0.995))
TIME_CAP = 1e6
HEAVY_TAIL_RATIO = 50.0
EXCLUDED_TOLERANCE = 1e-4
VERDICTS = ("consistent", "violated", "inconclusive")
REPORT_FIELDS = ("quantity", "n", "point", "std_err", "ci_low", "ci_high", "bound", "verdict", "seed",
                 "excluded_count")


# ---------------------------------------------------------------- reports


@dataclass
class EstimateReport:
    quantity: str
    n: int
    point: float
    std_err: float
    ci_low: float
    ci_high: float
    bound: float | None
    verdict: str
    seed: int
    excluded_count: int = 0
    max_over_mean: float | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateReport":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> list:
        return [getattr(self, f) for f in REPORT_FIELDS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        w.writerow(["" if v is None else v for v in self.csv_row()])
        return buf.getvalue()


def summarize(quantity: str, samples: np.ndarray, seed: int, bound: float | None = None,
              excluded_count: int = 0, details: dict | None = None) -> EstimateReport:
    """Mean with a 99% normal interval and the one-sided verdict against ``bound``.

    Without a bound the verdict is ``consistent`` unless a diagnostic fails.
    The verdict drops to ``inconclusive`` when the largest sample exceeds 50
    times the mean or when at least a 1e-4 fraction of replications hit the
    time cap.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    point = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    lo, hi = point - Z99 * se, point + Z99 * se
    ratio = float(np.max(x) / point) if point > 0 else None
    if bound is None:
        verdict = "consistent"
    elif lo > bound:
        verdict = "violated"
    elif hi <= bound:
        verdict = "consistent"
    else:
        verdict = "inconclusive"
    total = n + excluded_count
    if excluded_count and excluded_count / total >= EXCLUDED_TOLERANCE:
        verdict = "inconclusive"
    if ratio is not None and ratio > HEAVY_TAIL_RATIO:
        verdict = "inconclusive"
    return EstimateReport(quantity, n, point, se, lo, hi, None if bound is None else float(bound), verdict,
                          int(seed), int(excluded_count), ratio, dict(details or {}))


# ---------------------------------------------------------------- hitting times


@dataclass(frozen=True)
class HitResult:
    tau: float
    capped: bool
    state_before: State | None
    state_after: State | None


def hitting_time(model: IntensityModel, z0: State, K_level: float, set_power: float, rng: RngStream,
                 time_cap: float = TIME_CAP, method: str = DEFAULT_METHOD) -> HitResult:
    """First time the path enters ``KK(K_level, set_power)``.

    The set can only be entered by a jump, so a positive ``tau`` is a jump
    time; ``state_before``/``state_after`` are the states around it (both
    ``None`` when ``tau == 0`` or the cap was reached).
    """
    if not K_level > 0 or not time_cap > 0:
        raise ValueError("K and time_cap must be > 0")
    tau, status, i, x, j, y, c = K.hit_one(model.arrays, model.bound, method_code(method), z0.i, z0.x, z0.j,
                                           z0.y, float(K_level), float(set_power), rng.state,
                                           float(time_cap), MAX_EVENTS)
    if status == K.STATUS_RUNAWAY:
        raise RuntimeError(f"more than {MAX_EVENTS} events before hitting the set")
    if status == K.STATUS_CAPPED:
        return HitResult(float(tau), True, None, None)
    if c < 0:
        return HitResult(0.0, False, None, None)
    before = State(int(i), float(x), int(j), float(y))
    return HitResult(float(tau), False, before, jump(before, int(c)))


def hitting_times(model: IntensityModel, z0: State, K_level: float, set_power: float, reps: int, seed: int,
                  time_cap: float = TIME_CAP, method: str = DEFAULT_METHOD) -> tuple[np.ndarray, np.ndarray]:
    """Hitting times of ``reps`` replications and a mask of those that reached the cap."""
    taus, status = K.batch_hitting(model.arrays, model.bound, method_code(method), z0.i, z0.x, z0.j, z0.y,
                                   float(K_level), float(set_power), int(reps), _check_seed(seed),
                                   float(time_cap), MAX_EVENTS)
    if np.any(status == K.STATUS_RUNAWAY):
        raise RuntimeError(f"more than {MAX_EVENTS} events before hitting the set")
    return taus, status == K.STATUS_CAPPED


def estimate_tau_moment(model: IntensityModel, z0: State, K_level: float, set_power: float, p: float,
                        reps: int, seed: int, bound: float | None = None, time_cap: float = TIME_CAP,
                        method: str = DEFAULT_METHOD, quantity: str | None = None) -> EstimateReport:
    if reps < 100:
        raise ValueError(f"reps must be >= 100, got {reps}")
    taus, capped = hitting_times(model, z0, K_level, set_power, reps, seed, time_cap, method)
    kept = taus[~capped] ** p
    label = quantity or f"E tau^{p:g} (K={K_level:g}, set_power={set_power:g})"
    details = {"time_cap": time_cap, "method": method, "mean_tau": float(np.mean(taus[~capped]))}
    return summarize(label, kept, seed, bound, int(capped.sum()), details)


# ---------------------------------------------------------------- theorem checks


@dataclass(frozen=True)
class TheoremParams:
    """Parameters of one moment bound. ``None`` fields take documented defaults.

    ``set_power`` is the power at which ``K`` and ``K1`` are read (default
    ``m0``); ``K`` defaults to ``K(delta)`` at that power; ``m`` defaults to
    the midpoint of its admissible interval; ``epsilon`` to half its range.
    """

    m0: float
    delta: float
    K: float | None = None
    set_power: float | None = None
    k: float | None = None
    m: float | None = None
    epsilon: float | None = None
    k1: float | None = None
    K1: float | None = None
    time_cap: float = TIME_CAP
    method: str = DEFAULT_METHOD
    q_reps: int = 10**4
    q_grid: int = 6
    strict: bool = False

    @property
    def power(self) -> float:
        return self.m0 if self.set_power is None else self.set_power

    @property
    def level(self) -> float:
        return k_of_delta(self.delta, self.power) if self.K is None else self.K


def _resolved_m_eps(part: int, gamma: float, p: TheoremParams) -> tuple[float, float]:
    kk = p.k if part == 2 else p.k1
    m = default_m(kk, p.m0) if p.m is None else p.m
    eps = 0.5 * ((1 - p.delta) * gamma - 2 * m) if p.epsilon is None else p.epsilon
    return m, eps


def validate_theorem_params(part: int, gamma: float, p: TheoremParams) -> None:
    """Raise :class:`HypothesisError` naming the first failed hypothesis of ``part``."""
    if part not in (1, 2, 3):
        raise ValueError(f"part must be 1, 2 or 3, got {part}")
    _require(gamma > 2 * p.m0, "γ > 2m0", f"gamma={gamma}, m0={p.m0}")
    _require(0 < p.delta < 1, "0 < delta < 1", f"delta={p.delta}")
    if part == 1:
        _require(2 * p.m0 >= 2, "2m0 >= 2", f"m0={p.m0}")
        _require((1 - p.delta) * gamma > 2 * p.m0, "(1-delta)gamma > 2m0",
                 f"{(1 - p.delta) * gamma:g} vs {2 * p.m0:g}")
        _require(p.level ** (1.0 / p.power) * p.delta >= 1.0 - 1e-12, "K >= K(delta)",
                 f"K={p.level:g}, K(delta)={p.delta ** -p.power:g}")
        return
    if part == 2:
        _require(p.k is not None and p.k > 0, "k > 0", f"k={p.k}")
        _require(2 * p.m0 > 2 * (1 + 2 * p.k), "2m0 > 2(1+2k)", f"m0={p.m0}, k={p.k}")
        m, eps = _resolved_m_eps(2, gamma, p)
        check_part2_constraints(p.k, p.level, m, p.m0, gamma, p.delta, eps, p.power, p.strict)
        return
    _require(p.k is not None and p.k1 is not None and 0 < p.k < p.k1, "0 < k < k1", f"k={p.k}, k1={p.k1}")
    _require(2 * p.m0 > 2 * (1 + p.k), "2m0 > 2(1+k)", f"m0={p.m0}, k={p.k}")
    _require(p.K1 is not None and 0 < p.K1 < p.level, "K1 < K", f"K1={p.K1}, K={p.level:g}")
    m, eps = _resolved_m_eps(3, gamma, p)
    check_part2_constraints(p.k1, p.level, m, p.m0, gamma, p.delta, eps, p.power, p.strict)


def check_theorem_bound(part: int, model: IntensityModel, params: TheoremParams, z0: State, reps: int,
                        seed: int) -> EstimateReport:
    """Estimate the left side of the chosen moment bound and compare it with the right side."""
    gamma = model.gamma
    validate_theorem_params(part, gamma, params)
    p = params
    vm0 = v(p.m0, z0)
    level, power = p.level, p.power
    if part == 1:
        c = (1 - p.delta) * gamma - 2 * p.m0
        bound = vm0 / min(1.0, c)
        details = {"C": c, "bound_safe": bound, "bound_literal": vm0 if c >= 1 else None}
        rep = estimate_tau_moment(model, z0, level, power, 1.0, reps, seed, bound, p.time_cap, p.method,
                                  quantity=f"E tau (K={level:g}, set_power={power:g})")
    elif part == 2:
        m, eps = _resolved_m_eps(2, gamma, p)
        c = constant_C(p.k, level, m, p.m0, gamma, p.delta, eps, power, p.strict)
        bound = c * vm0
        details = {"C": c, "m": m, "epsilon": eps}
        rep = estimate_tau_moment(model, z0, level, power, p.k + 1, reps, seed, bound, p.time_cap, p.method,
                                  quantity=f"E tau^{p.k + 1:g} (K={level:g}, set_power={power:g})")
    else:
        m, eps = _resolved_m_eps(3, gamma, p)
        c1 = constant_C(p.k1, level, m, p.m0, gamma, p.delta, eps, power, p.strict)
        qe = estimate_q(model, level, p.K1, p.q_reps, derive_seed(seed, 3), set_power=power,
                        grid_points=p.q_grid, method=p.method)
        if qe.q_low <= 0:
            raise HypothesisError("q > 0 fails (no return observed from some grid state)")
        ct = c_tilde_from_C(c1, p.k, p.k1, qe.q_low)
        bound = ct * max(vm0, level + 1.0)
        details = {"C_k1": c1, "C_tilde": ct, "q_low": qe.q_low, "q_hat_min": qe.q_hat_min, "m": m,
                   "epsilon": eps}
        rep = estimate_tau_moment(model, z0, p.K1, power, p.k + 1, reps, seed, bound, p.time_cap, p.method,
                                  quantity=f"E tau^{p.k + 1:g} (K1={p.K1:g}, set_power={power:g})")
    rep.details.update(details)
    rep.details["part"] = part
    return rep


# ---------------------------------------------------------------- Dynkin residuals


def dynkin_residuals(model: IntensityModel, h: _BuiltIn, z0: State, t: float, reps: int, seed: int,
                     method: str = DEFAULT_METHOD) -> tuple[np.ndarray, int]:
    """Per-path ``h(Z_t) - h(Z_0) - integral of L h`` and the count of paths with unconverged quadrature."""
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t}")
    if not isinstance(h, _BuiltIn):
        raise TypeError("Dynkin residuals need a built-in test function")
    return K.batch_dynkin(model.arrays, model.bound, method_code(method), z0.i, z0.x, z0.j, z0.y, float(t),
                          h.encoded(), int(reps), _check_seed(seed))


def dynkin_residual(model: IntensityModel, h: _BuiltIn, z0: State, t: float, reps: int, seed: int,
                    method: str = DEFAULT_METHOD) -> EstimateReport:
    """Mean Dynkin residual; ``consistent`` iff its absolute value is at most 4 standard errors."""
    res, bad = dynkin_residuals(model, h, z0, t, reps, seed, method)
    rep = summarize(f"dynkin residual of {h!r} at t={t:g}", res, seed,
                    details={"quadrature_failures": int(bad), "method": method})
    rep.max_over_mean = None
    ok = abs(rep.point) <= 4.0 * rep.std_err or (rep.std_err == 0.0 and rep.point == 0.0)
    rep.verdict = "consistent" if ok else "violated"
    if bad:
        rep.verdict = "inconclusive"
    return rep


# ---------------------------------------------------------------- stationary occupation


@dataclass
class OccupationReport:
    total_time: float
    regime_fractions: dict
    x_segments: tuple[np.ndarray, np.ndarray]
    y_segments: tuple[np.ndarray, np.ndarray]
    x_edges: np.ndarray
    y_edges: np.ndarray
    x_hist: np.ndarray
    y_hist: np.ndarray

    def fraction_i(self, value: int) -> float:
        return sum(f for key, f in self.regime_fractions.items() if int(key[0]) == value)

    def fraction_j(self, value: int) -> float:
        return sum(f for key, f in self.regime_fractions.items() if int(key[1]) == value)

    def ks_exponential(self, axis: str, rate: float) -> float:
        start, dur = self.x_segments if axis == "x" else self.y_segments
        return occupation_ks_exponential(start, dur, rate)

    def to_dict(self) -> dict:
        return {
            "total_time": self.total_time,
            "regime_fractions": self.regime_fractions,
            "x_edges": self.x_edges.tolist(),
            "x_hist": self.x_hist.tolist(),
            "y_edges": self.y_edges.tolist(),
            "y_hist": self.y_hist.tolist(),
        }

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("axis", "left", "right", "fraction"))
        for name, edges, hist in (("x", self.x_edges, self.x_hist), ("y", self.y_edges, self.y_hist)):
            for a, b, f in zip(edges[:-1], edges[1:], hist):
                w.writerow((name, repr(float(a)), repr(float(b)), repr(float(f))))
        return buf.getvalue()


def _occupation_cdf(start: np.ndarray, dur: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Time spent with the clock at or below ``u``: sum of clip(u - start, 0, dur)."""
    order = np.argsort(start)
    s, d = start[order], dur[order]
    e = s + d
    ends_sorted = np.sort(e)
    cs_s = np.concatenate([[0.0], np.cumsum(s)])
    cs_e = np.concatenate([[0.0], np.cumsum(ends_sorted)])
    ns = np.searchsorted(s, u, side="right")
    ne = np.searchsorted(ends_sorted, u, side="right")
    # segments started: contribute u - s; segments finished: subtract u - e
    return (ns * u - cs_s[ns]) - (ne * u - cs_e[ne])


def occupation_histogram(start: np.ndarray, dur: np.ndarray, edges: np.ndarray) -> np.ndarray:
    F = _occupation_cdf(start, dur, np.asarray(edges, dtype=float))
    return np.diff(F) / dur.sum()


def occupation_ks_exponential(start: np.ndarray, dur: np.ndarray, rate: float) -> float:
    """Exact sup distance between the time-weighted clock distribution and Exp(rate).

    The occupation CDF is piecewise linear with kinks at segment starts and
    ends; on each linear piece ``G - F`` has at most one interior extremum,
    where ``rate * exp(-rate u)`` equals the slope of ``F``.
    """
    total = dur.sum()
    knots = np.unique(np.concatenate([[0.0], start, start + dur]))
    F = _occupation_cdf(start, dur, knots) / total
    G = -np.expm1(-rate * knots)
    best = float(np.max(np.abs(G - F)))
    slope = np.diff(F) / np.diff(knots)
    with np.errstate(divide="ignore"):
        u = -np.log(slope / rate) / rate
    inside = (slope > 0) & (u > knots[:-1]) & (u < knots[1:])
    if np.any(inside):
        uu = u[inside]
        Fu = F[:-1][inside] + slope[inside] * (uu - knots[:-1][inside])
        best = max(best, float(np.max(np.abs(-np.expm1(-rate * uu) - Fu))))
    tail = 1.0 - F[-1]
    return max(best, abs(tail))


def total_variation(h1: np.ndarray, h2: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(h1) - np.asarray(h2))))


def stationary_occupation(model: IntensityModel, z0: State, horizon: float, burn_in: float, bins: int,
                          seed: int, method: str = DEFAULT_METHOD, x_edges: Sequence[float] | None = None,
                          y_edges: Sequence[float] | None = None) -> OccupationReport:
    """Time-weighted statistics of one long path on [burn_in, horizon]."""
    if not horizon > burn_in >= 0:
        raise ValueError(f"require horizon > burn_in >= 0, got horizon={horizon}, burn_in={burn_in}")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    path = simulate_path(model, z0, horizon, RngStream(seed, 0), method)
    t, c = path.times, path.components
    starts = np.concatenate([[0.0], t])
    ends = np.concatenate([t, [horizon]])
    # clocks at the start of each segment: time since the latest reset of that clock
    reset_x = np.maximum.accumulate(np.concatenate([[-z0.x], np.where(c == 0, t, -np.inf)]))
    reset_y = np.maximum.accumulate(np.concatenate([[-z0.y], np.where(c == 1, t, -np.inf)]))
    ii = (z0.i + np.concatenate([[0], np.cumsum(c == 0)])) % 2
    jj = (z0.j + np.concatenate([[0], np.cumsum(c == 1)])) % 2
    lo = np.maximum(starts, burn_in)
    dur = ends - lo
    keep = dur > 0
    lo, dur, ii, jj = lo[keep], dur[keep], ii[keep], jj[keep]
    xs = lo - reset_x[keep]
    ys = lo - reset_y[keep]
    total = float(dur.sum())
    fractions = {f"{a}{b}": float(dur[(ii == a) & (jj == b)].sum() / total) for a in (0, 1) for b in (0, 1)}
    xe = np.linspace(0.0, float((xs + dur).max()), bins + 1) if x_edges is None else np.asarray(x_edges, float)
    ye = np.linspace(0.0, float((ys + dur).max()), bins + 1) if y_edges is None else np.asarray(y_edges, float)
    return OccupationReport(total, fractions, (xs, dur), (ys, dur), xe, ye,
                            occupation_histogram(xs, dur, xe), occupation_histogram(ys, dur, ye))


# ---------------------------------------------------------------- return cycles


@dataclass
class RegenerationRecord:
    tau_n: list[float]
    T_n: list[float]
    delta_n: list[float]
    states_T: list[State]
    tau_K1: float


def _delta_from(taus: np.ndarray, Ts: np.ndarray) -> np.ndarray:
    prev = np.concatenate([np.zeros(taus.shape[:-1] + (1,)), Ts[..., :-1]], axis=-1)
    return taus - prev


def regeneration_sequence(model: IntensityModel, z0: State, K_level: float, K1: float, n_cycles: int,
                          rng: RngStream, set_power: float = 1.0, time_cap: float = TIME_CAP,
                          method: str = DEFAULT_METHOD) -> RegenerationRecord:
    """Alternate entrances to ``KK(K)`` and exits from ``KK(K+1)`` capped one time unit after entrance."""
    if not K1 < K_level:
        raise ValueError(f"require K1 < K, got K1={K1}, K={K_level}")
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    taus = np.full(n_cycles, np.nan)
    Ts = np.full(n_cycles, np.nan)
    Zs = np.full((n_cycles, 4), np.nan)
    tau1, status = K.regeneration_one(model.arrays, model.bound, method_code(method), z0.i, z0.x, z0.j, z0.y,
                                      float(K_level), float(K1), float(set_power), int(n_cycles), rng.state,
                                      float(time_cap), taus, Ts, Zs)
    if status != K.STATUS_OK:
        raise RuntimeError(f"time cap {time_cap} reached before {n_cycles} cycles completed")
    states = [State(int(z[0]), float(z[1]), int(z[2]), float(z[3])) for z in Zs]
    return RegenerationRecord(taus.tolist(), Ts.tolist(), _delta_from(taus, Ts).tolist(), states, float(tau1))


@dataclass
class RegenerationBatch:
    taus: np.ndarray
    Ts: np.ndarray
    states_T: np.ndarray
    tau_K1: np.ndarray
    capped: np.ndarray
    K: float
    K1: float
    set_power: float

    @property
    def deltas(self) -> np.ndarray:
        return _delta_from(self.taus, self.Ts)

    def structure_violations(self) -> dict:
        ok = ~self.capped
        taus, Ts, Zs = self.taus[ok], self.Ts[ok], self.states_T[ok]
        level = (self.K + 1.0) ** (1.0 / self.set_power)
        norm = 1.0 + Zs[..., 1] + Zs[..., 3]
        return {
            "T_minus_tau_gt_1": int(np.sum(Ts - taus > 1.0 + 1e-12)),
            "T_before_tau": int(np.sum(Ts < taus)),
            "state_T_outside": int(np.sum(norm > level * (1.0 + 1e-12))),
            "non_monotone": int(np.sum(np.diff(taus, axis=1) < 0) + np.sum(np.diff(Ts, axis=1) < 0)),
        }


def regeneration_batch(model: IntensityModel, z0: State, K_level: float, K1: float, n_cycles: int, reps: int,
                       seed: int, set_power: float = 1.0, time_cap: float = TIME_CAP,
                       method: str = DEFAULT_METHOD) -> RegenerationBatch:
    if not K1 < K_level:
        raise ValueError(f"require K1 < K, got K1={K1}, K={K_level}")
    taus, Ts, Zs, tau1, status = K.batch_regeneration(
        model.arrays, model.bound, method_code(method), z0.i, z0.x, z0.j, z0.y, float(K_level), float(K1),
        float(set_power), int(n_cycles), int(reps), _check_seed(seed), float(time_cap),
    )
    return RegenerationBatch(taus, Ts, Zs, tau1, status != K.STATUS_OK, float(K_level), float(K1),
                             float(set_power))


@dataclass(frozen=True)
class QEstimate:
    q_low: float
    q_hat_min: float
    starts: np.ndarray
    hits: np.ndarray
    reps: int
    confidence: float = 0.99

    @property
    def argmin(self) -> State:
        z = self.starts[int(np.argmin(self.hits))]
        return State(int(z[0]), float(z[1]), int(z[2]), float(z[3]))


def covering_grid(level: float, set_power: float, points: int) -> np.ndarray:
    """States of ``KK(level, set_power)`` on a triangular (x, y) grid, for all four flag pairs."""
    s_max = level ** (1.0 / set_power) - 1.0
    axis = np.linspace(0.0, s_max, points)
    rows = []
    for i in (0, 1):
        for j in (0, 1):
            for a in range(points):
                for b in range(points - a):
                    rows.append((i, axis[a], j, axis[b]))
    return np.array(rows, dtype=float)


def clopper_pearson_lower(k: int, n: int, confidence: float = 0.99) -> float:
    if k == 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - confidence, k, n - k + 1))


def estimate_q(model: IntensityModel, K_level: float, K1: float, reps: int, seed: int, set_power: float = 1.0,
               grid_points: int = 6, window: float = 1.0, method: str = DEFAULT_METHOD) -> QEstimate:
    """Smallest one-sided 99% lower bound, over a grid of ``KK(K+1)``, of the
    probability of entering ``KK(K1)`` within ``window`` time units."""
    if not K1 <= K_level:
        raise ValueError(f"require K1 <= K, got K1={K1}, K={K_level}")
    if reps < 10**3:
        raise ValueError(f"reps must be >= 10^3, got {reps}")
    starts = covering_grid(K_level + 1.0, set_power, grid_points)
    hits = K.batch_window_hits(model.arrays, model.bound, method_code(method), starts, int(reps),
                               _check_seed(seed), float(K1), float(set_power), float(window))
    lows = [clopper_pearson_lower(int(h), reps) for h in hits]
    return QEstimate(min(lows), float(hits.min()) / reps, starts, hits, reps)


@dataclass(frozen=True)
class ExcursionRow:
    ell: int
    frequency: float
    bound: float
    sigma: float
    passed: bool


def excursion_check(batch: RegenerationBatch, q_low: float, ells: Sequence[int] = (1, 2, 3, 4, 5)) -> list[ExcursionRow]:
    """Frequency of not entering ``KK(K1)`` before the ``(l+1)``-th entrance to ``KK(K)``.

    Compared with ``(1-q_low)^l`` plus four binomial standard deviations.
    """
    ok = ~batch.capped
    n = int(ok.sum())
    if max(ells) >= batch.taus.shape[1]:
        raise ValueError(f"need at least {max(ells) + 1} cycles")
    rows = []
    for ell in ells:
        nxt = batch.taus[ok, ell]
        freq = float(np.mean(batch.tau_K1[ok] > nxt))
        b = (1.0 - q_low) ** ell
        sigma = math.sqrt(max(b * (1 - b), freq * (1 - freq)) / n)
        rows.append(ExcursionRow(ell, freq, b, sigma, freq <= b + 4.0 * sigma))
    return rows


def eta_indicator_correlation(batch: RegenerationBatch, ells: Sequence[int] = (2, 3, 4, 5)) -> dict:
    """Empirical correlation of the cumulative gaps ``eta_l`` with ``1(tau^(l-1) < tau_K1)``.

    Diagnostic only; nothing is asserted about it.
    """
    ok = ~batch.capped
    eta = np.cumsum(batch.deltas[ok], axis=1)
    out = {}
    for ell in ells:
        ind = (batch.taus[ok, ell - 2] < batch.tau_K1[ok]).astype(float) if ell >= 2 else np.ones(int(ok.sum()))
        a = eta[:, ell - 1]
        if np.std(a) == 0 or np.std(ind) == 0:
            out[ell] = None
        else:
            out[ell] = float(np.corrcoef(a, ind)[0, 1])
    return out


def delta_moment_check(batch: RegenerationBatch, k: float, m0: float, gamma: float, delta: float,
                       epsilon: float | None = None, m: float | None = None, seed: int = 0,
                       cycle: int = 1) -> EstimateReport:
    """Mean of ``(Delta^(cycle+1))^(k+1)``, a gap started from a state of ``KK(K+1)``, against
    ``sup_{KK(K+1)} V_m0 * C(k, K+1)``."""
    ok = ~batch.capped
    gaps = batch.deltas[ok, cycle]
    m = default_m(k, m0) if m is None else m
    eps = 0.5 * ((1 - delta) * gamma - 2 * m) if epsilon is None else epsilon
    level = batch.K + 1.0
    c = constant_C(k, level, m, m0, gamma, delta, eps, set_power=batch.set_power)
    sup_v = level ** (m0 / batch.set_power)
    return summarize(f"E Delta^{k + 1:g}", gaps ** (k + 1.0), seed, sup_v * c, int(batch.capped.sum()),
                     {"C": c, "sup_V_m0": sup_v, "cycle": cycle + 1})
