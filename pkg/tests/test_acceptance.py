"""Acceptance suite: the ten primary criteria at their stated sizes and tolerances.

Each test prints one ``PASS``/``FAIL`` line. Wall-clock limits are measured
after the ``warm_kernels`` fixture has compiled every kernel.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy import stats

from tworel.intensity import constant_model, equality_model
from tworel.lyapunov import DriftParams, LyapunovFunction, constant_C, drift_check, v
from tworel.recurrence import (
    TheoremParams,
    check_theorem_bound,
    dynkin_residual,
    estimate_q,
    excursion_check,
    regeneration_batch,
    stationary_occupation,
)
from tworel.sampler import derive_seed, first_events
from tworel.state import ORIGIN, State
from tworel.transition import WindowSpec, prob_no_jump, prob_single_jump_window, single_jump_window_frequency

pytestmark = pytest.mark.usefixtures("warm_kernels")

FAR = State(0, 20.0, 0, 20.0)
SEED = 20240601


@pytest.fixture
def report(capsys):
    """Print one verdict line per criterion, bypassing output capture."""

    def _report(number: int, title: str, ok: bool, elapsed: float, limit: float, detail: str) -> None:
        timely = elapsed < limit
        status = "PASS" if ok and timely else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {status} {title}: {detail}; {elapsed:.1f} s (limit {limit:g} s)")
        assert ok, detail
        assert timely, f"took {elapsed:.1f} s, limit {limit:g} s"

    return _report


def test_01_no_jump_identity(report):
    t0 = time.perf_counter()
    eq3 = equality_model(3.0)
    n = 10**6
    analytic = prob_no_jump(eq3, ORIGIN, 1.0)
    T, _ = first_events(eq3, ORIGIN, n, SEED + 1, horizon=1.0)
    freq = float(np.mean(T > 1.0))
    sigma = math.sqrt(analytic * (1 - analytic) / n)
    elapsed = time.perf_counter() - t0
    ok = abs(analytic - 2.0**-6) <= 1e-9 and abs(freq - analytic) <= 4 * sigma
    report(1, "P(no jump on [0,1]) = 2^-6", ok, elapsed, 30,
           f"analytic={analytic:.9f} empirical={freq:.6f} z={(freq - analytic) / sigma:+.2f}")


def test_02_sampler_equivalence(report):
    t0 = time.perf_counter()
    eq3 = equality_model(3.0)
    n = 10**5
    Ti, ci = first_events(eq3, ORIGIN, n, SEED + 2, method="inversion")
    Tt, ct = first_events(eq3, ORIGIN, n, SEED + 3, method="thinning")
    ks = stats.ks_2samp(Ti, Tt)
    fi, ft = float(np.mean(ci == 0)), float(np.mean(ct == 0))
    pooled = 0.5 * (fi + ft)
    sigma = math.sqrt(2 * pooled * (1 - pooled) / n)
    elapsed = time.perf_counter() - t0
    ok = ks.pvalue >= 0.001 and abs(fi - ft) <= 3 * sigma
    report(2, "inversion vs thinning", ok, elapsed, 30,
           f"KS D={ks.statistic:.5f} p={ks.pvalue:.3f}; first-share {fi:.4f} vs {ft:.4f} "
           f"(z={(fi - ft) / sigma:+.2f})")


def test_03_drift_certificate(report):
    t0 = time.perf_counter()
    eq6 = equality_model(6.0)
    reps = {m: drift_check(eq6, DriftParams(6.0, 0.2, m)) for m in (1.0, 2.0)}
    elapsed = time.perf_counter() - t0
    sizes = {m: len(r.rows) for m, r in reps.items()}
    bad = {m: len(r.violations) for m, r in reps.items()}
    ok = all(s == 10**4 for s in sizes.values()) and not any(bad.values())
    report(3, "drift inequality outside K(delta)", ok, elapsed, 5, f"grid sizes {sizes}, violations {bad}")


def test_04_theorem_part1(report):
    t0 = time.perf_counter()
    params = TheoremParams(m0=1.0, delta=0.2, K=5.0, set_power=1.0)
    rep = check_theorem_bound(1, equality_model(6.0), params, FAR, 10**4, SEED + 4)
    elapsed = time.perf_counter() - t0
    ok = rep.bound == v(1, FAR) == 41.0 and rep.ci_high <= rep.bound
    report(4, "E tau <= V_1(Z0)", ok, elapsed, 60,
           f"point={rep.point:.3f} ci_high={rep.ci_high:.3f} bound={rep.bound:g} verdict={rep.verdict}")


def test_05_theorem_part2(report):
    t0 = time.perf_counter()
    params = TheoremParams(m0=2.5, delta=0.2, k=0.5, m=1.75, epsilon=1.0)
    rep = check_theorem_bound(2, equality_model(6.0), params, FAR, 10**4, SEED + 5)
    elapsed = time.perf_counter() - t0
    c = constant_C(0.5, params.level, 1.75, 2.5, 6.0, 0.2, 1.0)
    ok = (abs(c - 10.946) < 5e-4 and rep.bound == pytest.approx(c * v(2.5, FAR), rel=1e-12)
          and rep.ci_high <= rep.bound)
    report(5, "E tau^1.5 <= C(k,K) V_2.5(Z0)", ok, elapsed, 120,
           f"C={c:.4f} point={rep.point:.3f} ci_high={rep.ci_high:.3f} bound={rep.bound:.4g} "
           f"verdict={rep.verdict} max/mean={rep.max_over_mean:.1f}")


def test_06_theorem_part3(report):
    t0 = time.perf_counter()
    params = TheoremParams(m0=2.5, delta=0.2, K=5.0, set_power=1.0, k=0.2, k1=0.5, K1=2.0, epsilon=1.0)
    rep = check_theorem_bound(3, equality_model(6.0), params, FAR, 10**4, SEED + 6)
    elapsed = time.perf_counter() - t0
    d = rep.details
    expected = d["C_tilde"] * max(v(2.5, FAR), params.level + 1.0)
    ok = d["q_low"] > 0 and rep.bound == pytest.approx(expected) and rep.ci_high <= rep.bound
    report(6, "E tau(K1)^1.2 <= C~ (V_m0(Z0) v (K+1))", ok, elapsed, 180,
           f"q_low={d['q_low']:.4f} C~={d['C_tilde']:.4g} point={rep.point:.3f} ci_high={rep.ci_high:.3f} "
           f"bound={rep.bound:.4g} verdict={rep.verdict}")


def test_07_dynkin(report):
    t0 = time.perf_counter()
    eq3 = equality_model(3.0)
    reps = {m: dynkin_residual(eq3, LyapunovFunction(m), ORIGIN, 2.0, 10**5, SEED + 7 + int(m)) for m in (1.0, 2.0)}
    elapsed = time.perf_counter() - t0
    ok = all(abs(r.point) <= 4 * r.std_err and r.details["quadrature_failures"] == 0 for r in reps.values())
    detail = ", ".join(f"V_{m:g}: mean={r.point:+.4g} se={r.std_err:.3g} z={r.point / r.std_err:+.2f}"
                       for m, r in reps.items())
    report(7, "Dynkin residual mean zero", ok, elapsed, 60, detail)


def test_08_stationary(report):
    t0 = time.perf_counter()
    occ = stationary_occupation(constant_model(1.0, 1.0), ORIGIN, 1e5 + 1e2, 1e2, 50, SEED + 8)
    ks_x = occ.ks_exponential("x", 1.0)
    frac = occ.fraction_i(0)
    elapsed = time.perf_counter() - t0
    ok = ks_x < 0.01 and abs(frac - 0.5) <= 0.005
    report(8, "stationary clocks vs Exp(1)", ok, elapsed, 30, f"KS_x={ks_x:.5f} fraction(i=0)={frac:.4f}")


def test_09_single_jump_window(report):
    t0 = time.perf_counter()
    n = 10**6
    w = WindowSpec(0.0, 1.0, 1.0, 0)
    lines, ok = [], True
    for name, model, exact in (("unit", constant_model(1.0, 1.0), math.exp(-2)), ("gamma=3", equality_model(3.0), None)):
        quad = prob_single_jump_window(model, ORIGIN, w)
        freq, _ = single_jump_window_frequency(model, ORIGIN, w, n, derive_seed(SEED, 9 + len(lines)))
        sigma = math.sqrt(quad * (1 - quad) / n)
        ok = ok and abs(freq - quad) <= 4 * sigma
        if exact is not None:
            ok = ok and abs(quad - exact) <= 1e-8
        lines.append(f"{name}: quad={quad:.7f} mc={freq:.6f} z={(freq - quad) / sigma:+.2f}")
    elapsed = time.perf_counter() - t0
    report(9, "single-jump window quadrature vs simulation", ok, elapsed, 60, "; ".join(lines))


def test_10_regeneration(report):
    t0 = time.perf_counter()
    eq6 = equality_model(6.0)
    qe = estimate_q(eq6, 5.0, 2.0, 10**4, derive_seed(SEED, 10), set_power=1.0)
    batch = regeneration_batch(eq6, FAR, 5.0, 2.0, 6, 10**4, SEED + 10, set_power=1.0)
    rows = excursion_check(batch, qe.q_low)
    structure = batch.structure_violations()
    elapsed = time.perf_counter() - t0
    ok = not batch.capped.any() and all(r.passed for r in rows) and not any(structure.values())
    freqs = " ".join(f"l={r.ell}:{r.frequency:.4f}<={r.bound:.4f}+4s" for r in rows)
    report(10, "regeneration structure and excursion bound", ok, elapsed, 120,
           f"q_low={qe.q_low:.4f} {freqs}; structure violations {sum(structure.values())}")
