from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from tworel.intensity import constant_model, equality_model
from tworel.lyapunov import ConstantFunction, HypothesisError, LyapunovFunction, constant_C, v
from tworel.recurrence import (
    REPORT_FIELDS,
    Z99,
    EstimateReport,
    TheoremParams,
    check_theorem_bound,
    clopper_pearson_lower,
    covering_grid,
    delta_moment_check,
    dynkin_residual,
    dynkin_residuals,
    estimate_q,
    estimate_tau_moment,
    eta_indicator_correlation,
    excursion_check,
    hitting_time,
    hitting_times,
    occupation_histogram,
    occupation_ks_exponential,
    regeneration_batch,
    regeneration_sequence,
    stationary_occupation,
    summarize,
    total_variation,
    validate_theorem_params,
)
from tworel.sampler import RngStream
from tworel.state import ORIGIN, State

FAR = State(0, 20.0, 0, 20.0)

pytestmark = pytest.mark.usefixtures("warm_kernels")


class TestSummarize:
    def test_z99(self):
        assert Z99 == pytest.approx(2.5758293035489, abs=1e-12)

    def test_interval(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        rep = summarize("q", x, seed=1)
        se = np.std(x, ddof=1) / 2
        assert rep.point == 2.5 and rep.std_err == pytest.approx(se)
        assert rep.ci_low == pytest.approx(2.5 - Z99 * se) and rep.ci_high == pytest.approx(2.5 + Z99 * se)
        assert rep.ci_low <= rep.point <= rep.ci_high
        assert rep.verdict == "consistent" and rep.bound is None

    @pytest.mark.parametrize(
        "bound, verdict",
        [(100.0, "consistent"), (10.01, "inconclusive"), (9.0, "violated")],
    )
    def test_verdicts(self, bound, verdict):
        x = np.linspace(9.5, 10.5, 1001)
        assert summarize("q", x, 0, bound).verdict == verdict

    def test_heavy_tail_downgrade(self):
        x = np.concatenate([np.full(999, 1.0), [200.0]])
        rep = summarize("q", x, 0, bound=1e6)
        assert rep.max_over_mean > 50 and rep.verdict == "inconclusive"

    def test_excluded_downgrade(self):
        x = np.ones(9_999)
        assert summarize("q", x, 0, 2.0, excluded_count=0).verdict == "consistent"
        assert summarize("q", x, 0, 2.0, excluded_count=1).verdict == "inconclusive"  # 1/10000 reaches 1e-4
        assert summarize("q", np.ones(10_000), 0, 2.0, excluded_count=1).verdict == "consistent"

    def test_zero_samples(self):
        rep = summarize("q", np.zeros(500), 0, bound=1.0)
        assert rep.point == rep.std_err == 0.0 and rep.verdict == "consistent"

    def test_round_trip(self):
        rep = summarize("E tau", np.arange(1.0, 200.0), 7, 300.0, 2, {"C": 2.8})
        again = EstimateReport.from_dict(json.loads(rep.to_json()))
        assert again == rep
        rows = list(csv.reader(io.StringIO(rep.to_csv())))
        assert tuple(rows[0]) == REPORT_FIELDS
        assert rows[1][REPORT_FIELDS.index("verdict")] == rep.verdict


class TestHitting:
    def test_inside_is_zero(self, unit_model):
        hit = hitting_time(unit_model, State(0, 1, 0, 1), 5.0, 1.0, RngStream(0))
        assert hit.tau == 0.0 and not hit.capped and hit.state_after is None

    def test_enters_by_jump(self, unit_model):
        for r in range(200):
            hit = hitting_time(unit_model, FAR, 5.0, 1.0, RngStream(3, r))
            assert hit.tau > 0
            assert v(1, hit.state_before) > 5.0 >= v(1, hit.state_after)

    def test_batch_matches_single(self, eq6):
        taus, capped = hitting_times(eq6, FAR, 5.0, 1.0, 50, 9)
        singles = [hitting_time(eq6, FAR, 5.0, 1.0, RngStream(9, r)).tau for r in range(50)]
        assert not capped.any()
        assert np.array_equal(taus, singles)

    def test_power_reads_level(self, eq6):
        # KK(25, 2) and KK(5, 1) are the same set
        a, _ = hitting_times(eq6, FAR, 25.0, 2.0, 100, 4)
        b, _ = hitting_times(eq6, FAR, 5.0, 1.0, 100, 4)
        assert np.array_equal(a, b)

    def test_time_cap_counts_exclusions(self, eq6):
        rep = estimate_tau_moment(eq6, FAR, 5.0, 1.0, 1.0, 1000, 2, time_cap=0.5)
        assert rep.excluded_count > 0 and rep.n + rep.excluded_count == 1000
        assert rep.verdict == "inconclusive"

    def test_zero_start(self, eq6):
        rep = estimate_tau_moment(eq6, ORIGIN, 5.0, 1.0, 1.0, 100, 0, bound=1.0)
        assert rep.point == 0.0 and rep.std_err == 0.0

    def test_reps_floor(self, eq6):
        with pytest.raises(ValueError, match="100"):
            estimate_tau_moment(eq6, FAR, 5.0, 1.0, 1.0, 99, 0)

    def test_split_sample(self, eq6):
        a = estimate_tau_moment(eq6, FAR, 5.0, 1.0, 1.0, 10_000, 101)
        b = estimate_tau_moment(eq6, FAR, 5.0, 1.0, 1.0, 10_000, 202)
        assert b.ci_low <= a.point <= b.ci_high

    def test_deterministic(self, eq6):
        a = estimate_tau_moment(eq6, FAR, 5.0, 1.0, 1.5, 500, 5)
        b = estimate_tau_moment(eq6, FAR, 5.0, 1.0, 1.5, 500, 5)
        assert a.to_json() == b.to_json()

    @pytest.mark.parametrize("method", ["inversion", "thinning"])
    def test_methods_agree(self, eq6, method):
        ref = estimate_tau_moment(eq6, FAR, 5.0, 1.0, 1.0, 5000, 31, method="thinning")
        other = estimate_tau_moment(eq6, FAR, 5.0, 1.0, 1.0, 5000, 32, method=method)
        assert abs(ref.point - other.point) <= 4 * math.hypot(ref.std_err, other.std_err)


class TestTheoremGates:
    def test_gamma_gate(self):
        with pytest.raises(HypothesisError, match="γ > 2m0 fails"):
            validate_theorem_params(1, 1.0, TheoremParams(m0=1.0, delta=0.2))

    def test_part1_margin_gate(self):
        with pytest.raises(HypothesisError, match=r"\(1-delta\)gamma > 2m0"):
            validate_theorem_params(1, 2.2, TheoremParams(m0=1.0, delta=0.2))

    def test_part1_level_gate(self):
        with pytest.raises(HypothesisError, match="K >= K"):
            validate_theorem_params(1, 6.0, TheoremParams(m0=1.0, delta=0.2, K=4.0))

    def test_part2_needs_k(self):
        with pytest.raises(HypothesisError, match="k > 0"):
            validate_theorem_params(2, 6.0, TheoremParams(m0=2.5, delta=0.2))

    def test_part2_interval(self):
        with pytest.raises(HypothesisError, match=r"2m0 > 2\(1\+2k\)"):
            validate_theorem_params(2, 6.0, TheoremParams(m0=2.5, delta=0.2, k=0.8))

    def test_part3_gates(self):
        base = dict(m0=2.5, delta=0.2, K=5.0, set_power=1.0, k=0.2, k1=0.5)
        with pytest.raises(HypothesisError, match="K1 < K"):
            validate_theorem_params(3, 6.0, TheoremParams(**base, K1=5.0))
        with pytest.raises(HypothesisError, match="0 < k < k1"):
            validate_theorem_params(3, 6.0, TheoremParams(**{**base, "k": 0.6}, K1=2.0))
        validate_theorem_params(3, 6.0, TheoremParams(**base, K1=2.0))

    def test_default_level(self):
        p = TheoremParams(m0=2.5, delta=0.2)
        assert p.level == pytest.approx(0.2**-2.5)
        assert TheoremParams(m0=2.5, delta=0.2, set_power=1.0).level == pytest.approx(5.0)

    def test_part1_small_run(self, eq6):
        p = TheoremParams(m0=1.0, delta=0.2, K=5.0, set_power=1.0)
        rep = check_theorem_bound(1, eq6, p, FAR, 1000, 1)
        assert rep.bound == 41.0 and rep.details["C"] == pytest.approx(2.8)
        assert rep.details["bound_literal"] == 41.0
        assert rep.verdict == "consistent"

    def test_part1_safe_form_below_one(self):
        model = equality_model(3.0)
        p = TheoremParams(m0=1.0, delta=0.2, K=5.0, set_power=1.0)
        rep = check_theorem_bound(1, model, p, FAR, 200, 1)
        c = 0.8 * 3 - 2
        assert rep.bound == pytest.approx(41.0 / c) and rep.details["bound_literal"] is None

    def test_part2_bound_uses_C(self, eq6):
        p = TheoremParams(m0=2.5, delta=0.2, k=0.5, m=1.75, epsilon=1.0)
        rep = check_theorem_bound(2, eq6, p, FAR, 500, 1)
        c = constant_C(0.5, 0.2**-2.5, 1.75, 2.5, 6.0, 0.2, 1.0)
        assert rep.bound == pytest.approx(c * 41.0**2.5)


class TestDynkin:
    def test_constant_exactly_zero(self, eq3):
        res, bad = dynkin_residuals(eq3, ConstantFunction(3.0), FAR, 2.0, 1000, 1)
        assert bad == 0 and np.all(res == 0.0)
        assert dynkin_residual(eq3, ConstantFunction(3.0), FAR, 2.0, 1000, 1).verdict == "consistent"

    def test_unit_model_v1(self, unit_model):
        rep = dynkin_residual(unit_model, LyapunovFunction(1.0), ORIGIN, 1.0, 100_000, 2)
        assert abs(rep.point) <= 4 * rep.std_err and rep.verdict == "consistent"

    def test_no_jumps_means_pure_transport(self):
        # with no jump the residual is minus the jump compensator, integrated in closed form here
        eps = 1e-9
        model = constant_model(eps, eps)
        z = State(0, 1.0, 1, 2.0)
        res, _ = dynkin_residuals(model, LyapunovFunction(2.0), z, 1.5, 100, 3)
        s = np.linspace(0.0, 1.5, 100_001)
        x, y = z.x + s, z.y + s
        comp = eps * (((1 + y) ** 2 - (1 + x + y) ** 2) + ((1 + x) ** 2 - (1 + x + y) ** 2))
        expected = -integrate.trapezoid(comp, s)
        assert np.allclose(res, expected, rtol=1e-6)

    def test_mean_zero_with_fault_injection(self, eq3):
        # the residual is a martingale for any bounded model, certified or not
        res_ok, _ = dynkin_residuals(eq3, LyapunovFunction(1.0), FAR, 2.0, 20_000, 4)
        res_bad, _ = dynkin_residuals(eq3.with_fault(lambda_scale=2.0), LyapunovFunction(1.0), FAR, 2.0, 20_000, 4)
        assert abs(res_ok.mean()) <= 4 * res_ok.std() / math.sqrt(res_ok.size)
        assert abs(res_bad.mean()) <= 4 * res_bad.std() / math.sqrt(res_bad.size)

    def test_rejects_bad_horizon(self, eq3):
        with pytest.raises(ValueError):
            dynkin_residuals(eq3, LyapunovFunction(1.0), FAR, 0.0, 10, 0)


def brute_occupation_cdf(start, dur, u):
    return np.array([np.sum(np.clip(uu - start, 0.0, dur)) for uu in u])


class TestOccupation:
    def test_cdf_and_histogram_against_brute_force(self):
        rng = np.random.default_rng(0)
        start = rng.exponential(1.0, 300)
        dur = rng.exponential(0.5, 300)
        edges = np.linspace(0, 6, 25)
        expected = np.diff(brute_occupation_cdf(start, dur, edges)) / dur.sum()
        assert np.allclose(occupation_histogram(start, dur, edges), expected, atol=1e-12)

    def test_ks_against_dense_grid(self):
        rng = np.random.default_rng(1)
        start = rng.exponential(1.0, 200)
        dur = rng.exponential(0.7, 200)
        u = np.linspace(0, 15, 200_001)
        F = brute_occupation_cdf(start, dur, u) / dur.sum()
        dense = np.max(np.abs(F - stats.expon.cdf(u)))
        exact = occupation_ks_exponential(start, dur, 1.0)
        assert exact >= dense - 1e-12
        assert exact == pytest.approx(dense, abs=1e-4)

    def test_single_segment_from_zero(self):
        # uniform on [0, 1] vs Exp(1): the sup sits at an interior point where exp(-u) = 1
        d = occupation_ks_exponential(np.array([0.0]), np.array([1.0]), 1.0)
        u = np.linspace(0, 1, 100_001)
        assert d == pytest.approx(np.max(np.abs(u - (1 - np.exp(-u)))), abs=1e-9)

    def test_stationary_unit_model(self, unit_model):
        rep = stationary_occupation(unit_model, ORIGIN, 2e4, 100.0, 40, 1)
        assert sum(rep.regime_fractions.values()) == pytest.approx(1.0)
        assert rep.total_time == pytest.approx(2e4 - 100.0)
        assert rep.ks_exponential("x", 1.0) < 0.02
        assert abs(rep.fraction_i(0) - 0.5) < 0.02

    def test_y_marginal_rate_two(self):
        rep = stationary_occupation(constant_model(1.0, 2.0), ORIGIN, 1e5, 100.0, 50, 2)
        assert rep.ks_exponential("y", 2.0) < 0.01
        assert rep.ks_exponential("y", 1.0) > 0.1  # wrong reference is clearly rejected

    def test_disjoint_seeds_tv(self, unit_model):
        edges = np.linspace(0, 10, 51)
        a = stationary_occupation(unit_model, ORIGIN, 1e5, 100.0, 50, 11, x_edges=edges)
        b = stationary_occupation(unit_model, ORIGIN, 1e5, 100.0, 50, 12, x_edges=edges)
        assert total_variation(a.x_hist, b.x_hist) < 0.02

    def test_clock_reconstruction(self, eq3):
        rep = stationary_occupation(eq3, FAR, 50.0, 0.0, 10, 5)
        xs, dur = rep.x_segments
        assert xs[0] == 20.0 and np.all(xs >= 0)
        assert rep.histogram_csv().splitlines()[0] == "axis,left,right,fraction"

    def test_rejects_bad_window(self, unit_model):
        with pytest.raises(ValueError):
            stationary_occupation(unit_model, ORIGIN, 10.0, 10.0, 5, 0)


class TestRegeneration:
    def test_inside_start(self, eq6):
        rec = regeneration_sequence(eq6, ORIGIN, 5.0, 2.0, 3, RngStream(0))
        assert rec.tau_n[0] == 0.0 and rec.delta_n[0] == 0.0

    def test_single_structure(self, eq6):
        rec = regeneration_sequence(eq6, FAR, 5.0, 2.0, 6, RngStream(1))
        assert all(0 <= T - t <= 1 for t, T in zip(rec.tau_n, rec.T_n))
        assert all(1 + z.x + z.y <= 6.0 + 1e-12 for z in rec.states_T)
        assert rec.tau_n == sorted(rec.tau_n)
        assert all(d >= 0 for d in rec.delta_n)

    def test_batch_structure(self, eq6):
        batch = regeneration_batch(eq6, FAR, 5.0, 2.0, 6, 2000, 3)
        assert not batch.capped.any()
        assert all(v == 0 for v in batch.structure_violations().values())

    def test_batch_matches_single(self, eq6):
        batch = regeneration_batch(eq6, FAR, 5.0, 2.0, 6, 5, 7)
        rec = regeneration_sequence(eq6, FAR, 5.0, 2.0, 6, RngStream(7, 3))
        assert np.array_equal(batch.taus[3], rec.tau_n) and np.array_equal(batch.Ts[3], rec.T_n)

    def test_requires_nested_sets(self, eq6):
        with pytest.raises(ValueError):
            regeneration_sequence(eq6, FAR, 5.0, 5.0, 3, RngStream(0))

    def test_excursions_and_diagnostics(self, eq6):
        batch = regeneration_batch(eq6, FAR, 5.0, 2.0, 6, 2000, 8)
        rows = excursion_check(batch, 0.5)
        assert [r.ell for r in rows] == [1, 2, 3, 4, 5] and all(r.passed for r in rows)
        freqs = [r.frequency for r in rows]
        assert all(a >= b for a, b in zip(freqs, freqs[1:]))
        corr = eta_indicator_correlation(batch)
        assert set(corr) == {2, 3, 4, 5}
        rep = delta_moment_check(batch, 0.2, 2.5, 6.0, 0.2)
        assert rep.bound > 0 and rep.n == 2000

    def test_excursion_frequency_oracle(self, eq6):
        """A deliberately tiny bound is flagged."""
        batch = regeneration_batch(eq6, FAR, 5.0, 0.5, 6, 2000, 9)
        rows = excursion_check(batch, 1.0 - 1e-9)
        assert any(not r.passed for r in rows) or all(r.frequency == 0 for r in rows)


class TestQ:
    def test_clopper_pearson(self):
        assert clopper_pearson_lower(0, 100) == 0.0
        assert clopper_pearson_lower(100, 100) == pytest.approx(0.01 ** (1 / 100))
        lo = clopper_pearson_lower(40, 100)
        assert stats.binom.sf(39, 100, lo) == pytest.approx(0.01, rel=1e-6)

    def test_covering_grid(self):
        g = covering_grid(6.0, 1.0, 6)
        assert len(g) == 4 * 21
        assert np.all(1 + g[:, 1] + g[:, 3] <= 6.0 + 1e-12)
        assert {(a, b) for a, b in zip(g[:, 0], g[:, 2])} == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_positive_and_monotone(self, eq6):
        qs = [estimate_q(eq6, 5.0, K1, 2000, 4) for K1 in (1.5, 2.0, 5.0)]
        assert qs[1].q_low > 0
        lows = [q.q_low for q in qs]
        hats = [q.q_hat_min for q in qs]
        assert lows == sorted(lows) and hats == sorted(hats)

    def test_reps_floor(self, eq6):
        with pytest.raises(ValueError):
            estimate_q(eq6, 5.0, 2.0, 999, 0)
