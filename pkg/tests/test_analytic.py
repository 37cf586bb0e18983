import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from fastretrial import analytic as an
from fastretrial.analytic import QosTarget, SystemConfig
from fastretrial.errors import (
    BoundExceededError,
    InfeasibleRateError,
    InvalidConfigError,
    LambertDomainError,
    NoPositiveRootError,
)
from fastretrial.oracles import binomial_success_sum, binomial_throughput_sum

# frozen from mpmath (40 digits) bisection on the defining equations
ALPHA_40_20_010 = 0.12860740942424025914
ALPHA_MAX_40_20 = 0.20031805326487035248
ALPHA_MAX_100_50 = 0.20206403767832927073
P_40_20_010 = 0.77756017672455922914
THETA_40_20_010 = 2.62238590067281115746
THETA_005_08 = 3.42564272386820709456
ALPHA_MAX_TILDE_ETA2 = 0.20318786997997995384


def brute_alpha(cfg, lo=0.0, hi=None, iters=200):
    """Independent bisection of alpha (1 - alpha/L)^(N-1) = lambda."""
    hi = cfg.n_preambles / cfg.n_devices if hi is None else hi
    s = lambda a: a * (1 - a / cfg.n_preambles) ** (cfg.n_devices - 1) - cfg.arrival_rate
    for _ in range(iters):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if s(mid) < 0 else (lo, mid)
    return (lo + hi) / 2


class TestConfig:
    def test_rejects_fewer_devices_than_preambles(self):
        with pytest.raises(InvalidConfigError, match="random access is not needed"):
            SystemConfig(5, 10, 0.1)

    @pytest.mark.parametrize("args", [(10, 1, 0.1), (10, 5, 0.0), (10, 5, -1.0), (0, 2, 0.1), (10.5, 5, 0.1)])
    def test_rejects_invalid(self, args):
        with pytest.raises(InvalidConfigError):
            SystemConfig(*args)

    def test_eta(self):
        assert SystemConfig(50, 25, 0.1).eta == 2.0

    @pytest.mark.parametrize("tau,eps", [(0, 0.1), (1, 0.0), (1, 1.0), (2, 1.5)])
    def test_qos_target_invalid(self, tau, eps):
        with pytest.raises(InvalidConfigError):
            QosTarget(tau, eps)


class TestStability:
    def test_lambda_max_40_20(self, cfg_40_20):
        assert an.lambda_max(cfg_40_20) == pytest.approx(0.1353, abs=1e-4)

    def test_lambda_max_50_25_near_exp_minus_eta(self):
        lm = an.lambda_max(SystemConfig(50, 25, 0.3))
        assert lm == pytest.approx(0.1353, abs=5e-4)
        assert lm == pytest.approx(math.exp(-2), abs=5e-4)

    def test_lambda_max_two_two(self):
        assert an.lambda_max(SystemConfig(2, 2, 0.1)) == 0.5

    def test_kappa_form(self):
        cfg = SystemConfig(37, 11, 0.1)
        kappa = math.log(11 / 10)
        assert an.lambda_max(cfg) == pytest.approx(math.exp(-kappa * 36), rel=1e-14)

    def test_is_stable(self):
        assert an.is_stable(SystemConfig(40, 20, 0.1))
        assert not an.is_stable(SystemConfig(40, 20, 0.14))
        assert 0.9 ** 49 == pytest.approx(0.00573, abs=1e-5)
        assert not an.is_stable(SystemConfig(50, 10, 0.15))

    def test_exact_threshold_is_unstable(self, cfg_40_20):
        assert not an.is_stable(cfg_40_20.with_rate(an.lambda_max(cfg_40_20)))

    def test_max_devices(self):
        assert math.log(0.15) / math.log(0.9) == pytest.approx(18.006, abs=1e-3)
        assert an.max_devices(10, 0.15) == 19
        assert 0.9 ** 18 > 0.15 > 0.9 ** 19

    @pytest.mark.parametrize("L,k", [(10, 5), (4, 17), (25, 49), (100, 3)])
    def test_max_devices_inversion(self, L, k):
        assert an.max_devices(L, (1 - 1 / L) ** k) == k + 1

    def test_max_devices_bracket_l100(self):
        v = an.max_devices(100, 0.15)
        assert 0.99 ** (v - 1) > 0.15 >= 0.99 ** v

    def test_min_preambles_bracket(self):
        L = an.min_preambles(50, 0.15)
        assert (1 - 1 / L) ** 49 > 0.15
        assert (1 - 1 / (L - 1)) ** 49 <= 0.15

    def test_min_preambles_overflow(self):
        with pytest.raises(BoundExceededError):
            an.min_preambles(50, 1 - 1e-12)

    def test_min_preambles_consistent_with_is_stable(self):
        for lam in (0.05, 0.1, 0.15):
            for N in range(10, 61):
                Lmin = an.min_preambles(N, lam)
                for L in range(2, N + 1):
                    assert (Lmin <= L) == an.is_stable(SystemConfig(N, L, lam)), (N, L, lam)


class TestThroughput:
    def test_zero(self, cfg_40_20):
        assert an.throughput_per_device(0.0, cfg_40_20) == 0.0

    def test_peak_value(self, cfg_40_20):
        N, L = 40, 20
        assert an.throughput_per_device(L / N, cfg_40_20) == pytest.approx((L / N) * (1 - 1 / N) ** (N - 1), rel=1e-14)

    def test_full_access_equals_lambda_max(self, cfg_40_20):
        assert an.throughput_per_device(1.0, cfg_40_20) == pytest.approx(0.1353, abs=1e-4)
        assert an.throughput_per_device(1.0, cfg_40_20) == pytest.approx(an.lambda_max(cfg_40_20), rel=1e-14)

    def test_total_throughput(self, cfg_40_20):
        assert an.total_throughput(0.3, cfg_40_20) == pytest.approx(40 * an.throughput_per_device(0.3, cfg_40_20))

    @pytest.mark.parametrize("N,L", [(40, 20), (50, 10), (100, 50), (13, 12)])
    def test_unimodal(self, N, L):
        cfg = SystemConfig(N, L, 0.01)
        peak = L / N
        up = np.linspace(1e-6, peak, 400)
        down = np.linspace(peak, 1.0, 400)
        s_up = [an.throughput_per_device(a, cfg) for a in up]
        s_down = [an.throughput_per_device(a, cfg) for a in down]
        assert all(b > a for a, b in zip(s_up, s_up[1:]))
        assert all(b < a for a, b in zip(s_down, s_down[1:]))

    def test_large_n_no_underflow(self):
        cfg = SystemConfig(10**7, 5 * 10**6, 0.01)
        assert an.throughput_per_device(1.0, cfg) == pytest.approx(math.exp(-2), rel=1e-6)


class TestAlpha:
    def test_solve_alpha_frozen(self, cfg_40_20):
        a = an.solve_alpha(cfg_40_20)
        assert a == pytest.approx(ALPHA_40_20_010, abs=1e-13)
        assert a == pytest.approx(brute_alpha(cfg_40_20), abs=1e-13)
        assert abs(an.throughput_per_device(a, cfg_40_20) - 0.10) <= 1e-12

    def test_near_lambda_max(self, cfg_40_20):
        cfg = cfg_40_20.with_rate(an.lambda_max(cfg_40_20) - 1e-9)
        assert an.solve_alpha(cfg) == pytest.approx(an.solve_alpha_max(cfg), abs=1e-4)

    def test_small_rate(self, cfg_40_20):
        for lam in (1e-3, 1e-6, 1e-10):
            a = an.solve_alpha(cfg_40_20.with_rate(lam))
            assert a >= lam
            assert a == pytest.approx(lam, rel=1e-2)

    def test_infeasible(self, cfg_40_20):
        with pytest.raises(InfeasibleRateError):
            an.solve_alpha(cfg_40_20.with_rate(0.14))
        with pytest.raises(InfeasibleRateError):
            an.solve_alpha(cfg_40_20.with_rate(an.lambda_max(cfg_40_20)))

    def test_roundtrip_grid(self):
        for N, L in [(40, 20), (50, 25), (100, 50), (30, 3), (7, 7)]:
            cfg = SystemConfig(N, L, 0.01)
            lm = an.lambda_max(cfg)
            for lam in np.linspace(lm / 50, lm * 0.999, 25):
                a = an.solve_alpha(cfg.with_rate(lam))
                assert abs(an.throughput_per_device(a, cfg) - lam) <= 1e-12
                assert 0 < a <= an.solve_alpha_max(cfg)

    def test_alpha_max_frozen(self):
        assert an.solve_alpha_max(SystemConfig(40, 20, 0.1)) == pytest.approx(ALPHA_MAX_40_20, abs=1e-12)
        assert an.solve_alpha_max(SystemConfig(100, 50, 0.1)) == pytest.approx(ALPHA_MAX_100_50, abs=1e-12)

    def test_alpha_max_near_asymptote(self):
        assert abs(an.solve_alpha_max(SystemConfig(40, 20, 0.1)) - 0.2032) <= 0.01
        assert abs(an.solve_alpha_max(SystemConfig(100, 50, 0.1)) - 0.2032) <= 0.005

    def test_alpha_max_n_equals_l(self):
        assert an.solve_alpha_max(SystemConfig(2, 2, 0.1)) == 1.0

    def test_alpha_max_bounded_by_peak(self):
        for N, L in [(40, 20), (11, 10), (90, 3)]:
            cfg = SystemConfig(N, L, 0.01)
            am = an.solve_alpha_max(cfg)
            assert am <= L / N
            assert an.throughput_per_device(am, cfg) == pytest.approx(an.lambda_max(cfg), rel=1e-12)

    def test_alpha_asymptotic_ceiling(self):
        assert an.alpha_asymptotic(2, math.exp(-2)) == pytest.approx(0.2032, abs=5e-4)
        assert an.alpha_max_asymptotic(2) == pytest.approx(ALPHA_MAX_TILDE_ETA2, abs=1e-12)

    def test_alpha_asymptotic_small_rate(self):
        a = an.alpha_asymptotic(2, 1e-9)
        assert a / 1e-9 == pytest.approx(1.0, abs=1e-6)

    def test_alpha_asymptotic_vs_finite(self, cfg_40_20):
        assert abs(an.alpha_asymptotic(2, 0.10) - an.solve_alpha(cfg_40_20)) <= 0.01

    def test_asymptotic_consistency_large_n(self):
        gap = abs(an.solve_alpha(SystemConfig(400, 200, 0.1)) - an.alpha_asymptotic(2, 0.1))
        assert gap <= 1e-3
        gaps = [abs(an.solve_alpha(SystemConfig(20 * s, 10 * s, 0.1)) - an.alpha_asymptotic(2, 0.1))
                for s in (1, 4, 16, 64)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_alpha_asymptotic_domain(self):
        with pytest.raises(LambertDomainError):
            an.alpha_asymptotic(2, 0.2)
        with pytest.raises(LambertDomainError):
            an.success_prob_asymptotic(2, 0.2)

    def test_alpha_from_empty_prob(self):
        assert an.alpha_from_empty_prob(0.3, 1.0) == pytest.approx(1 - math.exp(-0.3))
        assert an.alpha_from_empty_prob(0.3, 0.0) == 1.0
        assert an.alpha_from_empty_prob(0.1, 0.9) == pytest.approx(0.18564632376763638867, abs=1e-15)


class TestSuccessProb:
    def test_no_contenders(self, cfg_40_20):
        assert an.success_prob(0.0, cfg_40_20) == 1.0

    def test_full_access(self, cfg_40_20):
        assert an.success_prob(1.0, cfg_40_20) == pytest.approx(0.1353, abs=1e-4)

    def test_binomial_sum_7_3(self):
        cfg = SystemConfig(7, 3, 0.1)
        terms = [(1 - 1 / 3) ** k * math.comb(6, k) * 0.4 ** k * 0.6 ** (6 - k) for k in range(7)]
        assert abs(sum(terms) - an.success_prob(0.4, cfg)) <= 1e-12

    @pytest.mark.parametrize("L", [2, 3, 5])
    def test_binomial_identities(self, L):
        for N in range(L, 13):
            cfg = SystemConfig(N, L, 0.01)
            for a in np.arange(1, 10) / 10:
                assert abs(binomial_success_sum(N, L, a) - an.success_prob(a, cfg)) <= 1e-12
                assert abs(binomial_throughput_sum(N, L, a) - an.total_throughput(a, cfg)) <= 1e-12

    def test_pipeline_frozen(self, cfg_40_20):
        assert an.success_prob(an.solve_alpha(cfg_40_20), cfg_40_20) == pytest.approx(P_40_20_010, abs=1e-12)

    def test_asymptotic_limits(self, cfg_40_20):
        assert an.success_prob_asymptotic(2, 1e-12) == pytest.approx(1.0)
        p = an.success_prob(an.solve_alpha(cfg_40_20), cfg_40_20)
        assert abs(an.success_prob_asymptotic(2, 0.10) - p) <= 0.01

    def test_asymptotic_equals_exp_minus_alpha_eta(self):
        for lam in (0.01, 0.05, 0.12):
            assert an.success_prob_asymptotic(2, lam) == pytest.approx(
                math.exp(-2 * an.alpha_asymptotic(2, lam)), rel=1e-14)

    @pytest.mark.parametrize("eta", [1.0, 1.5, 2.0, 3.0, 5.0, 10.0])
    def test_asymptotic_success_exceeds_rate(self, eta):
        for lam in np.linspace(1e-4, math.exp(-eta), 60)[:-1]:
            assert an.success_prob_asymptotic(eta, lam) > lam


class TestQosExponent:
    def test_bounds_frozen(self):
        lo, hi = an.qos_bounds(0.05, 0.8)
        assert lo == pytest.approx(math.log(16), abs=1e-12)
        assert lo == pytest.approx(2.7726, abs=1e-4)
        assert hi == pytest.approx(math.log(1 + math.log(5) / 0.05), abs=1e-12)
        assert hi == pytest.approx(3.5022, abs=1e-4)

    def test_bounds_p_equals_lambda(self):
        assert an.qos_bounds(0.3, 0.3)[0] == 0.0

    def test_bounds_ordered_grid(self):
        for lam in np.linspace(0.01, 0.9, 30):
            for p in np.linspace(lam + 0.005, 0.995, 10):
                lo, hi = an.qos_bounds(lam, p)
                assert lo < hi

    def test_exponent_frozen(self):
        assert an.qos_exponent(0.05, 0.8) == pytest.approx(THETA_005_08, abs=1e-12)
        assert an.qos_exponent(0.10, P_40_20_010) == pytest.approx(THETA_40_20_010, abs=1e-12)

    def test_exponent_in_bounds(self):
        t = an.qos_exponent(0.05, 0.8)
        lo, hi = an.qos_bounds(0.05, 0.8)
        assert lo <= t <= hi

    def test_exponent_grows_as_p_tends_to_one(self):
        # mpmath: 6.47460026153886178883 at p = 1 - 1e-9, bounded above by ln(1 + 9 ln 10 / 0.01)
        assert an.qos_exponent(0.01, 1 - 1e-9) == pytest.approx(6.4746002615388618, abs=1e-12)
        thetas = [an.qos_exponent(0.01, 1 - 10.0 ** -k) for k in range(1, 16)]
        assert all(b > a for a, b in zip(thetas, thetas[1:]))
        assert thetas[-1] > math.log(1 / 0.01)

    @pytest.mark.parametrize("lam,p", [(0.3, 0.3), (0.5, 0.2)])
    def test_no_positive_root(self, lam, p):
        with pytest.raises(NoPositiveRootError):
            an.qos_exponent(lam, p)

    @given(st.floats(0.001, 0.95), st.floats(0.001, 0.999))
    @settings(max_examples=300)
    def test_root_residual_and_uniqueness(self, lam, p):
        assume(p > lam * 1.01)
        t = an.qos_exponent(lam, p)
        lo, hi = an.qos_bounds(lam, p)
        g = lambda th: an.exponent_balance(th, lam, p)
        scale = max(1.0, lam * math.exp(t))
        assert abs(g(t)) <= 1e-12 * scale
        assert lo - 1e-12 <= t <= hi + 1e-12
        for th in np.linspace(0, t, 12)[1:-1]:
            assert g(th) < 0
        for th in np.linspace(t, hi + 1, 12)[1:]:
            assert g(th) > 0

    def test_lmgfs(self):
        assert an.lmgf_arrival(0.7, 0.2) == pytest.approx(0.2 * (math.exp(0.7) - 1))
        assert an.lmgf_service(0.7, 0.4) == pytest.approx(math.log(0.6 + 0.4 * math.exp(0.7)))

    def test_tail_probability(self):
        assert an.tail_probability(1.5351, 3) == pytest.approx(0.0100, abs=1e-4)
        assert an.tail_probability(2.0, 0) == 1.0
        assert an.tail_probability(0.7, 1) ** 2 == pytest.approx(an.tail_probability(0.7, 2), rel=1e-14)

    def test_required_exponent(self):
        assert an.required_exponent(QosTarget(3, 0.01)) == pytest.approx(1.5351, abs=1e-4)
        assert an.required_exponent(QosTarget(1, math.exp(-1))) == pytest.approx(1.0, rel=1e-15)
        assert an.required_exponent(QosTarget(2, 1e-4)) == pytest.approx(4.6052, abs=1e-4)


class TestAnalyze:
    def test_asymptotic_stages(self, cfg_40_20):
        sol = an.analyze(cfg_40_20, "asymptotic")
        assert sol.asymptotic
        assert sol.alpha == pytest.approx(an.alpha_asymptotic(2, 0.10), rel=1e-15)
        assert sol.p_success == pytest.approx(an.success_prob_asymptotic(2, 0.10), rel=1e-15)
        assert sol.theta_star == pytest.approx(an.qos_exponent(0.10, sol.p_success), rel=1e-15)
        assert sol.theta_lower <= sol.theta_star <= sol.theta_upper

    def test_finite_stages(self, cfg_40_20):
        sol = an.analyze(cfg_40_20, "finite")
        assert not sol.asymptotic
        assert sol.alpha == pytest.approx(ALPHA_40_20_010, abs=1e-13)
        assert sol.theta_star == pytest.approx(THETA_40_20_010, abs=1e-11)
        assert 0 < sol.alpha <= sol.alpha_max <= 20 / 40
        assert 0 < sol.p_success < 1

    def test_default_mode(self, cfg_40_20):
        assert not an.analyze(cfg_40_20).asymptotic
        assert an.analyze(SystemConfig(20_000, 10_000, 0.1)).asymptotic

    def test_design_point_50_25(self):
        # the tail(3) = 1e-4 crossing sits between 0.07 and 0.09
        assert an.analyze(SystemConfig(50, 25, 0.07)).tail(3) <= 1e-4
        assert an.analyze(SystemConfig(50, 25, 0.09)).tail(3) > 1e-4

    def test_infeasible(self):
        with pytest.raises(InfeasibleRateError):
            an.analyze(SystemConfig(40, 20, 0.14))

    def test_asymptotic_needs_exp_minus_eta(self):
        # small system where lambda_max exceeds e^-eta
        cfg = SystemConfig(2, 2, 0.45)
        assert an.is_stable(cfg)
        an.analyze(cfg, "finite")
        with pytest.raises(InfeasibleRateError):
            an.analyze(cfg, "asymptotic")

    @pytest.mark.parametrize("N,L", [(40, 20), (100, 50)])
    @pytest.mark.parametrize("mode", ["finite", "asymptotic"])
    def test_theta_decreasing_in_rate(self, N, L, mode):
        cfg = SystemConfig(N, L, 0.01)
        lm = min(an.lambda_max(cfg), math.exp(-N / L))
        thetas = [an.analyze(cfg.with_rate(lam), mode).theta_star
                  for lam in np.linspace(lm / 21, lm * 20 / 21, 20)]
        assert all(b < a for a, b in zip(thetas, thetas[1:]))

    def test_to_dict(self, cfg_40_20):
        d = an.analyze(cfg_40_20).to_dict()
        assert d["n_devices"] == 40 and "theta_star" in d


class TestDesign:
    def test_max_rate_50_25(self):
        target = QosTarget(3, 1e-4)
        lam = an.max_arrival_rate(50, 25, target)
        assert lam == pytest.approx(0.08, abs=0.01)
        assert an.analyze(SystemConfig(50, 25, lam)).tail(3) <= 1e-4
        assert an.analyze(SystemConfig(50, 25, lam + 0.005)).tail(3) >= 1e-4

    def test_asymptotic_mode(self):
        lam = an.max_arrival_rate(50, 25, QosTarget(3, 1e-4), "asymptotic")
        assert lam == pytest.approx(0.08, abs=0.01)

    def test_loose_target_hits_boundary(self):
        cfg = SystemConfig(50, 25, 0.01)
        lam = an.max_arrival_rate(50, 25, QosTarget(1, 0.999))
        assert lam < an.lambda_max(cfg)
        assert lam == pytest.approx(an.lambda_max(cfg), rel=1e-9)
