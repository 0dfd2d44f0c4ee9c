import math

import numpy as np
import pytest
from conftest import make_scenario

from fldelay.model import LN2, achievable_rate, generate_scenario
from fldelay.numerics import DomainError
from fldelay.optimizer import (
    CapacityError,
    EmptyDomainError,
    InvariantError,
    Scheme,
    baseline_eb_fdma,
    baseline_fe_fdma,
    baseline_tdma,
    check_feasible,
    eta_domain,
    minimize_delay,
    required_bandwidth,
    required_rate,
    solve,
    solve_eta_star,
    t_star,
    t_upper_bound,
    total_required_bandwidth,
)
from fldelay.verification import bandwidth_by_bisection

# default cell, seed 0, rel_tol 1e-6 (first trusted run)
SEED0_DELAY = {
    Scheme.PROPOSED: 19.89369090948864,
    Scheme.EB_FDMA: 23.33486569639232,
    Scheme.FE_FDMA: 22.145734338195947,
    Scheme.TDMA: 32.26888978883295,
}
# toy K=2 case at T=100: argmin of a 10^6-point accuracy grid with bisection bandwidths
TOY_ETA_STAR = 0.2593747406252594
# b log2(1 + 1e6/b) = 5e5, 30-digit reference root
BW_HALF_MEGABIT = 187979.7352398487


class TestBuildingBlocks:
    def test_t_star(self):
        assert t_star(0.5, 40.0, 10.0, 1e9, 1e9) == pytest.approx(1.0)
        assert t_star(0.5, 20.0, 10.0, 1e9, 1e9) == 0.0
        assert abs(t_star(1 - 1e-12, 40.0, 10.0, 1e9, 1e9)) < 1e-9

    def test_required_rate(self):
        assert required_rate(0.5, 40.0, 10.0, 1e9, 1e9, 1e6) == pytest.approx(1e6)
        big = required_rate(0.5, 1e12, 10.0, 1e9, 1e9, 1e6)
        assert big == pytest.approx(2 * 10.0 * 1e6 / 1e12, rel=1e-6)

    def test_required_rate_no_time(self):
        with pytest.raises(DomainError):
            required_rate(0.5, 10.0, 10.0, 1e9, 1e9, 1e6)

    def test_required_rate_default_user(self):
        sc = generate_scenario(0, 3)
        u = sc.users[1]
        a = 20 * math.log(1000)
        A = 2 / 0.19 * u.cycles_per_sample * u.samples
        T, eta = 30.0, 0.6
        hand = 28.1e3 / ((1 - eta) * T / a - A * math.log2(1 / eta) / 2e9)
        assert required_rate(eta, T, sc.derived.a, sc.workload[1], sc.f_max[1], 28.1e3) == pytest.approx(hand, rel=1e-12)

    def test_required_bandwidth(self):
        assert required_bandwidth(0.0, 1.0, 1.0, 1.0) == 0.0
        assert required_bandwidth(5e5, 1e6, 1.0, 1.0) == pytest.approx(BW_HALF_MEGABIT, rel=1e-12)
        oracle = bandwidth_by_bisection(5e5, 1e6)
        assert required_bandwidth(5e5, 1e6, 1.0, 1.0) == pytest.approx(float(oracle), rel=1e-12)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            required_bandwidth(1e6 / LN2, 1e6, 1.0, 1.0)

    def test_inverse_rate(self):
        rng = np.random.default_rng(1)
        c = 10 ** rng.uniform(3, 9, 500)
        r = rng.uniform(1e-6, 0.999, 500) * c / LN2
        b = required_bandwidth(r, c, 1.0, 1.0)
        np.testing.assert_allclose(achievable_rate(b, 1.0, c, 1.0), r, rtol=1e-9)


class TestInnerProblem:
    def test_single_user_composition(self):
        sc = make_scenario([1.0], [1e6])
        r = required_rate(0.4, 100.0, 10.0, sc.workload[0], sc.f_max[0], 1e5)
        assert total_required_bandwidth(0.4, 100.0, sc) == pytest.approx(required_bandwidth(r, 1e6, 1.0, 1.0))

    def test_symmetric_pair(self):
        one = make_scenario([1.0], [1e6])
        two = make_scenario([1.0, 1.0], [1e6, 1e6])
        assert total_required_bandwidth(0.3, 80.0, two) == pytest.approx(2 * total_required_bandwidth(0.3, 80.0, one))

    def test_infeasible_marker(self, toy_k2):
        assert total_required_bandwidth(1 - 1e-13, 100.0, toy_k2) == math.inf
        assert total_required_bandwidth(0.5, 1.0, toy_k2) == math.inf

    def test_domain_boundary(self):
        # T = 2a with A/f = 1 s: t* > 0 exactly when 2(1 - eta) > log2(1/eta), i.e. eta > 1/2
        sc = make_scenario([1.0], [1e18])
        dom = eta_domain(20.0, sc)
        assert dom.lo == pytest.approx(0.5, abs=1e-9)
        assert dom.hi > 0.999

    def test_domain_huge_t(self, toy_k2):
        dom = eta_domain(1e9, toy_k2)
        assert dom.lo < 1e-6 and dom.hi > 1 - 1e-6

    def test_domain_empty(self, toy_k2):
        assert eta_domain(0.0, toy_k2) is None
        assert eta_domain(1.0, toy_k2) is None
        with pytest.raises(EmptyDomainError):
            solve_eta_star(1.0, toy_k2)

    def test_toy_eta_star(self, toy_k2):
        eta, bw = solve_eta_star(100.0, toy_k2)
        assert eta == pytest.approx(TOY_ETA_STAR, abs=1e-4)
        assert bw == pytest.approx(total_required_bandwidth(eta, 100.0, toy_k2))

    def test_methods_agree(self, toy_k2):
        for T in (60.0, 100.0, 400.0):
            e1, b1 = solve_eta_star(T, toy_k2, method="golden")
            e2, b2 = solve_eta_star(T, toy_k2, method="derivative")
            assert e1 == pytest.approx(e2, abs=1e-6)
            assert b1 == pytest.approx(b2, rel=1e-9)

    def test_minimality(self):
        sc = generate_scenario(2, 20)
        T = 1.5 * minimize_delay(sc).total_delay
        eta, bw = solve_eta_star(T, sc)
        dom = eta_domain(T, sc)
        probes = np.random.default_rng(0).uniform(dom.lo, dom.hi, 100)
        assert np.all(total_required_bandwidth(probes, T, sc) >= bw * (1 - 1e-12))

    def test_symmetric_eta_independent_of_k(self):
        e1, _ = solve_eta_star(60.0, make_scenario([1.0], [1e6]))
        e5, _ = solve_eta_star(60.0, make_scenario([1.0] * 5, [1e6] * 5))
        assert e1 == pytest.approx(e5, abs=1e-7)


class TestFeasibility:
    def test_infinite_bandwidth(self, toy_k2):
        wide = make_scenario([1.0, 2.0], [1e6, 3e5], bandwidth=1e15)
        assert check_feasible(100.0, wide).feasible

    def test_below_computation(self, toy_k2):
        rep = check_feasible(5.0, toy_k2)
        assert not rep.feasible and rep.eta_domain is None

    def test_report(self, toy_k2):
        rep = check_feasible(100.0, toy_k2)
        assert rep.feasible == (rep.required_bandwidth <= toy_k2.net.bandwidth)
        assert rep.eta_star in rep.eta_domain

    def test_monotone_ladder(self):
        for seed in range(3):
            sc = generate_scenario(seed, 10)
            ladder = np.geomspace(1.0, 200.0, 20)
            verdicts = [check_feasible(T, sc).feasible for T in ladder]
            first = verdicts.index(True)
            assert all(verdicts[first:])
            assert not any(verdicts[:first])

    def test_early_exit_same_verdict(self):
        sc = generate_scenario(4, 10)
        for T in np.geomspace(5.0, 100.0, 15):
            assert check_feasible(T, sc).feasible == check_feasible(T, sc, early_exit=True).feasible

    def test_upper_bound_feasible(self):
        for seed in range(5):
            sc = generate_scenario(seed, 30)
            assert check_feasible(t_upper_bound(sc) * (1 + 1e-6), sc).feasible

    def test_upper_bound_single_user(self):
        sc = make_scenario([1.5], [2e6], bandwidth=5e5)
        B, s, a = 5e5, 1e5, 10.0
        hand = 2 * a * 1.5 + 2 * a * s / (B * math.log2(1 + 2e6 / B))
        assert t_upper_bound(sc) == pytest.approx(hand, rel=1e-12)

    def test_upper_bound_default_seed0(self):
        sc = generate_scenario(0)
        a = 20 * math.log(1000)
        K, B, n0 = 50, 20e6, 10 ** (-20.4)
        vals = []
        for u in sc.users:
            A = 2 / 0.19 * u.cycles_per_sample * u.samples
            snr = u.gain * u.p_max * K / (n0 * B)
            vals.append(2 * a * A / 2e9 + 2 * a * K * 28.1e3 / (B * math.log2(1 + snr)))
        assert t_upper_bound(sc) == pytest.approx(max(vals), rel=1e-12)
        assert t_upper_bound(sc) == pytest.approx(24.501208131314858, rel=1e-12)


class TestMinimizeDelay:
    def test_allocation_invariants(self):
        sc = generate_scenario(1, 20)
        alloc = minimize_delay(sc)
        assert alloc.violations(sc) == []
        assert alloc.bandwidth.sum() <= sc.net.bandwidth * (1 + 1e-9)
        np.testing.assert_allclose(alloc.per_user_delay, alloc.total_delay, rtol=1e-6)
        meta = alloc.meta
        assert meta["bracket_rel_width"] <= 1e-6
        assert meta["eta_domain"][0] < alloc.eta < meta["eta_domain"][1]

    def test_threshold(self):
        sc = generate_scenario(3, 15)
        T = minimize_delay(sc).total_delay
        assert check_feasible(T, sc).feasible
        assert not check_feasible(T * (1 - 2e-6), sc).feasible

    def test_doubling_bandwidth(self):
        for seed in range(3):
            sc = generate_scenario(seed, 20)
            wider = generate_scenario(seed, 20, bandwidth_hz=40e6)
            assert minimize_delay(wider).total_delay <= minimize_delay(sc).total_delay

    def test_symmetric_users(self):
        sc = make_scenario([1.0] * 4, [1e6] * 4, bandwidth=2e5)
        alloc = minimize_delay(sc)
        np.testing.assert_allclose(alloc.bandwidth, alloc.bandwidth[0], rtol=1e-12)

    def test_derivative_route(self):
        sc = generate_scenario(6, 10)
        g = minimize_delay(sc, method="golden").total_delay
        d = minimize_delay(sc, method="derivative").total_delay
        assert g == pytest.approx(d, rel=3e-6)

    def test_json_fields(self):
        sc = generate_scenario(0, 3)
        doc = minimize_delay(sc).to_dict()
        for key in ("total_delay_s", "eta", "bandwidth_hz", "transmit_time_s", "cpu_hz", "power_w",
                    "per_user_delay_s", "meta"):
            assert key in doc
        assert doc["scheme"] == "proposed"


class TestBaselines:
    @pytest.mark.parametrize("seed", range(4))
    def test_all_valid(self, seed):
        sc = generate_scenario(seed, 25)
        for scheme in Scheme:
            solve(sc, scheme).validate(sc)

    @pytest.mark.parametrize("seed", range(4))
    def test_dominance(self, seed):
        sc = generate_scenario(seed, 25)
        best = minimize_delay(sc).total_delay
        assert best <= baseline_eb_fdma(sc).total_delay * (1 + 1e-6)
        assert best <= baseline_fe_fdma(sc).total_delay * (1 + 1e-6)

    def test_single_user_coincidence(self):
        sc = generate_scenario(9, 1)
        best = minimize_delay(sc).total_delay
        assert baseline_eb_fdma(sc).total_delay == pytest.approx(best, rel=2e-6)
        assert baseline_tdma(sc).total_delay == pytest.approx(best, rel=2e-6)

    def test_tdma_flag_and_slots(self):
        sc = make_scenario([1.0] * 3, [1e6] * 3)
        alloc = baseline_tdma(sc)
        assert alloc.meta["approximate_baseline"] is True
        np.testing.assert_allclose(np.diff(alloc.per_user_delay), np.diff(alloc.per_user_delay)[0])

    def test_tdma_slots_linear_in_k(self):
        t = [baseline_tdma(make_scenario([1.0] * k, [1e6] * k)).transmit_time.sum() for k in (1, 2, 4)]
        assert t[1] == pytest.approx(2 * t[0]) and t[2] == pytest.approx(4 * t[0])

    def test_fe_fixed_eta(self):
        assert baseline_fe_fdma(generate_scenario(0, 5)).eta == 0.5

    def test_regression_seed0(self):
        sc = generate_scenario(0)
        for scheme, expected in SEED0_DELAY.items():
            assert solve(sc, scheme).total_delay == pytest.approx(expected, rel=1e-9), scheme

    def test_invalid_allocation_detected(self):
        sc = generate_scenario(0, 4)
        alloc = minimize_delay(sc)
        alloc.bandwidth = alloc.bandwidth * 2
        with pytest.raises(InvariantError):
            alloc.validate(sc)
