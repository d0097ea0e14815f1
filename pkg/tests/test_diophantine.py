import math

import numpy as np
import pytest

from torus_sleuth.core import Drift
from torus_sleuth.diophantine import (DiophantineParams, ResonanceSet, c3_constant, check_omega_second,
                                      check_pair_third, excluded_zones_first, measure_halving, measure_S,
                                      monte_carlo_kept, third_step_zones)
from torus_sleuth.homological import choose_N

TWO_PI = 2 * math.pi
GOLDEN = TWO_PI * (math.sqrt(5) - 1) / 2
HALF_SQUARE = Drift.quadratic(0.5)


def brute_force_excluded(a, b, K_bar, mu_bar, N, n_grid=400001):
    z = np.linspace(a, b, n_grid)
    bad = np.zeros_like(z, dtype=bool)
    for k in range(1, N + 1):
        hw = K_bar * k ** (-mu_bar - 1.0)
        v = k * z / TWO_PI
        bad |= np.abs(v - np.rint(v)) * TWO_PI / k < hw
    return bad.mean() * (b - a), (b - a) / (n_grid - 1)


class TestFirstStepZones:
    def test_no_exclusion_when_K_bar_zero(self):
        rs = excluded_zones_first(0.0, 5.0, 0.0, 3.0, 40)
        assert len(rs) == 0
        assert rs.kept_measure == 5.0

    def test_pi_zone_on_short_domain(self):
        K_bar, mu_bar = 1e-2, 3.0
        rs = excluded_zones_first(3.0, 3.3, K_bar, mu_bar, 2)
        assert rs.contains(math.pi)
        assert not rs.contains(TWO_PI)
        assert rs.tags == [(2, -1)]
        lo, hi = rs.intervals[0]
        hw = K_bar * 2 ** (-mu_bar - 1)
        assert lo <= math.pi - hw and hi >= math.pi + hw
        assert hi - lo == pytest.approx(2 * hw, rel=1e-12)

    @pytest.mark.parametrize("K_bar", [1e-2, 1e-3])
    def test_measure_bound(self, K_bar):
        a, b = 0.5, 6.0
        N = choose_N(0.25, 1e-2)
        rs = excluded_zones_first(a, b, K_bar, 3.0, N)
        assert rs.measure <= (b - a) * 2 * K_bar
        ref, h = brute_force_excluded(a, b, K_bar, 3.0, N)
        assert rs.measure == pytest.approx(ref, abs=4 * len(rs) * h)


class TestSecondStepCheck:
    def test_exact_resonance_fails(self):
        chk = check_omega_second(math.pi, 1e-2, DiophantineParams(), kmax=5)
        assert not chk.passed
        assert chk.worst_k == 2 and chk.worst_n == -1
        assert chk.margin < 0

    def test_golden_passes(self):
        chk = check_omega_second(GOLDEN, 1e-2, DiophantineParams(K_hat=1e-3), kmax=50)
        assert chk.passed and chk.margin > 0

    def test_monotone_in_K_hat(self):
        rng = np.random.default_rng(1)
        for w in rng.uniform(0.5, 6.0, 200):
            for K in (1e-1, 1e-2, 1e-3):
                if check_omega_second(w, 1e-2, DiophantineParams(K_hat=K), kmax=20).passed:
                    assert check_omega_second(w, 1e-2, DiophantineParams(K_hat=K / 2), kmax=20).passed


class TestThirdStepCheck:
    def test_rational_drift_fails_degenerate_branch(self):
        chk = check_pair_third(GOLDEN, TWO_PI / 3, 1e-2, DiophantineParams(), kmax=6)
        assert not chk.passed
        assert chk.margin_degenerate < 0
        assert chk.worst_degenerate[0] == 0 and chk.worst_degenerate[1] % 3 == 0

    def test_zero_epsilon_only_angle_branch_binds(self):
        p = DiophantineParams()
        for drift in (0.0, TWO_PI / 3, 1.234):
            chk = check_pair_third(GOLDEN, drift, 0.0, p, kmax=8)
            assert chk.margin_degenerate >= 0
        # both thresholds vanish at eps = 0, so margins are the bare distances to 2 pi Z
        chk = check_pair_third(math.pi, 0.3, 0.0, p, kmax=8)
        assert chk.margin_angle == 0.0 and chk.worst_angle[:2] == (2, 0)
        assert chk.margin_degenerate == pytest.approx(0.3)

    def test_pointwise_agrees_with_intervals(self):
        eps, p = 1e-2, DiophantineParams(K=1e-1, kmax=10)
        curve = lambda w, nu=0: eps * HALF_SQUARE(w, nu)
        zones = third_step_zones(curve, 1.0, 2.0, eps, p, branch_thresholds=True)
        w = np.random.default_rng(2).uniform(1.0, 2.0, 500)
        for wi in w:
            chk = check_pair_third(wi, curve(wi), eps, p)
            assert chk.passed == (not zones.contains(wi))


class TestCantorMeasure:
    def test_no_exclusion_when_K_zero(self):
        m = measure_S(HALF_SQUARE, 1e-2, DiophantineParams(), 1.0, 2.0, K=0.0)
        assert m.kept_measure == 1.0

    def test_quadratic_drift_bound(self, rng):
        m = measure_S(HALF_SQUARE, 1e-2, DiophantineParams(kmax=30), 1.0, 2.0, mc_samples=10_000, rng=rng)
        assert m.holds and m.mc_holds and m.mc_agrees
        assert m.c1 == pytest.approx(1.0)
        assert math.isinf(m.c3_tail)  # mu = 5 sits on the divergence edge

    def test_monte_carlo_pass_fraction(self, rng):
        eps, p = 1e-2, DiophantineParams(K=1e-2, kmax=15)
        curve = lambda w, nu=0: eps * HALF_SQUARE(w, nu)
        est, frac, mask = monte_carlo_kept(curve, 1.0, 2.0, eps, p, 10_000, rng)
        m = measure_S(HALF_SQUARE, eps, p, 1.0, 2.0)
        assert frac >= 1 - m.c3 * math.sqrt(eps ** p.gamma2 * p.K / m.c1)
        q = m.kept_measure
        assert abs(est - q) <= 3 * math.sqrt(q * (1 - q) / 10_000) + 1 / 10_000

    def test_c3_tail_converges_for_large_mu(self):
        t1, tail1 = c3_constant(9.0, 1.0, 20)
        t2, _ = c3_constant(9.0, 1.0, 80)
        assert t1 <= t2 <= t1 + tail1

    def test_halving_nested_and_bounded(self):
        rep = measure_halving(HALF_SQUARE, 1e-2, DiophantineParams(K=1e-2, kmax=12), 1.0, 2.0, 5)
        assert rep.nested and rep.holds
        assert all(b >= a for a, b in zip(rep.kept[1:], rep.kept))
        ks = [s.measure for s in rep.steps]
        assert all(b <= a for a, b in zip(ks, ks[1:]))


def test_resonance_set_json_round_trip():
    rs = excluded_zones_first(0.5, 6.0, 1e-2, 3.0, 10)
    back = ResonanceSet.from_json_dict(rs.to_json_dict())
    np.testing.assert_array_equal(back.intervals, rs.intervals)
    assert back.measure == rs.measure
