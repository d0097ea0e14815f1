import math

import numpy as np
import pytest

from torus_sleuth.actionangle import (H_MIN, I_MAX, ActionChart, action_angle_to_rz,
                                      action_of_level, angle_offset, frequencies, hamiltonian,
                                      hill_to_action_angle, level_of_action, period_of_level,
                                      rz_to_action_angle, second_angle, verify_assumption1)
from torus_sleuth.core import HillFlowSpec
from torus_sleuth.dynamics import integrate_flow
from torus_sleuth.errors import ChartRange, OutsideSeparatrix

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def chart():
    return ActionChart.build()


class TestAction:
    def test_elliptic_limit(self):
        # grad H = 0 at (R, z) = (1/4, 0), where H = -1/8
        assert hamiltonian(0.25, 0.0) == H_MIN
        assert action_of_level(H_MIN + 1e-12) < 1e-11

    def test_monotone(self):
        h = np.linspace(H_MIN, 0.0, 52)[1:-1]
        I = action_of_level(h)
        assert np.all(np.diff(I) > 0)

    def test_periodic_rule_matches_quad(self):
        h = np.linspace(H_MIN, 0.0, 12)[1:-1]
        np.testing.assert_allclose(action_of_level(h, method="periodic"), action_of_level(h),
                                   rtol=1e-10)

    @pytest.mark.parametrize("h", [-0.1, -0.05, -0.01])
    def test_monte_carlo_area(self, h):
        rng = np.random.default_rng(11)
        zmax = math.sqrt(1.0 - math.sqrt(-8.0 * h))
        R_lo = 0.25 * (1 - math.sqrt(1 + 8 * h))
        R_hi = 0.25 * (1 + math.sqrt(1 + 8 * h))
        n = 10 ** 6
        R = rng.uniform(R_lo, R_hi, n)
        z = rng.uniform(-zmax, zmax, n)
        area = np.mean(hamiltonian(R, z) <= h) * (R_hi - R_lo) * 2 * zmax
        assert action_of_level(h) == pytest.approx(area / TWO_PI, rel=1e-3)

    def test_outside_separatrix(self):
        for h in (0.0, 0.1, H_MIN, -0.2):
            with pytest.raises(OutsideSeparatrix):
                action_of_level(h)

    def test_inverse(self):
        for h in (-0.12, -0.06, -0.001):
            assert level_of_action(action_of_level(h)) == pytest.approx(h, rel=1e-12)
        with pytest.raises(ChartRange):
            level_of_action(I_MAX)


class TestFrequencies:
    def test_small_action_limits(self):
        w1, w2 = frequencies(1e-7)
        # sqrt(H_RR H_zz) = sqrt(4 * 1/2) and 1/R* at the elliptic point
        assert w1 == pytest.approx(math.sqrt(2), abs=1e-4)
        assert w2 == pytest.approx(4.0, abs=1e-4)

    def test_period_identity(self):
        for I in np.linspace(0.005, 0.09, 10):
            w1, _ = frequencies(I)
            h = level_of_action(I)
            assert period_of_level(h) * w1 == pytest.approx(TWO_PI, abs=1e-10)

    def test_chart_agrees(self, chart):
        for I in (0.01, 0.04, 0.08):
            np.testing.assert_allclose(chart.frequencies(I), frequencies(I), rtol=1e-8)
        with pytest.raises(ChartRange):
            chart.frequencies(0.1)


class TestSecondAngle:
    def test_normalisation(self):
        assert second_angle(0.03, 0.0, 1.2) == pytest.approx(1.2, abs=1e-12)

    def test_periodic(self):
        for I in (0.01, 0.05, 0.09):
            assert second_angle(I, TWO_PI, 0.7, c=50.0) == pytest.approx(0.7, abs=1e-8)

    def test_chart_periodicity(self, chart):
        I = np.linspace(0.002, 0.089, 20)
        d = chart.phi_offset(I, np.full(20, TWO_PI)) - chart.phi_offset(I, np.zeros(20))
        assert np.abs(d).max() < 1e-8

    def test_uniform_advance_on_orbit(self):
        c = 20.0
        spec = HillFlowSpec(c, forcing=False)
        o = integrate_flow(spec, (0.8, 0.0, 0.0), (0.0, 20.0), tol=1e-12, n_out=401)
        R = 0.5 * o.states[:, 0] ** 2
        I, phi1, _ = rz_to_action_angle(R, o.states[:, 1])
        phi2 = o.unwrapped(2) + c * angle_offset(R, o.states[:, 1])
        rate = np.diff(phi2) / np.diff(o.t)
        _, w2 = frequencies(float(I.mean()))
        assert np.abs(rate / (c * w2) - 1).max() < 1e-6

    def test_hill_to_action_angle(self):
        I, phi1, phi2 = hill_to_action_angle(math.sqrt(2 * 0.4), 0.0, 0.3, 10.0)
        assert phi1 == pytest.approx(0.0, abs=1e-12)
        assert phi2 == pytest.approx(0.3, abs=1e-12)


class TestChart:
    def test_round_trip(self, chart):
        rng = np.random.default_rng(2)
        I = rng.uniform(0.002, 0.089, 200)
        phi = rng.uniform(0, TWO_PI, 200)
        R, z = chart.to_rz(I, phi)
        I2, phi2, _ = rz_to_action_angle(R, z)
        np.testing.assert_allclose(I2, I, rtol=1e-8)
        d = np.angle(np.exp(1j * (phi2 - phi)))
        assert np.abs(d).max() < 1e-8

    def test_forward_closed_form(self, chart):
        R, z = action_angle_to_rz(0.04, 1.3)
        Rc, zc = chart.to_rz(0.04, 1.3)
        assert (R, z) == pytest.approx((float(Rc), float(zc)), abs=1e-8)

    def test_json(self, chart, tmp_path):
        chart.dump(tmp_path / "c.json")
        back = ActionChart.load(tmp_path / "c.json")
        np.testing.assert_allclose(back.to_rz(0.03, 2.0), chart.to_rz(0.03, 2.0), rtol=0, atol=1e-15)


class TestAssumption1:
    def test_grid(self, chart):
        spec = HillFlowSpec.from_epsilon(0.01)
        worst = 0.0
        for I in np.linspace(0.005, 0.085, 10):
            for phi1 in np.linspace(0, TWO_PI, 10, endpoint=False):
                r = verify_assumption1(spec, I, phi1, chart)
                worst = max(worst, r.residual_I, r.residual_phi1)
        assert worst < 1e-8

    def test_zero_swirl_rejected(self):
        with pytest.raises(ValueError):
            verify_assumption1(HillFlowSpec(1.0), 0.03, 1.0, omega2=0.0)

    def test_shift_invariance(self):
        spec = HillFlowSpec.from_epsilon(0.05)
        a = verify_assumption1(spec, 0.03, 1.0)
        b = verify_assumption1(spec, 0.03, 1.0, phi2_shift=0.37)
        assert abs(a.residual_I - b.residual_I) < 1e-12
        assert abs(a.residual_phi1 - b.residual_phi1) < 1e-12
        # the integrand itself is not trivially zero
        assert a.scale_I > 1e-4 and a.scale_phi1 > 1e-4
