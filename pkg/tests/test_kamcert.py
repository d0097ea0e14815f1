import math

import mpmath
import numpy as np
import pytest

from torus_sleuth.errors import Inadmissible, ScheduleMissing
from torus_sleuth.kamcert import (FiniteInputs, InfiniteInputs, certify_finite, certify_infinite,
                                  drift_accumulate, finite_closed_form, finite_step_prediction, handoff,
                                  largest_d0, sensitivity)


def mp_finite_log_d(inp, n_steps):
    """High-precision oracle for the finite recurrence in log space."""
    with mpmath.workdps(60):
        ld0 = mpmath.log(mpmath.mpf(inp.d0))
        le = ld0 / 2
        out = [ld0]
        for n in range(n_steps):
            out.append(-inp.chi * mpmath.log(inp.r0) + (n + 1) * mpmath.log(inp.c7)
                       + mpmath.mpf(6) / 5 * out[-1] - 2 * mpmath.mpf(inp.gamma1) * le)
        return out


class TestFinite:
    def test_default_passes(self):
        sched = certify_finite(FiniteInputs())
        assert sched.certificate.verdict == "PASS"
        assert sched.log_d[6] < math.log(1e-51)
        assert sched.log_d[6] < 1.5 * math.log(1e-34)

    def test_log_space_accuracy(self):
        inp = FiniteInputs()
        ref = mp_finite_log_d(inp, 6)
        sched = certify_finite(inp)
        for a, b in zip(sched.log_d, ref):
            assert abs(a - float(b)) <= 1e-10 * abs(float(b))

    def test_e_recurrence_identity(self):
        sched = certify_finite(FiniteInputs())
        le = sched.log_e
        np.testing.assert_allclose(le[1:], 1.2 * le[:-1], rtol=1e-12)

    def test_closed_form_matches_recursion(self):
        inp = FiniteInputs()
        sched = certify_finite(inp)
        for n in range(6):
            assert finite_closed_form(inp, n) == pytest.approx(sched.log_d[n + 1], rel=1e-12)

    def test_step_prediction(self):
        inp = FiniteInputs()
        sched = certify_finite(inp)
        d1 = finite_step_prediction(inp.d0, inp)
        assert math.log(d1) == pytest.approx(sched.log_d[1], rel=1e-12)

    def test_inadmissible(self):
        with pytest.raises(Inadmissible):
            certify_finite(FiniteInputs(d0=1e-10))

    def test_verdict_monotone_in_d0(self):
        verdicts = []
        for ld in np.linspace(math.log(1e-300), math.log(1e-20), 40):
            try:
                verdicts.append(certify_finite(FiniteInputs(d0=None, log_d0=ld)).certificate.passed)
            except Inadmissible:
                verdicts.append(False)
        first_fail = verdicts.index(False)
        assert not any(verdicts[first_fail:])
        assert first_fail > 0

    def test_largest_d0_is_the_admissibility_edge(self):
        ld = largest_d0(certify_finite, lambda l: FiniteInputs(d0=None, log_d0=l),
                        math.log(1e-34), math.log(1e-2), tol=1e-9)
        assert certify_finite(FiniteInputs(d0=None, log_d0=ld)).certificate.passed
        with pytest.raises(Inadmissible):
            certify_finite(FiniteInputs(d0=None, log_d0=ld * (1 - 1e-6)))

    def test_sensitivity(self):
        cert = certify_finite(FiniteInputs()).certificate
        a1_max = sensitivity(cert, "a1")
        assert a1_max > 1.0
        assert certify_finite(FiniteInputs(a1=0.99 * a1_max)).certificate.passed
        assert not certify_finite(FiniteInputs(a1=1.01 * a1_max)).certificate.passed
        assert sensitivity(cert, "c7") is None

    def test_certificate_json(self):
        d = certify_finite(FiniteInputs()).certificate.to_json_dict()
        assert d["verdict"] == "PASS" and d["log_scale"] == "natural"
        assert len(d["log_d"]) == 7


class TestInfinite:
    def test_schedule_checks(self):
        sched = certify_infinite(InfiniteInputs(), n_steps=30)
        checks = sched.certificate.checks
        assert checks["admissible"].passed
        assert np.all(np.diff(sched.log_d) < 0)
        assert all(checks[f"s_ratio<1/3[{n}]"].passed for n in range(30))
        assert all(checks[f"e_decreasing[{n}]"].passed for n in range(30))

    def test_default_verdict_from_coefficient_bounds(self):
        # the 2^(chi j) growth of the displayed coefficients outpaces c7^(1.5 j)
        cert = certify_infinite(InfiniteInputs()).certificate
        assert cert.verdict == "FAIL"
        failing = {k.split("[")[0] for k, c in cert.checks.items() if not c.passed}
        assert failing == {"H_coefficient<1", "PhiPsi_coefficient<1"}

    def test_admissibility_gates(self):
        with pytest.raises(Inadmissible):
            certify_infinite(InfiniteInputs(gamma2=0.2))
        with pytest.raises(Inadmissible):
            certify_infinite(InfiniteInputs(d0=1e-100))

    def test_e_recurrence_identity(self):
        le = certify_infinite(InfiniteInputs()).log_e
        np.testing.assert_allclose(le[1:], 1.125 * le[:-1], rtol=1e-12)

    def test_K_halving(self):
        sched = certify_infinite(InfiniteInputs(K0=0.3), n_steps=12)
        assert all(sched.K[n] == 0.3 / 2 ** n for n in range(13))

    def test_radius_limit(self):
        sched = certify_infinite(InfiniteInputs(), n_steps=30)
        assert sched.r[0] == 0.25 and sched.r[-1] == pytest.approx(0.125, rel=1e-8)


class TestHandoff:
    def test_default_finite_output_is_too_large(self):
        h = handoff(certify_finite(FiniteInputs()), InfiniteInputs())
        assert not h.given.passed and not h.best.passed

    def test_smaller_start_hands_over(self):
        h = handoff(certify_finite(FiniteInputs(d0=1e-60)), InfiniteInputs())
        assert h.given.passed
        certify_infinite(InfiniteInputs(d0=None, log_d0=h.log_d0))


class TestDriftLedger:
    def schedule(self):
        return certify_infinite(InfiniteInputs(), n_steps=12)

    def test_zero_averages(self):
        led = drift_accumulate(self.schedule(), 1e-70, np.zeros(12), np.zeros(12), 0.5)
        assert led.g_star == 0.0
        assert led.verdict == "PASS"

    def test_term_bound(self):
        sched = self.schedule()
        d = np.exp(sched.log_d[:12])
        led = drift_accumulate(sched, 1e-70, d, d, 0.5)
        assert np.all(np.abs(led.g) <= led.bound_g)

    def test_cauchy_tail(self):
        sched = self.schedule()
        d = np.exp(sched.log_d[:12])
        led = drift_accumulate(sched, 1e-70, d, d, 0.5)
        for J in range(11):
            tail = abs(led.g_star - led.partial[J])
            assert tail <= 4 * d[J + 1]

    def test_missing_schedule(self):
        with pytest.raises(ScheduleMissing):
            drift_accumulate(None, 1e-2, [0.0], [0.0], 0.5)
