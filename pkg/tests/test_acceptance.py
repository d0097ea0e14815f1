"""
The ten acceptance criteria. Each test prints one PASS/FAIL line and then
asserts it; the lines are repeated in the terminal summary.
"""
import json
import math
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest
import sympy as sp

from torus_sleuth.actionangle import ActionChart, frequencies, verify_assumption1
from torus_sleuth.core import AAAMapSpec, AngleActionState, Drift, HillFlowSpec, TrigField
from torus_sleuth.diophantine import DiophantineParams, excluded_zones_first, measure_S
from torus_sleuth.dynamics import (divergence_diagnostic, estimate_rotation_numbers, hill_hamiltonian,
                                   integrate_flow, iterate_map)
from torus_sleuth.errors import Inadmissible
from torus_sleuth.ergodic import HarmonicBasis, run_partition, sample_ics
from torus_sleuth.homological import conjugate_and_measure, sample_lattice, solve_first_step
from torus_sleuth.kamcert import FiniteInputs, InfiniteInputs, certify_finite, certify_infinite

TWO_PI = 2 * math.pi


def averaging_spec(eps):
    # coefficient decay 2^-|k| on the desk action window
    rng = np.random.default_rng(7)
    kw = dict(Kx=6, Ky=6, M=128, amplitude=0.25, decay=0.5)
    X = TrigField.random(rng, 0.64, 0.94, **kw)
    Y = TrigField.random(rng, 0.64, 0.94, zero_x_average=True, **kw)
    Z = TrigField.random(rng, 0.64, 0.94, zero_x_average=True, **kw)
    return AAAMapSpec(eps, Drift.quadratic(0.5), X, Y, Z)


def exact_union_length(intervals, a, b):
    """Measure of a union of intervals clipped to [a, b], in rational arithmetic."""
    a, b = Fraction(a), Fraction(b)
    iv = sorted((max(Fraction(lo), a), min(Fraction(hi), b)) for lo, hi in intervals)
    total, cur_lo, cur_hi = Fraction(0), None, None
    for lo, hi in iv:
        if hi <= lo:
            continue
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


@pytest.mark.parametrize("eps", [1e-2, 1e-3])
def test_01_averaging_bound(eps, verdict):
    spec = averaging_spec(eps)
    t0 = time.perf_counter()
    tr = solve_first_step(spec, DiophantineParams(K_bar=1e-3))
    rep = conjugate_and_measure(spec, tr, sample_lattice(spec, tr, 64, 64, 16))
    dt = time.perf_counter() - t0
    ok = rep.sup_total < eps ** 2 and dt < 120
    verdict(1, ok, f"eps={eps:g}: |X|+|Y|+|Z| = {rep.sup_total:.3e} vs eps^2 = {eps ** 2:.0e}, "
                   f"N={tr.N}, {dt:.1f} s")
    assert ok


def test_02_finite_certificate(verdict):
    inp = FiniteInputs()
    t0 = time.perf_counter()
    sched = certify_finite(inp)
    dt = time.perf_counter() - t0
    with mpmath.workdps(60):
        ref = [mpmath.log(mpmath.mpf(inp.d0))]
        le = ref[0] / 2
        for n in range(6):
            ref.append(-inp.chi * mpmath.log(inp.r0) + (n + 1) * mpmath.log(inp.c7)
                       + mpmath.mpf(6) / 5 * ref[-1] - 2 * mpmath.mpf(inp.gamma1) * le)
    log_err = max(abs(float((a - b) / b)) for a, b in zip(sched.log_d, ref))
    e_err = float(np.max(np.abs(sched.log_e[1:] - 1.2 * sched.log_e[:-1]) / np.abs(1.2 * sched.log_e[:-1])))
    ok = (sched.log_d[6] < 1.5 * math.log(inp.d0) and sched.certificate.passed
          and log_err < 1e-10 and e_err < 1e-12 and dt < 1.0)
    verdict(2, ok, f"log d6 = {sched.log_d[6]:.3f} < {1.5 * math.log(inp.d0):.3f}, "
                   f"log rel err {log_err:.1e}, e-identity {e_err:.1e}, {dt * 1e3:.1f} ms")
    assert ok


def test_03_infinite_certificate(verdict):
    t0 = time.perf_counter()
    sched = certify_infinite(InfiniteInputs(), n_steps=30)
    gates = []
    for bad in (InfiniteInputs(gamma2=0.2), InfiniteInputs(d0=1e-100)):
        try:
            certify_infinite(bad)
            gates.append(False)
        except Inadmissible:
            gates.append(True)
    dt = time.perf_counter() - t0
    ratio = np.exp(np.diff(sched.log_s))
    ok = (sched.certificate.checks["admissible"].passed and all(gates)
          and np.all(np.diff(sched.log_d) < 0) and np.all(ratio < 1 / 3) and dt < 1.0)
    verdict(3, ok, f"admissibility gates {gates}, d_n decreasing over 30 steps, "
                   f"max s ratio {ratio.max():.2e}, {dt * 1e3:.1f} ms "
                   f"(overall verdict {sched.certificate.verdict})")
    assert ok


@pytest.mark.parametrize("K_bar", [1e-2, 1e-3])
def test_04_first_step_resonance_measure(K_bar, verdict):
    tr = solve_first_step(averaging_spec(1e-2), DiophantineParams(K_bar=K_bar))
    results = []
    for a, b in ((0.64, 0.94), (0.5, 6.0)):
        zones = excluded_zones_first(a, b, K_bar, 3.0, tr.N)
        exact = exact_union_length(zones.intervals, a, b)
        bound = Fraction(b - a) * 2 * Fraction(K_bar)
        results.append((a, b, float(exact), exact <= bound, abs(float(exact) - zones.measure) < 1e-15))
    ok = all(r[3] and r[4] for r in results)
    verdict(4, ok, f"K_bar={K_bar:g}, N={tr.N}: " + "; ".join(
        f"[{a},{b}] excluded {m:.3e} <= {(b - a) * 2 * K_bar:.3e}" for a, b, m, *_ in results))
    assert ok


def test_05_cantor_measure(verdict):
    m = measure_S(Drift.quadratic(0.5), 1e-2, DiophantineParams(kmax=30), 1.0, 2.0,
                  mc_samples=10_000, rng=np.random.default_rng(20240611))
    ok = m.holds and m.mc_holds and m.mc_agrees
    verdict(5, ok, f"interval kept {m.kept_measure:.6f}, MC kept {m.mc_kept:.6f} +- {m.mc_sigma:.1e}, "
                   f"bound {m.bound:.4f}")
    assert ok


def test_06_assumption1(verdict):
    spec = HillFlowSpec.from_epsilon(0.01)
    chart = ActionChart.build()
    worst_I = worst_phi = 0.0
    for I in np.linspace(0.005, 0.085, 10):
        for phi1 in np.linspace(0.0, TWO_PI, 10, endpoint=False):
            r = verify_assumption1(spec, I, phi1, chart)
            worst_I = max(worst_I, r.residual_I)
            worst_phi = max(worst_phi, r.residual_phi1)
    ok = worst_I < 1e-8 and worst_phi < 1e-8
    verdict(6, ok, f"max |int f_I| = {worst_I:.1e}, max |int f_phi1| = {worst_phi:.1e} on 10x10 grid")
    assert ok


def test_07_action_angle_limits(verdict):
    w1, w2 = frequencies(1e-7)
    spec = HillFlowSpec(10.0, forcing=False)
    o = integrate_flow(spec, (0.3, 0.2, 0.0), (0.0, 100.0), n_out=1001)
    H = hill_hamiltonian(o.states[:, 0], o.states[:, 1])
    drift = float(np.abs(H - H[0]).max())
    ok = abs(w1 - math.sqrt(2)) < 1e-3 and abs(w2 - 4.0) < 1e-3 and drift < 1e-9
    verdict(7, ok, f"omega(I=1e-7) = ({w1:.6f}, {w2:.6f}), H drift over t=100 {drift:.1e}")
    assert ok


def test_08_integrable_invariants(verdict):
    z0 = 0.7
    flat = AAAMapSpec.unperturbed(0.0, Drift.quadratic(), 0.0, 1.0, M=8)
    o = iterate_map(flat, AngleActionState(0.1, 0.2, z0), 10_000)
    rot0 = estimate_rotation_numbers(o)
    twist = AAAMapSpec.unperturbed(0.05, Drift.quadratic(), 0.0, 1.0, M=8)
    rot1 = estimate_rotation_numbers(iterate_map(twist, AngleActionState(0.1, 0.2, z0), 10_000))
    g = 0.05 * z0 ** 2
    err = max(abs(rot0.rot_x - z0), abs(rot0.rot_y), abs(rot1.rot_x - z0), abs(rot1.rot_y - g))
    ok = bool(np.all(o.z == z0)) and err < 1e-13
    verdict(8, ok, f"z constant over 1e4 iterates: {bool(np.all(o.z == z0))}, "
                   f"rotation-number error {err:.1e}")
    assert ok


@pytest.mark.slow
def test_09_ergodic_partition(verdict, tmp_path):
    ics = sample_ics(np.random.default_rng(20240611), 700)
    basis = HarmonicBasis()
    t0 = time.perf_counter()
    runs = {eps: run_partition(HillFlowSpec.from_epsilon(eps), ics, 10_000, basis, tol=1e-9)
            for eps in (0.01, 0.05)}
    dt = time.perf_counter() - t0
    f1, f5 = runs[0.01].torus_fraction, runs[0.05].torus_fraction
    summary = {str(e): {"torus_fraction": r.torus_fraction, "n_clusters": r.labeling.n_clusters,
                        "timings_s": r.timings} for e, r in runs.items()}
    (tmp_path / "partition_summary.json").write_text(json.dumps(summary, indent=2))
    ok = basis.size == 512 and f1 > f5 and dt < 1800
    verdict(9, ok, f"torus fraction {f1:.3f} (eps=0.01) vs {f5:.3f} (eps=0.05), clusters "
                   f"{runs[0.01].labeling.n_clusters}/{runs[0.05].labeling.n_clusters}, "
                   f"700 ICs x 1e4 sections, {dt / 60:.1f} min")
    assert ok


def test_10_divergence(verdict, rng, tmp_path):
    r, z, th, s, c = sp.symbols("r z theta s c", real=True)
    F = (r * z + sp.sqrt(2 * r) * sp.sin(th) * s,
         1 - 2 * r ** 2 - z ** 2 - z * sp.sqrt(1 / (2 * r)) * sp.sin(th) * s,
         2 * c / r ** 2 + sp.sqrt(2 * r) * sp.cos(th) * s)
    div = sp.simplify((sp.diff(r * F[0], r) + sp.diff(r * F[1], z) + sp.diff(r * F[2], th)) / r)
    oracle = float(div.subs({r: sp.Rational(1, 4), th: sp.pi / 2, s: 1}))

    free = HillFlowSpec(7.0, forcing=False)
    states = np.column_stack([rng.uniform(0.05, 1.0, 1000), rng.uniform(-1, 1, 1000),
                              rng.uniform(0, TWO_PI, 1000)])
    unforced = max(abs(divergence_diagnostic(free, st, 0.0)) for st in states)
    forced = HillFlowSpec.from_epsilon(0.01)
    t = (math.pi / 2) / forced.Omega
    value = divergence_diagnostic(forced, (0.25, 0.0, math.pi / 2), t)
    report = {"unforced_max_abs": unforced, "forced_at_r0.25_theta_pi/2_sin1": value,
              "symbolic": str(div), "symbolic_value": oracle}
    (tmp_path / "divergence.json").write_text(json.dumps(report, indent=2))
    ok = unforced < 1e-8 and abs(value - oracle) < 1e-6 and abs(oracle - 1.5 * math.sqrt(2)) < 1e-12
    verdict(10, ok, f"unforced max |div| {unforced:.1e} at 1e3 states; forced {value:.7f} vs "
                    f"symbolic {oracle:.7f}")
    assert ok
