import math

import numpy as np
import pytest

from torus_sleuth.actionangle import action_angle_to_rz
from torus_sleuth.core import AAAMapSpec, AngleActionState, Drift, HillFlowSpec, TrigField
from torus_sleuth.dynamics import fit_invariant_torus, iterate_map
from torus_sleuth.errors import OutOfDomain, TooShort
from torus_sleuth.ergodic import (NORM, ErgodicVector, HarmonicBasis, PartitionLabeling, cluster_partition,
                                  harmonic_average, run_partition, sample_ics, slice_raster,
                                  write_averages_csv, write_labels_csv)

GOLD = (math.sqrt(5) - 1) / 2
UNIT = HarmonicBasis(orders=(8, 1, 1), domain=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)), coordinates="raw")


def hill_like_orbit(rng, n):
    return np.column_stack([rng.uniform(0.1, 0.9, n), rng.uniform(-0.5, 0.5, n),
                            rng.uniform(0, 2 * math.pi, n)])


def blob(rng, centre, n, spread, conv):
    out = []
    for _ in range(n):
        v = centre + spread * (rng.standard_normal(centre.size) + 1j * rng.standard_normal(centre.size))
        out.append(ErgodicVector(v, 1000, np.full(centre.size, conv / math.sqrt(centre.size)), 0.0))
    return out


class TestHarmonicAverage:
    def test_constant_harmonic(self, rng):
        v = harmonic_average(hill_like_orbit(rng, 500), HarmonicBasis())
        assert v.values[0] == NORM
        assert NORM == pytest.approx(0.0634936, abs=1e-7)
        assert v.values.size == 512

    def test_bounded(self, rng):
        v = harmonic_average(hill_like_orbit(rng, 500), HarmonicBasis())
        assert np.all(np.abs(v.values) <= NORM + 1e-12)

    def test_fixed_point(self):
        b = HarmonicBasis()
        p = np.array([[0.6, 0.3, 1.0]])
        v = harmonic_average(np.repeat(p, 200, axis=0), b)
        np.testing.assert_array_equal(v.convergence, 0.0)
        np.testing.assert_allclose(v.values, b.evaluate(p)[0], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("N", [1_000, 10_000, 100_000])
    def test_weyl_sequence(self, N):
        n = np.arange(N)
        x = np.mod(n * GOLD, 1.0)
        v = harmonic_average(np.column_stack([x, np.zeros(N), np.zeros(N)]), UNIT)
        for k in range(1, 8):
            direct = NORM * np.exp(2j * math.pi * k * x).sum() / N
            assert v.values[k] == pytest.approx(direct, abs=1e-13)
            # geometric sum: |average| <= NORM / (N |sin(pi k alpha)|)
            assert abs(v.values[k]) <= NORM / (N * abs(math.sin(math.pi * k * GOLD))) + 1e-13

    def test_shift_invariance(self, rng):
        b = HarmonicBasis()
        orb = hill_like_orbit(rng, 2000)
        N, k = 1500, 7
        a = harmonic_average(orb[:N], b).values
        c = harmonic_average(orb[k:N + k], b).values
        assert np.abs(a - c).max() <= 2 * k * NORM / N

    def test_too_short(self, rng):
        with pytest.raises(TooShort):
            harmonic_average(hill_like_orbit(rng, 99), HarmonicBasis())

    def test_out_of_domain(self, rng):
        orb = hill_like_orbit(rng, 1000)
        orb[:150, 1] = 3.0
        with pytest.raises(OutOfDomain):
            harmonic_average(orb, HarmonicBasis())
        orb[:50, 1] = 0.0
        v = harmonic_average(orb, HarmonicBasis())
        assert v.clipped_fraction == pytest.approx(0.1)


class TestClustering:
    def test_identical(self, rng):
        v = harmonic_average(hill_like_orbit(rng, 300), HarmonicBasis())
        lab = cluster_partition([v] * 5)
        assert lab.n_clusters == 1

    def test_two_blobs(self, rng):
        conv = 1e-3
        c0 = np.zeros(64, complex)
        c1 = c0.copy()
        c1[3] = 10 * 5 * conv  # 10 tau_c with tau_c = 5 * median convergence
        vecs = blob(rng, c0, 10, 1e-6, conv) + blob(rng, c1, 7, 1e-6, conv)
        order = rng.permutation(len(vecs))
        lab = cluster_partition([vecs[i] for i in order])
        assert lab.threshold == pytest.approx(5 * conv)
        assert lab.n_clusters == 2
        truth = (order >= 10).astype(int)
        assert {frozenset(np.flatnonzero(truth == k)) for k in (0, 1)} == lab.groups()

    def test_permutation_only_renames(self, rng):
        vecs = []
        for c in range(4):
            centre = np.zeros(32, complex)
            centre[c] = 1.0
            vecs += blob(rng, centre, 6, 1e-4, 1e-3)
        base = cluster_partition(vecs)
        perm = rng.permutation(len(vecs))
        other = cluster_partition([vecs[i] for i in perm])
        mapped = {frozenset(int(perm[i]) for i in g) for g in other.groups()}
        assert mapped == base.groups()
        assert other.labels[0] == 0 and set(other.labels) == set(range(other.n_clusters))

    def test_needs_two(self, rng):
        with pytest.raises(ValueError):
            cluster_partition(blob(rng, np.zeros(4, complex), 1, 0.0, 1e-3))


class TestRaster:
    def test_uniform(self, rng):
        ics = sample_ics(rng, 50)
        r = slice_raster(np.zeros(50, dtype=int), ics, (20, 10))
        assert r.labels.shape == (10, 20) and np.all(r.labels == 0)
        assert np.unique(r.rgb().reshape(-1, 3), axis=0).shape[0] == 1

    def test_two_regions(self, rng):
        ics = sample_ics(rng, 400)
        labels = (ics[:, 1] > 0).astype(int)
        r = slice_raster(PartitionLabeling(labels, 2, 1.0), ics, (40, 40))
        assert np.all(r.labels[:15] == 1) and np.all(r.labels[-15:] == 0)

    def test_ppm_and_csv(self, rng, tmp_path):
        ics = sample_ics(rng, 30)
        labels = (ics[:, 0] > 0.25).astype(int)
        r = slice_raster(labels, ics, (12, 8))
        r.write_ppm(tmp_path / "p.ppm")
        raw = (tmp_path / "p.ppm").read_bytes()
        assert raw.startswith(b"P6\n12 8\n255\n") and len(raw) == len(b"P6\n12 8\n255\n") + 12 * 8 * 3
        write_labels_csv(tmp_path / "l.csv", ics, labels)
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == "ic_r,ic_z,label" and len(lines) == 31
        b = HarmonicBasis(orders=(2, 2, 2))
        write_averages_csv(tmp_path / "a.csv", [harmonic_average(hill_like_orbit(rng, 200), b)], b)
        head = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
        assert head[:3] == ["ic", "re_000", "im_000"] and len(head) == 1 + 2 * 8


def test_sample_ics_in_R():
    ics = sample_ics(np.random.default_rng(0), 1000, r_range=(0.02, 0.045), first="R")
    R = ics[:, 0] ** 2 / 2
    assert R.min() >= 0.02 and R.max() <= 0.045 and np.all(ics[:, 2] == 0)


def test_unforced_levels_cluster_by_hamiltonian():
    # 4 action levels x 5 phases; averages are level-set functions
    levels = [0.004, 0.008, 0.012, 0.016]
    ics = []
    for I in levels:
        R, z = action_angle_to_rz(I, np.linspace(0.3, 5.9, 5))
        ics += [[math.sqrt(2 * Ri), zi, 0.0] for Ri, zi in zip(R, z)]
    run = run_partition(HillFlowSpec(100.0, forcing=False), np.array(ics), 20000, tol=1e-9)
    assert abs(run.labeling.n_clusters - len(levels)) <= 0.1 * len(levels)
    assert run.labeling.groups() == {frozenset(range(5 * i, 5 * i + 5)) for i in range(4)}


@pytest.mark.parametrize("seed", [0, 1])
def test_regular_orbit_converges_like_one_over_n(seed):
    # Z = 0 keeps the orbit on z = z0; a strong drift makes the slow angle turn
    # often enough that N = 1e3 is already in the 1/N regime
    rng = np.random.default_rng(seed)
    X = TrigField.random(rng, 1.0, 2.0, 1, 1, 32, 0.05, 0.5)
    Y = TrigField.random(rng, 1.0, 2.0, 1, 1, 32, 0.05, 0.5, zero_x_average=True)
    spec = AAAMapSpec(1e-2, Drift.quadratic(10.0), X, Y, TrigField.zeros(1.0, 2.0, M=32))
    orbit = iterate_map(spec, AngleActionState(0.0, 0.0, 1.0 + GOLD), 100_000)
    assert fit_invariant_torus(orbit, (2, 2)).detected
    basis = HarmonicBasis(domain=((0.0, 2 * math.pi), (0.0, 2 * math.pi), (1.0, 2.0)), coordinates="raw")
    Ns = [1_000, 10_000, 100_000]
    disc = [harmonic_average(orbit.states[:N], basis).convergence_norm for N in Ns]
    slope = np.polyfit(np.log(Ns), np.log(disc), 1)[0]
    assert 0.8 <= -slope <= 1.2
