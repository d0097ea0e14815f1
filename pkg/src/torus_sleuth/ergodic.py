"""
Harmonic time averages along stroboscopic orbits, single-linkage
clustering into an approximate ergodic partition, and a nearest-IC
raster of the theta = 0 slice.
"""
from __future__ import annotations

import colorsys
import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree

from .core import DEFAULT_TOLERANCES, TWO_PI
from .errors import OutOfDomain, OutsideSeparatrix, RankDeficient, TooShort

__all__ = [
    "HarmonicBasis",
    "ErgodicVector",
    "PartitionLabeling",
    "Raster",
    "harmonic_average",
    "cluster_partition",
    "slice_raster",
    "write_averages_csv",
    "PartitionRun",
    "run_partition",
    "sample_ics",
]

NORM = TWO_PI ** -1.5


@dataclass(frozen=True)
class HarmonicBasis:
    """
    ``f_k(s) = (2pi)^(-3/2) exp(2 pi i <T(s), k>)`` for ``k`` in
    ``[0, orders)``, with ``T`` the affine map of ``domain`` onto the unit
    cube.

    ``coordinates`` says how orbit states enter: ``"R"`` replaces the
    first column r of a Hill state by ``R = r^2/2``, ``"r"`` and ``"raw"``
    use the columns as they are.
    """

    orders: tuple = (8, 8, 8)
    domain: tuple = ((0.0, 0.5), (-1.0, 1.0), (0.0, TWO_PI))
    coordinates: str = "R"

    def __post_init__(self):
        if self.coordinates not in ("R", "r", "raw"):
            raise ValueError("coordinates must be 'R', 'r' or 'raw'")
        if len(self.orders) != 3 or len(self.domain) != 3:
            raise ValueError("three dimensions expected")

    @property
    def size(self):
        return int(np.prod(self.orders))

    @property
    def lo(self):
        return np.array([d[0] for d in self.domain], dtype=float)

    @property
    def width(self):
        return np.array([d[1] - d[0] for d in self.domain], dtype=float)

    def k_vectors(self):
        """All multi-indices in C order, matching the flattened averages."""
        g = np.meshgrid(*(np.arange(n) for n in self.orders), indexing="ij")
        return np.column_stack([v.ravel() for v in g])

    def coords(self, states):
        s = np.array(states, dtype=float).reshape(-1, 3)
        if self.coordinates == "R":
            s[:, 0] = 0.5 * s[:, 0] ** 2
        return s

    def rescale(self, states):
        """Unit-cube coordinates (clipped) and the per-state out-of-domain flag."""
        u = (self.coords(states) - self.lo) / self.width
        outside = np.any((u < 0.0) | (u > 1.0), axis=1)
        return np.clip(u, 0.0, 1.0), outside

    def evaluate(self, states):
        """All basis functions at the given states, shape (n, size)."""
        u, _ = self.rescale(states)
        e = [np.exp(2j * math.pi * np.outer(u[:, d], np.arange(n))) for d, n in enumerate(self.orders)]
        return NORM * np.einsum("na,nb,nc->nabc", *e).reshape(u.shape[0], -1)


@dataclass
class ErgodicVector:
    values: np.ndarray       # complex, (size,)
    n: int
    convergence: np.ndarray  # |first-half mean - second-half mean|
    clipped_fraction: float

    @property
    def convergence_norm(self):
        return float(np.linalg.norm(self.convergence))

    def as_real(self):
        return np.concatenate([self.values.real, self.values.imag])


def _mean_harmonics(u, orders):
    """Mean of the tensor-product harmonics over rows of ``u`` (separable)."""
    e1 = np.exp(2j * math.pi * np.outer(u[:, 0], np.arange(orders[0])))
    e2 = np.exp(2j * math.pi * np.outer(u[:, 1], np.arange(orders[1])))
    e3 = np.exp(2j * math.pi * np.outer(u[:, 2], np.arange(orders[2])))
    e12 = (e1[:, :, None] * e2[:, None, :]).reshape(u.shape[0], -1)
    return NORM * (e12.T @ e3).ravel() / u.shape[0]


def harmonic_average(orbit, basis: HarmonicBasis, max_outside=0.1):
    """
    Time averages of every basis function along an orbit, plus the
    half-orbit discrepancy as a convergence estimate.

    States outside the basis domain are clipped onto it; more than
    ``max_outside`` of them raises :class:`OutOfDomain`.
    """
    states = orbit.states if hasattr(orbit, "states") else np.asarray(orbit)
    states = np.asarray(states, dtype=float)
    states = states[np.all(np.isfinite(states), axis=1)]
    n = states.shape[0]
    if n < 100:
        raise TooShort(f"need at least 100 states, got {n}")
    u, outside = basis.rescale(states)
    frac = float(outside.mean())
    if frac > max_outside:
        raise OutOfDomain(f"{frac:.1%} of states fall outside the basis domain")
    h = n // 2
    first = _mean_harmonics(u[:h], basis.orders)
    second = _mean_harmonics(u[h:2 * h], basis.orders)
    full = _mean_harmonics(u, basis.orders)
    return ErgodicVector(full, n, np.abs(first - second), frac)


@dataclass
class PartitionLabeling:
    labels: np.ndarray
    n_clusters: int
    threshold: float

    def groups(self):
        """The partition as a set of frozensets of IC indices."""
        return {frozenset(np.flatnonzero(self.labels == k).tolist()) for k in range(self.n_clusters)}


def _relabel(raw):
    """Contiguous labels in order of first appearance."""
    mapping = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, v in enumerate(raw):
        out[i] = mapping.setdefault(int(v), len(mapping))
    return out


def cluster_partition(vectors, threshold=None, factor=5.0):
    """
    Single-linkage clustering of the average vectors with a Euclidean
    distance threshold (default ``factor`` times the median convergence
    norm).
    """
    vectors = list(vectors)
    if len(vectors) < 2:
        raise ValueError("need at least two vectors")
    X = np.array([v.as_real() for v in vectors])
    if threshold is None:
        threshold = factor * float(np.median([v.convergence_norm for v in vectors]))
    if threshold <= 0.0:
        # every orbit converged exactly: only identical vectors share a cluster
        threshold = np.finfo(float).tiny
    Z = linkage(X, method="single", metric="euclidean")
    raw = fcluster(Z, t=threshold, criterion="distance")
    labels = _relabel(raw)
    return PartitionLabeling(labels, int(labels.max()) + 1, float(threshold))


@dataclass
class Raster:
    labels: np.ndarray   # (ny, nx), row 0 at the top (largest z)
    r_edges: tuple
    z_edges: tuple

    def rgb(self, n_colors=None):
        n = int(self.labels.max()) + 1 if n_colors is None else n_colors
        pal = _palette(n)
        return pal[self.labels]

    def write_ppm(self, path):
        img = self.rgb().astype(np.uint8)
        h, w, _ = img.shape
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())


def _palette(n):
    """Deterministic, well-spread colours (golden-ratio hue steps)."""
    cols = []
    for i in range(max(n, 1)):
        h = (i * 0.618033988749895) % 1.0
        v = 0.95 if i % 2 == 0 else 0.7
        cols.append([round(255 * c) for c in colorsys.hsv_to_rgb(h, 0.75, v)])
    return np.array(cols, dtype=np.uint8)


def slice_raster(labels, ics, resolution=(200, 200)):
    """
    Nearest-IC label on an (r, z) pixel grid over the IC bounding box.

    ``labels`` is a :class:`PartitionLabeling` or a label array; ``ics``
    are (r, z[, theta]) rows.
    """
    lab = labels.labels if isinstance(labels, PartitionLabeling) else np.asarray(labels)
    ics = np.asarray(ics, dtype=float)
    pts = ics[:, :2]
    nx, ny = resolution
    r0, r1 = pts[:, 0].min(), pts[:, 0].max()
    z0, z1 = pts[:, 1].min(), pts[:, 1].max()
    rc = r0 + (np.arange(nx) + 0.5) * (r1 - r0) / nx
    zc = z1 - (np.arange(ny) + 0.5) * (z1 - z0) / ny
    R, Zg = np.meshgrid(rc, zc)
    _, idx = cKDTree(pts).query(np.column_stack([R.ravel(), Zg.ravel()]))
    return Raster(lab[idx].reshape(ny, nx), (float(r0), float(r1)), (float(z0), float(z1)))


def write_labels_csv(path, ics, labels):
    lab = labels.labels if isinstance(labels, PartitionLabeling) else np.asarray(labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ic_r", "ic_z", "label"])
        for (r, z), k in zip(np.asarray(ics)[:, :2], lab):
            w.writerow([repr(float(r)), repr(float(z)), int(k)])


def write_averages_csv(path, vectors, basis: HarmonicBasis):
    ks = basis.k_vectors()
    head = ["ic"]
    for k in ks:
        tag = "".join(str(int(v)) for v in k)
        head += [f"re_{tag}", f"im_{tag}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for i, v in enumerate(vectors):
            row = [i]
            for c in v.values:
                row += [repr(float(c.real)), repr(float(c.imag))]
            w.writerow(row)


# --------------------------------------------------------------------------
# the full pipeline
# --------------------------------------------------------------------------
def sample_ics(rng, n, r_range=(0.2, 0.3), z_range=(-0.1, 0.1), first="r"):
    """
    Uniform initial conditions on the theta = 0 plane. With ``first="R"``
    the first range is read as ``R = r^2/2`` and converted to r.
    """
    a = rng.uniform(*r_range, n)
    z = rng.uniform(*z_range, n)
    r = np.sqrt(2.0 * a) if first == "R" else a
    return np.column_stack([r, z, np.zeros(n)])


@dataclass
class PartitionRun:
    epsilon: float
    ics: np.ndarray
    vectors: list
    labeling: PartitionLabeling
    torus_detected: np.ndarray
    status: np.ndarray
    timings: dict = field(default_factory=dict)

    @property
    def torus_fraction(self):
        return float(np.mean(self.torus_detected))


def run_partition(spec, ics, n_sections, basis=None, tol=None, fit_orders=(3, 16),
                  threshold=None, factor=5.0):
    """
    Integrate every IC, average the harmonics, cluster, and run the torus
    fit on each orbit in (theta, phi1, I) coordinates. Action variations
    below the integration tolerance are not resolved, so the fit threshold
    is floored there.

    Orbits that fail to integrate, leave the separatrix or give a
    rank-deficient fit count as not detected. ICs whose orbits cannot be
    averaged get singleton labels after the clustering.
    """
    from .actionangle import section_orbit_in_action_angle
    from .dynamics import Orbit, fit_invariant_torus, poincare_ensemble

    basis = HarmonicBasis() if basis is None else basis
    noise = DEFAULT_TOLERANCES.integrator_tol if tol is None else float(tol)
    t0 = time.perf_counter()
    states, wind, status = poincare_ensemble(spec, ics, n_sections, tol)
    t1 = time.perf_counter()
    vectors, ok_idx = [], []
    detected = np.zeros(len(ics), dtype=bool)
    ts = spec.period * np.arange(n_sections + 1)
    for i in range(len(ics)):
        good = np.all(np.isfinite(states[i]), axis=1)
        try:
            vectors.append(harmonic_average(states[i][good], basis))
            ok_idx.append(i)
        except (TooShort, OutOfDomain):
            pass
        if status[i] != 0:
            continue
        orb = Orbit(ts, states[i], np.column_stack([np.zeros(n_sections + 1, np.int64), wind[i]]),
                    "section")
        try:
            tg = fit_invariant_torus(section_orbit_in_action_angle(orb), fit_orders, noise=noise)
            detected[i] = tg.detected
        except (RankDeficient, OutsideSeparatrix, TooShort):
            pass
    t2 = time.perf_counter()
    labels = np.full(len(ics), -1, dtype=np.int64)
    if len(vectors) >= 2:
        lab = cluster_partition(vectors, threshold=threshold, factor=factor)
        labels[ok_idx] = lab.labels
        thr = lab.threshold
    else:
        thr = 0.0 if threshold is None else threshold
        labels[ok_idx] = 0
    nxt = labels.max() + 1
    for i in np.flatnonzero(labels < 0):
        labels[i] = nxt
        nxt += 1
    labels = _relabel(labels)
    t3 = time.perf_counter()
    labeling = PartitionLabeling(labels, int(labels.max()) + 1, float(thr))
    timings = {"integrate": t1 - t0, "average_and_fit": t2 - t1, "cluster": t3 - t2}
    return PartitionRun(spec.epsilon, np.asarray(ics), vectors, labeling, detected,
                        np.asarray(status), timings)
