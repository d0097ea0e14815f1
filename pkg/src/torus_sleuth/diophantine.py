"""
Truncated non-resonance sets for the three normalisation steps.

Every excluded set is a finite union of open intervals computed in closed
form (first step) or by bracketed root finding on monotone branches
(the curve family of the third step). Endpoints are rounded outward by
one ulp, so a reported kept measure never overstates the true one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import TWO_PI
from .errors import TwistViolation

__all__ = [
    "DiophantineParams",
    "ResonanceSet",
    "OmegaCheck",
    "PairCheck",
    "CantorMeasure",
    "HalvingReport",
    "excluded_zones_first",
    "denominator_floor",
    "check_omega_second",
    "check_pair_third",
    "c3_constant",
    "third_step_zones",
    "measure_S",
    "measure_halving",
    "monte_carlo_kept",
]

_XTOL = 1e-15


@dataclass(frozen=True)
class DiophantineParams:
    """
    Diophantine constants for the three steps.

    ``K_bar, mu_bar, N`` drive the averaging step, ``K_hat, mu_hat,
    gamma1`` the second step and ``K, mu, gamma2, K0`` the infinite
    sequence (with ``K_n = K0 / 2**n``). ``kmax`` truncates the constraint
    families of steps 2 and 3. K values of exactly zero are accepted as
    the degenerate no-exclusion case.
    """

    K_bar: float = 1e-3
    mu_bar: float = 3.0
    N: int | None = None
    K_hat: float = 1e-3
    mu_hat: float = 3.0
    gamma1: float = 0.01
    K: float = 1e-3
    mu: float = 5.0
    gamma2: float = 0.01
    K0: float | None = None
    kmax: int = 30

    def __post_init__(self):
        if self.mu_bar < 3 or self.mu_hat < 3:
            raise ValueError("mu_bar and mu_hat must be >= 3")
        if self.mu < 5:
            raise ValueError("mu must be >= 5")
        if not 0.0 < self.gamma1 < 0.2:
            raise ValueError("gamma1 must lie in (0, 1/5)")
        if not 0.0 < self.gamma2 < 1.0:
            raise ValueError("gamma2 must lie in (0, 1)")
        for name in ("K_bar", "K_hat", "K"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.K0 is not None and self.K0 < 0:
            raise ValueError("K0 must be non-negative")
        if self.N is not None and self.N < 1:
            raise ValueError("N must be >= 1")
        if self.kmax < 1:
            raise ValueError("kmax must be >= 1")

    @property
    def K_start(self):
        return self.K if self.K0 is None else self.K0

    def K_n(self, n):
        """Halving schedule K_n = K0 / 2**n."""
        return math.ldexp(self.K_start, -int(n))

    def to_json_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _round_out(lo, hi):
    return np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf)


def _tag_json(tag):
    k, n = tag
    return (list(k) if isinstance(k, tuple) else int(k)), int(n)


@dataclass(eq=False)
class ResonanceSet:
    """
    Finite union of open excluded intervals inside ``[a, b]``.

    ``raw`` keeps every generating interval together with its ``(k, n)``
    tag; ``intervals`` is the sorted disjoint union used for measures and
    membership.
    """

    a: float
    b: float
    raw: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    tags: list = field(default_factory=list)
    intervals: np.ndarray = field(init=False)

    def __post_init__(self):
        self.a = float(self.a)
        self.b = float(self.b)
        if not self.b > self.a:
            raise ValueError("empty domain")
        raw = np.asarray(self.raw, dtype=float).reshape(-1, 2)
        if len(self.tags) != raw.shape[0]:
            raise ValueError("one tag per raw interval required")
        lo = np.clip(raw[:, 0], self.a, self.b)
        hi = np.clip(raw[:, 1], self.a, self.b)
        keep = hi > lo
        self.raw = np.column_stack([lo[keep], hi[keep]])
        self.tags = [t for t, k in zip(self.tags, keep) if k]
        self.intervals = self._merge(self.raw)

    @staticmethod
    def _merge(raw):
        if raw.shape[0] == 0:
            return np.empty((0, 2))
        order = np.lexsort((raw[:, 1], raw[:, 0]))
        merged = []
        cur_lo, cur_hi = raw[order[0]]
        for lo, hi in raw[order[1:]]:
            if lo <= cur_hi:
                cur_hi = max(cur_hi, hi)
            else:
                merged.append((cur_lo, cur_hi))
                cur_lo, cur_hi = lo, hi
        merged.append((cur_lo, cur_hi))
        return np.array(merged)

    @classmethod
    def empty(cls, a, b):
        return cls(a, b)

    @property
    def length(self):
        return self.b - self.a

    @property
    def measure(self):
        """Total excluded length (sum of disjoint lengths, compensated)."""
        return math.fsum((self.intervals[:, 1] - self.intervals[:, 0]).tolist())

    @property
    def kept_measure(self):
        return math.fsum([self.b, -self.a, -self.measure])

    def __len__(self):
        return self.intervals.shape[0]

    def complement(self):
        """Closed kept intervals, as an (m, 2) array."""
        edges = np.concatenate([[self.a], self.intervals.ravel(), [self.b]])
        out = edges.reshape(-1, 2)
        return out[out[:, 1] > out[:, 0]]

    def contains(self, z):
        """True where ``z`` lies strictly inside an excluded interval."""
        z = np.asarray(z, dtype=float)
        if len(self) == 0:
            return np.zeros(z.shape, dtype=bool)
        i = np.searchsorted(self.intervals[:, 0], z, side="left") - 1
        ok = i >= 0
        ic = np.clip(i, 0, None)
        return ok & (z > self.intervals[ic, 0]) & (z < self.intervals[ic, 1])

    def kept_mask(self, z):
        z = np.asarray(z, dtype=float)
        return (z >= self.a) & (z <= self.b) & ~self.contains(z)

    def union(self, other):
        if (self.a, self.b) != (other.a, other.b):
            raise ValueError("domains differ")
        return ResonanceSet(self.a, self.b, np.vstack([self.raw, other.raw]),
                            list(self.tags) + list(other.tags))

    def covers(self, other):
        """True if every excluded interval of ``other`` lies inside one of ours."""
        for lo, hi in other.intervals:
            i = np.searchsorted(self.intervals[:, 0], lo, side="right") - 1
            if i < 0 or self.intervals[i, 1] < hi:
                return False
        return True

    def to_json_dict(self):
        return {
            "a": self.a,
            "b": self.b,
            "intervals": [[float(lo), float(hi), *_tag_json(t)]
                          for (lo, hi), t in zip(self.raw, self.tags)],
            "n_disjoint": len(self),
            "excluded_measure": self.measure,
            "kept_measure": self.kept_measure,
        }

    @classmethod
    def from_json_dict(cls, d):
        raw = [(r[0], r[1]) for r in d["intervals"]]
        tags = [((tuple(r[2]) if isinstance(r[2], list) else r[2]), r[3]) for r in d["intervals"]]
        return cls(d["a"], d["b"], np.array(raw, dtype=float).reshape(-1, 2), tags)


# --------------------------------------------------------------------------
# first step: |k z + 2 pi n| >= K_bar |k|^-mu_bar
# --------------------------------------------------------------------------
def excluded_zones_first(a, b, K_bar, mu_bar, N):
    """
    Resonance zones of the averaging step on ``[a, b]``.

    For ``0 < k <= N`` and every ``n`` whose zone meets the domain the
    excluded interval is centred at ``-2 pi n / k`` with half-width
    ``K_bar k**(-mu_bar - 1)``. Negative ``k`` give the same sets.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    raw, tags = [], []
    if K_bar > 0:
        for k in range(1, int(N) + 1):
            hw = K_bar * k ** (-mu_bar - 1.0)
            n_lo = math.ceil(-k * (b + hw) / TWO_PI)
            n_hi = math.floor(-k * (a - hw) / TWO_PI)
            for n in range(n_lo, n_hi + 1):
                c = -TWO_PI * n / k
                lo, hi = _round_out(c - hw, c + hw)
                raw.append((lo, hi))
                tags.append((k, n))
    return ResonanceSet(a, b, np.array(raw, dtype=float).reshape(-1, 2), tags)


def denominator_floor(k, K_bar, mu_bar):
    """Lower bound (2/pi) K_bar |k|^-mu_bar on |1 - e^{ikz}| off the zones."""
    return (2.0 / math.pi) * K_bar * abs(k) ** (-mu_bar)


def _dist_2pi(v):
    """Distance from ``v`` to the lattice 2 pi Z, and the nearest n (v + 2 pi n ~ 0)."""
    v = np.asarray(v, dtype=float)
    n = -np.rint(v / TWO_PI)
    return np.abs(v + TWO_PI * n), n.astype(np.int64)


# --------------------------------------------------------------------------
# second step: |k omega + 2 pi n| >= eps^gamma1 K_hat |k|^-mu_hat
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class OmegaCheck:
    passed: bool
    margin: float
    worst_k: int
    worst_n: int
    kmax: int


def check_omega_second(omega, epsilon, params, kmax=None):
    """
    Scan ``0 < k <= kmax`` for the second-step inequality.

    ``margin`` is the minimum of ``|k omega + 2 pi n| - threshold`` over k
    and the nearest n; the check passes iff it is non-negative.
    """
    kmax = params.kmax if kmax is None else int(kmax)
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    k = np.arange(1, kmax + 1)
    dist, n = _dist_2pi(k * float(omega))
    thr = epsilon ** params.gamma1 * params.K_hat * k.astype(float) ** (-params.mu_hat)
    marg = dist - thr
    i = int(np.argmin(marg))
    return OmegaCheck(bool(marg[i] >= 0.0), float(marg[i]), int(k[i]), int(n[i]), kmax)


# --------------------------------------------------------------------------
# third step: the pair (omega, drift)
# --------------------------------------------------------------------------
def _pairs(kmax):
    """Half-plane representatives (k1, k2) != 0 with |k1| + |k2| <= kmax."""
    out = [(k1, k2)
           for k1 in range(0, kmax + 1)
           for k2 in range(-(kmax - k1), kmax - k1 + 1)
           if not (k1 == 0 and k2 <= 0)]
    return np.array(out, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class PairCheck:
    passed: bool
    margin_angle: float     # k1 != 0 branch
    margin_degenerate: float  # k1 == 0 branch
    worst_angle: tuple
    worst_degenerate: tuple
    kmax: int


def check_pair_third(omega, drift, epsilon, params, kmax=None, K=None):
    """
    Check both branches of the third-step condition for one frequency pair.

    ``drift`` is the full degenerate frequency (it already carries the
    factor epsilon). Thresholds are ``eps**gamma2 K |k|^-mu`` for
    ``k1 != 0`` and ``eps**(1+gamma2) K |k|^-mu`` for ``k1 == 0``, with
    ``|k| = |k1| + |k2|``.
    """
    kmax = params.kmax if kmax is None else int(kmax)
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    K = params.K if K is None else K
    kk = _pairs(kmax)
    norm = np.abs(kk).sum(axis=1).astype(float)
    dist, n = _dist_2pi(kk[:, 0] * float(omega) + kk[:, 1] * float(drift))
    base = K * norm ** (-params.mu)
    thr = np.where(kk[:, 0] != 0, epsilon ** params.gamma2, epsilon ** (1.0 + params.gamma2)) * base
    marg = dist - thr
    res = {}
    for name, sel in (("angle", kk[:, 0] != 0), ("degenerate", kk[:, 0] == 0)):
        idx = np.flatnonzero(sel)
        j = idx[np.argmin(marg[idx])]
        res[name] = (float(marg[j]), (int(kk[j, 0]), int(kk[j, 1]), int(n[j])))
    passed = res["angle"][0] >= 0.0 and res["degenerate"][0] >= 0.0
    return PairCheck(bool(passed), res["angle"][0], res["degenerate"][0],
                     res["angle"][1], res["degenerate"][1], kmax)


def c3_constant(mu, a8, kmax):
    """
    The Cantor-set measure constant ``(4 a8 / 2pi) sum_k |k|^{1-mu/2} (k1^2+k2^2)^{-1/4}``.

    Returns ``(truncated, tail)``: the sum over ``0 < |k| <= kmax`` and an
    upper bound on the rest (``inf`` when the lattice sum diverges, which
    happens for ``mu <= 5``).
    """
    r = np.arange(-kmax, kmax + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    l1 = np.abs(k1) + np.abs(k2)
    sel = (l1 > 0) & (l1 <= kmax)
    terms = l1[sel] ** (1.0 - mu / 2.0) * (k1[sel] ** 2 + k2[sel] ** 2) ** -0.25
    pref = 4.0 * a8 / TWO_PI
    trunc = pref * math.fsum(terms.tolist())
    # 4m lattice points on the shell |k| = m, each term <= 2^(1/4) m^(1/2 - mu/2)
    p = mu / 2.0 - 1.5
    if p <= 1.0:
        tail = math.inf
    else:
        tail = pref * 4.0 * 2.0 ** 0.25 * kmax ** (1.0 - p) / (p - 1.0)
    return trunc, tail


def _curve_check(curve, a, b, c1=None, n=1025):
    w = np.linspace(a, b, n)
    d2 = np.asarray(curve(w, 2), dtype=float)
    lo = float(d2.min())
    if not lo > 0.0 or (c1 is not None and lo < c1):
        raise TwistViolation(f"sampled second derivative {lo:.3g} below c1={c1}")
    return lo


def _branch_preimage(P, lo, hi, v, increasing, Plo, Phi):
    """Point in [lo, hi] where the monotone P takes value v (clipped to the ends)."""
    if increasing:
        if v <= Plo:
            return lo
        if v >= Phi:
            return hi
    else:
        if v >= Plo:
            return lo
        if v <= Phi:
            return hi
    return brentq(lambda w: P(w) - v, lo, hi, xtol=_XTOL, rtol=4 * np.finfo(float).eps)


def third_step_zones(curve, a, b, epsilon, params, kmax=None, K=None, branch_thresholds=False):
    """
    Excluded zones of ``(omega, curve(omega))`` on ``[a, b]``.

    ``curve(w, nu)`` is the drift (already multiplied by epsilon) and its
    derivatives; it must be strictly convex. By default every constraint
    uses the single threshold ``eps**(1+gamma2) K |k|^-mu`` of the Cantor
    measure bound. With ``branch_thresholds`` the ``k1 != 0`` constraints use the
    weaker ``eps**gamma2`` scaling instead, matching
    :func:`check_pair_third`.

    Each ``P(w) = k1 w + k2 curve(w)`` is convex or concave, so it splits
    into at most two monotone branches and ``|P + 2 pi n| < thr`` is one
    interval per branch.
    """
    kmax = params.kmax if kmax is None else int(kmax)
    K = params.K if K is None else K
    raw, tags = [], []
    if K > 0:
        fa, fb = float(curve(a, 1)), float(curve(b, 1))
        for k1, k2 in _pairs(kmax):
            k1, k2 = int(k1), int(k2)
            norm = abs(k1) + abs(k2)
            scale = epsilon ** params.gamma2 if (branch_thresholds and k1 != 0) else epsilon ** (1.0 + params.gamma2)
            thr = scale * K * norm ** (-params.mu)

            def P(w, k1=k1, k2=k2):
                return k1 * w + k2 * float(curve(w, 0))

            # critical point of P, if any, splits the domain into monotone pieces
            dlo, dhi = k1 + k2 * fa, k1 + k2 * fb
            if k2 != 0 and dlo * dhi < 0:
                wc = brentq(lambda w: k1 + k2 * float(curve(w, 1)), a, b, xtol=_XTOL)
                pieces = [(a, wc), (wc, b)]
            else:
                pieces = [(a, b)]
            for lo, hi in pieces:
                Plo, Phi = P(lo), P(hi)
                increasing = Phi >= Plo
                pmin, pmax = min(Plo, Phi), max(Plo, Phi)
                n_lo = math.ceil(-(pmax + thr) / TWO_PI)
                n_hi = math.floor(-(pmin - thr) / TWO_PI)
                for n in range(n_lo, n_hi + 1):
                    shift = TWO_PI * n
                    w1 = _branch_preimage(P, lo, hi, -shift - thr, increasing, Plo, Phi)
                    w2 = _branch_preimage(P, lo, hi, -shift + thr, increasing, Plo, Phi)
                    zl, zh = min(w1, w2), max(w1, w2)
                    if zh > zl:
                        zl, zh = _round_out(zl, zh)
                        raw.append((zl, zh))
                        tags.append(((k1, k2), n))
    return ResonanceSet(a, b, np.array(raw, dtype=float).reshape(-1, 2), tags)


def monte_carlo_kept(curve, a, b, epsilon, params, n_samples, rng, kmax=None, K=None,
                     branch_thresholds=False, chunk=20000):
    """
    Fraction of uniform samples on ``[a, b]`` passing every truncated
    constraint, evaluated pointwise (no intervals involved).

    Returns ``(kept_measure_estimate, kept_fraction, samples_mask)``.
    """
    kmax = params.kmax if kmax is None else int(kmax)
    K = params.K if K is None else K
    w = rng.uniform(a, b, int(n_samples))
    ok = np.ones(w.shape, dtype=bool)
    if K > 0:
        kk = _pairs(kmax)
        norm = np.abs(kk).sum(axis=1).astype(float)
        scale = np.where((kk[:, 0] != 0) & branch_thresholds,
                         epsilon ** params.gamma2, epsilon ** (1.0 + params.gamma2))
        thr = scale * K * norm ** (-params.mu)
        for s in range(0, w.shape[0], chunk):
            ws = w[s:s + chunk]
            cw = np.asarray(curve(ws, 0), dtype=float)
            v = np.outer(ws, kk[:, 0]) + np.outer(cw, kk[:, 1])
            dist, _ = _dist_2pi(v)
            ok[s:s + chunk] = np.all(dist >= thr, axis=1)
    frac = float(ok.mean())
    return frac * (b - a), frac, ok


def _scaled_curve(g0, epsilon):
    def curve(w, nu=0):
        return epsilon * np.asarray(g0(w, nu), dtype=float)
    return curve


@dataclass
class CantorMeasure:
    zones: ResonanceSet
    kept_measure: float
    bound: float
    c3: float
    c3_tail: float
    a8: float
    c1: float
    holds: bool
    mc_kept: float | None = None
    mc_sigma: float | None = None
    mc_holds: bool | None = None
    mc_agrees: bool | None = None

    def to_json_dict(self):
        d = {k: getattr(self, k) for k in ("kept_measure", "bound", "c3", "c3_tail", "a8", "c1",
                                           "holds", "mc_kept", "mc_sigma", "mc_holds", "mc_agrees")}
        d["c3_tail"] = None if math.isinf(self.c3_tail) else self.c3_tail
        d["zones"] = self.zones.to_json_dict()
        return d


def _a8(a, b, curve):
    w = np.linspace(a, b, 1025)
    cv = np.asarray(curve(w, 0), dtype=float)
    return max(abs(a), abs(b), float(cv.max() - cv.min()))


def measure_S(g0, epsilon, params, a, b, kmax=None, K=None, c1=None,
              mc_samples=0, rng=None):
    """
    Kept measure of the truncated Cantor set on ``G' = [a, b]`` against the
    measure bound ``mu(G') - c3 (eps**gamma2 K / c1)**0.5``.

    ``g0(w, nu)`` is the unscaled drift. ``c1`` defaults to the sampled
    minimum of ``g0''``; passing a larger value raises TwistViolation.
    ``c3`` is the truncated lattice sum (its tail is reported separately),
    and ``a8 = max(|a|, |b|, range of eps g0)``. With ``mc_samples > 0`` an
    independent Monte-Carlo estimate is attached with its binomial
    standard error taken at the interval-arithmetic fraction.
    """
    kmax = params.kmax if kmax is None else int(kmax)
    K = params.K if K is None else K
    c1_meas = _curve_check(g0, a, b, c1)
    c1 = c1_meas if c1 is None else float(c1)
    curve = _scaled_curve(g0, epsilon)
    zones = third_step_zones(curve, a, b, epsilon, params, kmax=kmax, K=K)
    a8 = _a8(a, b, curve)
    c3, tail = c3_constant(params.mu, a8, kmax)
    bound = (b - a) - c3 * math.sqrt(epsilon ** params.gamma2 * K / c1)
    kept = zones.kept_measure
    out = CantorMeasure(zones, kept, bound, c3, tail, a8, c1, bool(kept >= bound))
    if mc_samples:
        rng = np.random.default_rng() if rng is None else rng
        est, frac, _ = monte_carlo_kept(curve, a, b, epsilon, params, mc_samples, rng, kmax=kmax, K=K)
        p = kept / (b - a)
        sigma = (b - a) * math.sqrt(max(p * (1.0 - p), 0.0) / mc_samples)
        out.mc_kept = est
        out.mc_sigma = sigma
        out.mc_holds = bool(est >= bound)
        out.mc_agrees = bool(abs(est - kept) <= 3.0 * sigma)
    return out


@dataclass
class HalvingReport:
    steps: list          # per-step ResonanceSet of S_j
    cumulative: list     # per-step ResonanceSet of the intersection up to j
    kept: list
    bounds: list
    nested: bool
    holds: bool


def measure_halving(g0, epsilon, params, a, b, j_max, kmax=None, c1=None, drifts=None):
    """
    The halving schedule ``K_j = K0 / 2**j``: kept measure of the running
    intersection of the ``S_j`` and the bound
    ``mu(G') - c3 (K0 eps**gamma2 / c1)**0.5 * sum_{l<=j} 2**(1 - l/2)``.

    ``drifts`` optionally supplies one curve per step (the accumulated
    drift); by default every step uses ``eps g0``.
    """
    kmax = params.kmax if kmax is None else int(kmax)
    c1 = _curve_check(g0, a, b, c1) if c1 is None else float(c1)
    base = _scaled_curve(g0, epsilon)
    a8 = _a8(a, b, base)
    c3, _ = c3_constant(params.mu, a8, kmax)
    steps, cum, kept, bounds = [], [], [], []
    nested = True
    acc = None
    for j in range(int(j_max) + 1):
        curve = base if drifts is None else drifts[j]
        if drifts is not None:
            _curve_check(curve, a, b)
        s = third_step_zones(curve, a, b, epsilon, params, kmax=kmax, K=params.K_n(j))
        steps.append(s)
        new = s if acc is None else acc.union(s)
        if acc is not None and not new.covers(acc):
            nested = False
        acc = new
        cum.append(acc)
        kept.append(acc.kept_measure)
        geo = math.fsum(2.0 ** (1.0 - l / 2.0) for l in range(j + 1))
        bounds.append((b - a) - c3 * math.sqrt(params.K_start * epsilon ** params.gamma2 / c1) * geo)
    holds = all(k >= bd for k, bd in zip(kept, bounds))
    return HalvingReport(steps, cum, kept, bounds, nested, holds)
