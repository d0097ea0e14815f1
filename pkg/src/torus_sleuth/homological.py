"""
Small-divisor solves for the averaging step and the second (action-angle)
step, plus numerical measurement of the conjugated maps.

The averaging transform is stored as numerator fields together with the
exact divisors ``1 - exp(i k1 z)``. Interpolating the quotient itself
would smear poles across the resonance zones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import TWO_PI, DEFAULT_TOLERANCES, AAAMapSpec, Drift, TrigField, wrap_angle
from .diophantine import (DiophantineParams, ResonanceSet, check_omega_second,
                          denominator_floor, excluded_zones_first)
from .errors import BadDelta, NewtonDivergence, ResonantOmega, ResonantZ

__all__ = [
    "choose_N",
    "DividedField",
    "AveragingTransform",
    "solve_first_step",
    "homological_residual",
    "sample_lattice",
    "ConjugationReport",
    "conjugate_and_measure",
    "ablation_over_N",
    "LocalMap",
    "SecondStepTransform",
    "SecondStepResult",
    "solve_second_step",
    "second_step_cascade",
]


def choose_N(delta, epsilon, r=None):
    """
    Truncation order ``ceil(log(2 / ((1 - exp(-delta)) eps)) / delta)``.

    ``r`` (the analyticity width) is only used to validate ``delta < r``.
    """
    if not (delta > 0.0 and math.isfinite(delta)) or (r is not None and delta >= r):
        raise BadDelta(f"delta={delta!r} must lie in (0, {r if r is not None else 'inf'})")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return int(math.ceil(math.log(2.0 / ((1.0 - math.exp(-delta)) * epsilon)) / delta))


def _pad(field_, Kx, Ky):
    c = np.zeros((2 * Kx + 1, 2 * Ky + 1, field_.M), complex)
    c[Kx - field_.Kx:Kx + field_.Kx + 1, Ky - field_.Ky:Ky + field_.Ky + 1] = field_.coeffs
    return c


def _eval_grad(C, Cz, kx, ky, x, y):
    """Value and (x, y, z) partials from per-point coefficient stacks."""
    ex = np.exp(1j * np.outer(x, kx))
    ey = np.exp(1j * np.outer(y, ky))
    Cy = np.einsum("pij,pj->pi", C, ey)
    Cyy = np.einsum("pij,pj->pi", C, ey * (1j * ky))
    v = np.einsum("pi,pi->p", ex, Cy).real
    vx = np.einsum("pi,pi->p", ex * (1j * kx), Cy).real
    vy = np.einsum("pi,pi->p", ex, Cyy).real
    vz = np.einsum("pi,pi->p", ex, np.einsum("pij,pj->pi", Cz, ey)).real
    return v, vx, vy, vz


class DividedField:
    """
    A field ``sum_j F_j / (1 - exp(i k1 z))**p_j`` built mode by mode.

    Terms with ``p_j > 0`` must have a vanishing ``k1 = 0`` row; that row
    is dropped on construction. Every evaluation checks the divisors of the
    active ``k1`` rows against the Diophantine floor and raises
    :class:`ResonantZ` below it.
    """

    def __init__(self, terms, K_bar, mu_bar):
        if not terms:
            raise ValueError("need at least one term")
        self.a, self.b = terms[0][0].a, terms[0][0].b
        self.Kx = max(t[0].Kx for t in terms)
        self.Ky = max(t[0].Ky for t in terms)
        self.M = terms[0][0].M
        self.kx = np.arange(-self.Kx, self.Kx + 1)
        self.ky = np.arange(-self.Ky, self.Ky + 1)
        self.K_bar, self.mu_bar = float(K_bar), float(mu_bar)
        self.terms = []
        active = np.zeros(2 * self.Kx + 1, dtype=bool)
        for f, p in terms:
            if (f.a, f.b, f.M) != (self.a, self.b, self.M):
                raise ValueError("terms must share one z-grid")
            c = _pad(f, self.Kx, self.Ky)
            if p > 0:
                c[self.Kx] = 0.0
                active |= np.abs(c).max(axis=(1, 2)) > 0.0
            self.terms.append((TrigField(c, self.a, self.b), int(p)))
        self.active = active & (self.kx != 0)
        self.floors = np.array([denominator_floor(k, self.K_bar, self.mu_bar) if k else 0.0
                                for k in self.kx])

    def _divisors(self, z):
        e = np.exp(1j * np.outer(z, self.kx))
        D = 1.0 - e
        mag = np.abs(D)
        bad = (mag < self.floors) | (mag == 0.0)
        bad &= self.active
        if bad.any():
            p, j = np.argwhere(bad)[0]
            raise ResonantZ(float(z[p]), int(self.kx[j]))
        D[:, ~self.active] = 1.0
        return D, e

    def coefficients(self, z, with_dz=False):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        D, e = self._divisors(z)
        ik = 1j * self.kx
        C = 0.0
        Cz = 0.0
        for f, p in self.terms:
            c = f.coefficients_at(z)
            if p == 0:
                C = C + c
                if with_dz:
                    Cz = Cz + f.coefficients_at(z, nu=1)
                continue
            inv = (1.0 / D ** p)[:, :, None]
            C = C + c * inv
            if with_dz:
                cz = f.coefficients_at(z, nu=1)
                dinv = (p * ik[None, :] * e / D ** (p + 1))
                dinv[:, ~self.active] = 0.0
                Cz = Cz + cz * inv + c * dinv[:, :, None]
        if with_dz:
            return C, Cz
        return C

    def evaluate(self, x, y, z):
        x, y, z = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, y, z))
        C = self.coefficients(z)
        ex = np.exp(1j * np.outer(x, self.kx))
        ey = np.exp(1j * np.outer(y, self.ky))
        return np.einsum("pi,pij,pj->p", ex, C, ey).real

    __call__ = evaluate

    def eval_grad(self, x, y, z):
        C, Cz = self.coefficients(z, with_dz=True)
        return _eval_grad(C, Cz, self.kx, self.ky, np.atleast_1d(x), np.atleast_1d(y))

    def sup_bound(self, z):
        """``max_z sum_k |h_k(z)|`` over the given actions (a bound on sup |h|)."""
        C = self.coefficients(z)
        return float(np.abs(C).sum(axis=(1, 2)).max(initial=0.0))


def _newton3(F, guess, tol, maxiter):
    """Vectorised 3D Newton; ``F(u)`` returns (residual (P,3), jacobian (P,3,3))."""
    u = guess.copy()
    for it in range(maxiter):
        r, J = F(u)
        step = np.linalg.solve(J, r[..., None])[..., 0]
        u -= step
        if not np.all(np.isfinite(u)):
            raise NewtonDivergence("non-finite Newton iterate")
        if np.max(np.abs(step)) <= tol:
            return u, it + 1
    raise NewtonDivergence(f"no convergence in {maxiter} iterations (last step {np.max(np.abs(step)):.2e})")


@dataclass(eq=False)
class AveragingTransform:
    """
    The near-identity averaging change of variables

        xb = x + eps h1,  yb = y + eps h2,  zb = z + eps h3.
    """

    h1: DividedField
    h2: DividedField
    h3: DividedField
    N: int
    delta: float
    excluded: ResonanceSet
    epsilon: float

    @property
    def kept_measure(self):
        return self.excluded.kept_measure

    def apply(self, x, y, z):
        e = self.epsilon
        return x + e * self.h1(x, y, z), y + e * self.h2(x, y, z), z + e * self.h3(x, y, z)

    def inverse(self, xb, yb, zb, tol=None, maxiter=None):
        """Newton inversion from the identity guess."""
        tol = DEFAULT_TOLERANCES.newton_tol if tol is None else tol
        maxiter = DEFAULT_TOLERANCES.newton_maxiter if maxiter is None else maxiter
        target = np.column_stack([np.ravel(xb), np.ravel(yb), np.ravel(zb)]).astype(float)
        e = self.epsilon

        def F(u):
            x, y, z = u.T
            J = np.broadcast_to(np.eye(3), (u.shape[0], 3, 3)).copy()
            r = u - target
            for i, h in enumerate((self.h1, self.h2, self.h3)):
                v, vx, vy, vz = h.eval_grad(x, y, z)
                r[:, i] += e * v
                J[:, i, 0] += e * vx
                J[:, i, 1] += e * vy
                J[:, i, 2] += e * vz
            return r, J

        u, _ = _newton3(F, target, tol, maxiter)
        return u[:, 0], u[:, 1], u[:, 2]


def solve_first_step(spec: AAAMapSpec, dioph: DiophantineParams, delta=None, r=None, N=None):
    """
    Solve the averaging homological equations up to ``|k1| <= N``.

    Mode by mode, with ``D = 1 - exp(i k1 z)``: ``h3 = Z/D``, ``h2 = Y/D``,
    ``h1 = (X - h3)/D`` for ``k1 != 0``; the ``k1 = 0`` part of ``h3`` is
    the x-average of X and those of ``h1, h2`` are zero. ``r`` is the
    analyticity width of the perturbation (``delta`` defaults to ``r/4``);
    ``N`` defaults to ``dioph.N`` and then to :func:`choose_N`.
    """
    if r is None:
        r = _strip_width(spec)
    delta = r / 4.0 if delta is None else delta
    if N is None:
        N = dioph.N if dioph.N is not None else choose_N(delta, max(spec.epsilon, 1e-300), r)
    N = int(N)
    X = spec.X.truncate_x(N)
    Y = spec.Y.truncate_x(N)
    Z = spec.Z.truncate_x(N)
    Kb, mb = dioph.K_bar, dioph.mu_bar
    X0 = X.x_average()
    Xosc = X.project_assumption1()
    h3 = DividedField([(Z, 1), (X0, 0)], Kb, mb)
    h2 = DividedField([(Y, 1)], Kb, mb)
    h1 = DividedField([(Xosc, 1), (Z.scaled(-1.0), 2)], Kb, mb)
    zones = excluded_zones_first(spec.a, spec.b, Kb, mb, N)
    return AveragingTransform(h1, h2, h3, N, float(delta), zones, spec.epsilon)


def _strip_width(spec):
    """Analyticity width read off the fitted geometric decay of the coefficients."""
    decays = []
    for f in (spec.X, spec.Y, spec.Z):
        d = f.decay
        pos = d[d > 0]
        if pos.size >= 2:
            n = np.arange(pos.size)
            slope = np.polyfit(n, np.log(pos), 1)[0]
            if slope < 0:
                decays.append(-slope)
    return min(decays) if decays else 1.0


def homological_residual(spec: AAAMapSpec, tr: AveragingTransform, x, y, z):
    """
    The three difference equations with the truncated perturbation:

        X_N + h1(x+z) - h1(x) - h3,  Y_N + h2(x+z) - h2(x),  Z_N + h3(x+z) - h3(x).

    Returns the max absolute value of each over the given points.
    """
    N = tr.N
    X = spec.X.truncate_x(N)(x, y, z)
    Y = spec.Y.truncate_x(N)(x, y, z)
    Z = spec.Z.truncate_x(N)(x, y, z)
    xs = x + z
    r1 = X + tr.h1(xs, y, z) - tr.h1(x, y, z) - tr.h3(x, y, z)
    r2 = Y + tr.h2(xs, y, z) - tr.h2(x, y, z)
    r3 = Z + tr.h3(xs, y, z) - tr.h3(x, y, z)
    return float(np.abs(r1).max()), float(np.abs(r2).max()), float(np.abs(r3).max())


def sample_lattice(spec, tr, nx=64, ny=64, nz=16, margin=None, zgrid_fine=2049):
    """
    The sup-norm sample lattice: an ``nx x ny`` angle grid times ``nz``
    kept actions, kept away from the domain ends by ``margin`` so images
    and pre-images stay inside the fields' z-range. Returns (P, 3).
    """
    a, b = spec.a, spec.b
    if margin is None:
        zf = np.linspace(a, b, zgrid_fine)
        zf = zf[tr.excluded.kept_mask(zf)]
        try:
            hs = tr.h3.sup_bound(zf)
        except ResonantZ:
            hs = tr.h3.sup_bound(zf[_safe(tr, zf)])
        margin = spec.epsilon * (2.0 * hs + spec.Z.norm) * 1.5 + 1e-12
    lo, hi = a + margin, b - margin
    if not hi > lo:
        raise ValueError("margin leaves no action range")
    zc = np.linspace(lo, hi, 8 * nz)
    zc = zc[tr.excluded.kept_mask(zc)]
    zc = zc[_safe(tr, zc)]
    if zc.size == 0:
        raise ValueError("no kept actions inside the margin")
    zs = zc[np.linspace(0, zc.size - 1, min(nz, zc.size)).round().astype(int)]
    xs = np.arange(nx) * TWO_PI / nx
    ys = np.arange(ny) * TWO_PI / ny
    X, Y, Zz = np.meshgrid(xs, ys, np.unique(zs), indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), Zz.ravel()])


def _safe(tr, z):
    ok = np.ones(z.shape, dtype=bool)
    for i, zi in enumerate(z):
        try:
            tr.h1._divisors(np.array([zi]))
        except ResonantZ:
            ok[i] = False
    return ok


@dataclass
class ConjugationReport:
    epsilon: float
    N: int
    delta: float
    kept_measure: float
    sup_residual_X: float
    sup_residual_Y: float
    sup_residual_Z: float
    sup_total: float
    n_samples: int

    def to_json_dict(self):
        return {k: getattr(self, k) for k in ("epsilon", "N", "delta", "kept_measure",
                                              "sup_residual_X", "sup_residual_Y",
                                              "sup_residual_Z", "sup_total", "n_samples")}


def conjugate_and_measure(spec: AAAMapSpec, tr: AveragingTransform, samples, chunk=8192):
    """
    Evaluate the conjugated map at barred sample points and report the
    sup of its perturbation parts

        Xb = wrap(xb1 - xb - zb),  Yb = yb1 - yb - eps g0(zb),  Zb = zb1 - zb.

    ``sup_total`` is the sup over samples of ``|Xb| + |Yb| + |Zb|``.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1, 3)
    eps = spec.epsilon
    sx = sy = sz = st = 0.0
    for s in range(0, samples.shape[0], chunk):
        xb, yb, zb = samples[s:s + chunk].T
        x, y, z = tr.inverse(xb, yb, zb)
        x1, y1, z1 = spec.apply(x, y, z)
        xb1, yb1, zb1 = tr.apply(x1, y1, z1)
        RX = wrap_angle(xb1 - xb - zb + math.pi)[0] - math.pi
        RY = yb1 - yb - eps * spec.g0(zb)
        RZ = zb1 - zb
        sx = max(sx, float(np.abs(RX).max()))
        sy = max(sy, float(np.abs(RY).max()))
        sz = max(sz, float(np.abs(RZ).max()))
        st = max(st, float((np.abs(RX) + np.abs(RY) + np.abs(RZ)).max()))
    return ConjugationReport(eps, tr.N, tr.delta, tr.kept_measure, sx, sy, sz, st, samples.shape[0])


def ablation_over_N(spec, dioph, samples, Ns, delta=None, r=None):
    """Conjugation residual for each truncation order in ``Ns``."""
    out = []
    for N in Ns:
        tr = solve_first_step(spec, dioph, delta=delta, r=r, N=int(N))
        out.append(conjugate_and_measure(spec, tr, samples))
    return out


# --------------------------------------------------------------------------
# second step: x is the angle, z the action, y a frozen parameter
# --------------------------------------------------------------------------
@dataclass(eq=False)
class LocalMap:
    """
    Map localised at a frequency ``omega`` on ``|eta| <= s``:

        x1 = x + omega + z + X,  y1 = y + eps g0(z + omega) + Y,  z1 = z + Z.

    The perturbations carry their full size (no epsilon prefactor).
    """

    omega: float
    epsilon: float
    g0: Drift
    X: TrigField
    Y: TrigField
    Z: TrigField

    @property
    def s(self):
        return self.X.b

    @classmethod
    def from_spec(cls, spec: AAAMapSpec, omega, s_hat, M=64):
        """Centre ``spec`` at action ``omega``; fields are re-sampled on ``[-s, s]``."""
        if not (spec.a <= omega - s_hat and omega + s_hat <= spec.b):
            raise ValueError("local window leaves the action domain")
        eta = np.linspace(-s_hat, s_hat, M)

        def local(f):
            C = f.coefficients_at(omega + eta) * spec.epsilon
            return TrigField(np.moveaxis(C, 0, 2), -s_hat, s_hat)

        return cls(float(omega), spec.epsilon, spec.g0, local(spec.X), local(spec.Y), local(spec.Z))

    def apply(self, x, y, z):
        x1 = x + self.omega + z + self.X(x, y, z)
        y1 = y + self.epsilon * self.g0(z + self.omega) + self.Y(x, y, z)
        z1 = z + self.Z(x, y, z)
        return x1, y1, z1

    def sizes(self, n=32, n_eta=9, s=None):
        """Sup of |X|, |Y|, |Z| on an ``n x n x n_eta`` lattice of ``|eta| <= s``."""
        s = self.s if s is None else s
        P = _angle_lattice(n, np.linspace(-s, s, n_eta))
        return tuple(float(np.abs(f(*P.T)).max()) for f in (self.X, self.Y, self.Z))


def _angle_lattice(n, etas):
    g = np.arange(n) * TWO_PI / n
    A, B, E = np.meshgrid(g, g, etas, indexing="ij")
    return np.column_stack([A.ravel(), B.ravel(), E.ravel()])


@dataclass(eq=False)
class SecondStepTransform:
    """``x = phi + U(phi, psi, eta)``, ``y = psi``, ``z = eta + W(phi, psi, eta)``."""

    U: TrigField
    W: TrigField

    def apply(self, phi, psi, eta):
        return phi + self.U(phi, psi, eta), psi, eta + self.W(phi, psi, eta)

    def inverse(self, x, y, z, tol=None, maxiter=None):
        """Solve for (phi, eta) at fixed ``psi = y`` by 2D Newton."""
        tol = DEFAULT_TOLERANCES.newton_tol if tol is None else tol
        maxiter = DEFAULT_TOLERANCES.newton_maxiter if maxiter is None else maxiter
        x, y, z = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, y, z))
        phi, eta = x.copy(), z.copy()
        kx, ky = self.U.kx, self.U.ky
        for _ in range(maxiter):
            CU, CUz = self.U.coefficients_at(eta), self.U.coefficients_at(eta, nu=1)
            CW, CWz = self.W.coefficients_at(eta), self.W.coefficients_at(eta, nu=1)
            u, ux, _, uz = _eval_grad(CU, CUz, kx, ky, phi, y)
            w, wx, _, wz = _eval_grad(CW, CWz, kx, ky, phi, y)
            r1 = phi + u - x
            r2 = eta + w - z
            a11, a12, a21, a22 = 1.0 + ux, uz, wx, 1.0 + wz
            det = a11 * a22 - a12 * a21
            d1 = (a22 * r1 - a12 * r2) / det
            d2 = (a11 * r2 - a21 * r1) / det
            phi -= d1
            eta -= d2
            if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(eta))):
                raise NewtonDivergence("non-finite Newton iterate")
            if max(np.abs(d1).max(), np.abs(d2).max()) <= tol:
                return phi, y, eta
        raise NewtonDivergence(f"no convergence in {maxiter} iterations")


@dataclass
class SecondStepResult:
    transform: SecondStepTransform
    new_map: LocalMap
    before: tuple
    after: tuple
    sigma: float
    predicted_d1: float | None = None

    @property
    def d_before(self):
        return sum(self.before)

    @property
    def within_factor(self):
        if self.predicted_d1 is None:
            return None
        return self.after[2] <= 10.0 * self.predicted_d1


def _second_step_fields(lm: LocalMap):
    Kx = max(lm.X.Kx, lm.Z.Kx)
    Ky = max(lm.X.Ky, lm.Z.Ky)
    X = _pad(lm.X, Kx, Ky)
    Z = _pad(lm.Z, Kx, Ky)
    kx = np.arange(-Kx, Kx + 1)
    den = np.exp(1j * kx * lm.omega) - 1.0
    den[Kx] = 1.0
    W = Z / den[:, None, None]
    W[Kx] = -X[Kx]
    U = (W + X) / den[:, None, None]
    U[Kx] = 0.0
    return TrigField(U, lm.X.a, lm.X.b), TrigField(W, lm.X.a, lm.X.b)


def solve_second_step(lm: LocalMap, dioph: DiophantineParams, sigma=None, n_angle=32, n_eta=9,
                      kmax=None, predict=None):
    """
    One action-angle step with the degenerate angle frozen.

    For ``k1 != 0``: ``W_k = Z_k / (e^{i k1 omega} - 1)`` and
    ``U_k = (W_k + X_k) / (e^{i k1 omega} - 1)``; ``W_0 = -X_0`` and
    ``U_0 = 0``. The conjugated map is measured on an
    ``n_angle x n_angle x n_eta`` lattice of ``|eta| <= sigma`` and
    re-expanded by FFT into a new :class:`LocalMap` on ``[-sigma, sigma]``.

    ``predict`` is an optional callable ``d -> d_next`` (the recurrence
    prediction); its value is stored for the comparison with |Z| after.
    """
    kmax = max(lm.X.Kx, lm.Z.Kx, 1) if kmax is None else kmax
    chk = check_omega_second(lm.omega, lm.epsilon, dioph, kmax=kmax)
    if not chk.passed:
        raise ResonantOmega(f"omega={lm.omega!r} fails at k={chk.worst_k}, n={chk.worst_n} "
                            f"(margin {chk.margin:.3e})")
    sigma = lm.s / 3.5 if sigma is None else float(sigma)
    if not 0.0 < 3.0 * sigma < lm.s:
        raise ValueError("need 0 < 3 sigma < s")
    if n_eta < 4:
        raise ValueError("n_eta must be at least 4 for the spline in the action")
    U, W = _second_step_fields(lm)
    T = SecondStepTransform(U, W)
    before = lm.sizes(n_angle, n_eta, s=lm.s)

    etas = np.linspace(-sigma, sigma, n_eta)
    P = _angle_lattice(n_angle, etas)
    phi, psi, eta = P.T
    x, y, z = T.apply(phi, psi, eta)
    x1, y1, z1 = lm.apply(x, y, z)
    phi1, psi1, eta1 = T.inverse(x1, y1, z1)
    Xh = wrap_angle(phi1 - phi - lm.omega - eta + math.pi)[0] - math.pi
    Yh = psi1 - psi - lm.epsilon * lm.g0(eta + lm.omega)
    Zh = eta1 - eta
    shape = (n_angle, n_angle, n_eta)
    new = LocalMap(lm.omega, lm.epsilon, lm.g0,
                   *(_fft_field(v.reshape(shape), -sigma, sigma) for v in (Xh, Yh, Zh)))
    after = tuple(float(np.abs(v).max()) for v in (Xh, Yh, Zh))
    pred = None if predict is None else float(predict(sum(before)))
    return SecondStepResult(T, new, before, after, sigma, pred)


def _fft_field(vals, a, b):
    """Lattice samples (n, n, M) on a uniform angle grid -> TrigField (Nyquist dropped)."""
    n = vals.shape[0]
    K = (n - 1) // 2
    c = np.fft.fft2(vals, axes=(0, 1)) / (n * n)
    idx = np.r_[np.arange(-K, 0) % n, np.arange(0, K + 1)]
    c = c[np.ix_(idx, idx)]
    c = 0.5 * (c + np.conj(c[::-1, ::-1]))
    return TrigField(c, a, b)


def second_step_cascade(lm: LocalMap, dioph: DiophantineParams, steps=6, shrink=3.5, **kw):
    """Apply :func:`solve_second_step` repeatedly, shrinking the action window each time."""
    out = []
    cur = lm
    for _ in range(steps):
        res = solve_second_step(cur, dioph, sigma=cur.s / shrink, **kw)
        out.append(res)
        cur = res.new_map
    return out
