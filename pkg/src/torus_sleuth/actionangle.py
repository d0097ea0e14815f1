"""
Action-angle coordinates for the unperturbed swirling Hill's vortex.

The meridional motion is Hamiltonian in (R, z) with R = r^2/2 and

    H(R, z) = R z^2 - R + 2 R^2,

whose closed level sets fill the vortex between the elliptic point
(R, z) = (1/4, 0), H = -1/8, and the separatrix H = 0.

Two independent routes are provided. :class:`ActionChart` integrates each
level set in time (phi1 = omega1 t) and tabulates it; the module-level
functions use the parametrisation z = -zm sin(psi), in which
dt = dpsi / sqrt(1 + q - zm^2 sin^2 psi) with q = sqrt(-8h), zm^2 = 1 - q,
so the period is an incomplete elliptic integral and every orbit average
is a smooth periodic quadrature.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import BarycentricInterpolator
from scipy.optimize import brentq
from scipy.special import ellipj, ellipk, ellipkinc

from .core import TWO_PI, HillFlowSpec
from .errors import ChartRange, OutsideSeparatrix

__all__ = [
    "H_MIN",
    "I_MAX",
    "ELLIPTIC_POINT",
    "hamiltonian",
    "action_of_level",
    "level_of_action",
    "period_of_level",
    "frequencies",
    "ActionChart",
    "rz_to_action_angle",
    "action_angle_to_rz",
    "angle_offset",
    "hill_to_action_angle",
    "second_angle",
    "verify_assumption1",
    "Assumption1Residual",
    "section_orbit_in_action_angle",
]

H_MIN = -0.125
I_MAX = 1.0 / (3.0 * math.pi)
ELLIPTIC_POINT = (0.25, 0.0)

_N_PERIODIC = 256


def hamiltonian(R, z):
    return R * z ** 2 - R + 2.0 * R ** 2


def _check_level(h):
    h = np.asarray(h, dtype=float)
    if np.any(~(h > H_MIN)) or np.any(~(h < 0.0)):
        raise OutsideSeparatrix(f"level outside ({H_MIN}, 0): {h!r}")
    return h


def _geometry(h):
    q = np.sqrt(-8.0 * h)
    zm2 = 1.0 - q
    return q, zm2, zm2 / (1.0 + q)


def _orbit_point(psi, q, zm2):
    """(R, z, S) on the level with parameter psi; S = dpsi/dt."""
    zm = np.sqrt(zm2)
    s = np.sin(psi)
    z = -zm * s
    S = np.sqrt(1.0 + q - zm2 * s * s)
    R = 0.25 * (1.0 - z * z + zm * np.cos(psi) * S)
    return R, z, S


def action_of_level(h, method="quad"):
    """
    Action I(h) = area{H <= h} / 2pi.

    ``method="quad"`` runs adaptive quadrature on the substituted area
    integral (scalar ``h`` only); ``"periodic"`` applies the trapezoid
    rule on the periodic form of the same integrand and vectorises.
    """
    h = _check_level(h)
    if method == "quad":
        if h.ndim:
            return np.array([action_of_level(float(v)) for v in h.ravel()]).reshape(h.shape)
        q, zm2, _ = _geometry(float(h))
        f = lambda t: math.cos(t) ** 2 * math.sqrt(1.0 + q - zm2 * math.sin(t) ** 2)  # noqa: E731
        val, _ = quad(f, -math.pi / 2, math.pi / 2, epsabs=0.0, epsrel=1e-13, limit=200)
        return 0.5 * zm2 * val / TWO_PI
    if method != "periodic":
        raise ValueError(f"unknown method {method!r}")
    q, zm2, _ = _geometry(h[..., None])
    t = np.linspace(0.0, TWO_PI, _N_PERIODIC, endpoint=False)
    S = np.sqrt(1.0 + q - zm2 * np.sin(t) ** 2)
    return 0.25 * zm2[..., 0] * np.mean(np.cos(t) ** 2 * S, axis=-1)


def level_of_action(I):
    """Invert :func:`action_of_level` by bracketing on (H_MIN, 0)."""
    I = float(I)
    if not (0.0 < I < I_MAX):
        raise ChartRange(f"action {I!r} outside (0, {I_MAX})")
    lo, hi = H_MIN * (1 - 1e-15), -1e-300
    return brentq(lambda h: action_of_level(h) - I, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                  maxiter=500)


def period_of_level(h):
    """Period of the meridional orbit, 4 K(m) / sqrt(1 + q)."""
    h = _check_level(h)
    q, _, m = _geometry(h)
    return 4.0 * ellipk(m) / np.sqrt(1.0 + q)


def _swirl_average(h):
    q, zm2, _ = _geometry(np.asarray(h, dtype=float)[..., None])
    psi = np.linspace(0.0, TWO_PI, _N_PERIODIC, endpoint=False)
    R, _, S = _orbit_point(psi, q, zm2)
    inv_R_dt = np.mean(1.0 / (R * S), axis=-1) * TWO_PI
    T = np.mean(1.0 / S, axis=-1) * TWO_PI
    return inv_R_dt / T


@lru_cache(maxsize=4096)
def _frequencies_exact(I):
    h = level_of_action(I)
    return TWO_PI / float(period_of_level(h)), float(_swirl_average(h)), h


def frequencies(I, chart=None):
    """
    (omega1, omega2) of the level with action ``I``.

    omega1 = 2pi / period and omega2 = <1/R> along the orbit. With a chart
    the tabulated values are interpolated (ChartRange outside its range);
    without one they are computed directly for that level.
    """
    if chart is not None:
        return chart.frequencies(I)
    w1, w2, _ = _frequencies_exact(float(I))
    return w1, w2


# ---------------------------------------------------------------------------
# closed-form inverse chart
# ---------------------------------------------------------------------------

def _periodic_antiderivative(f, psi):
    """
    For rows of samples f[p, j] = f_p(2pi j / n) of periodic functions,
    return (mean_p, int_0^{psi_p} f_p) using the trigonometric interpolant.
    """
    n = f.shape[-1]
    F = np.fft.rfft(f, axis=-1) / n
    a0 = F[:, 0].real
    k = np.arange(1, F.shape[1])
    ck = F[:, 1:].copy()
    if n % 2 == 0:
        ck[:, -1] *= 0.5  # Nyquist term is shared with its alias
    ph = np.exp(1j * psi[:, None] * k)
    integral = a0 * psi + 2.0 * np.real(np.sum(ck * (ph - 1.0) / (1j * k), axis=1))
    return a0, integral


def _psi_of(R, z, q, zm2):
    S = np.sqrt(1.0 + q - z * z)
    return np.mod(np.arctan2(-z * S, 4.0 * R - 1.0 + z * z), TWO_PI)


def rz_to_action_angle(R, z, chunk=20000):
    """
    Closed-form inverse chart (R, z) -> (I, phi1), with phi1 = 0 on the
    outer crossing of z = 0 (R > 1/4). Returns (I, phi1, h).
    """
    R, z = np.broadcast_arrays(np.asarray(R, dtype=float), np.asarray(z, dtype=float))
    shape = R.shape
    R, z = R.ravel(), z.ravel()
    h = _check_level(hamiltonian(R, z))
    q, zm2, m = _geometry(h)
    psi = _psi_of(R, z, q, zm2)
    I = np.empty_like(h)
    for s in range(0, len(h), chunk):
        I[s:s + chunk] = action_of_level(h[s:s + chunk], method="periodic")
    phi1 = np.mod(TWO_PI * ellipkinc(psi, m) / (4.0 * ellipk(m)), TWO_PI)
    return I.reshape(shape), phi1.reshape(shape), h.reshape(shape)


def action_angle_to_rz(I, phi1):
    """Closed-form forward chart for a single level: Jacobi amplitude of phi1."""
    h = level_of_action(I)
    q, zm2, m = _geometry(h)
    u = np.asarray(phi1, dtype=float) * 4.0 * ellipk(m) / TWO_PI
    psi = ellipj(u, m)[3]
    R, z, _ = _orbit_point(psi, q, zm2)
    return R, z


def angle_offset(R, z, chunk=20000):
    """
    The offset phi(I, phi1) = omega2 t(phi1) - int_0^t dt'/R evaluated at
    meridional points (R, z); vanishes at phi1 = 0 and phi1 = 2pi.
    """
    R, z = np.broadcast_arrays(np.asarray(R, dtype=float), np.asarray(z, dtype=float))
    shape = R.shape
    R, z = R.ravel(), z.ravel()
    h = _check_level(hamiltonian(R, z))
    out = np.empty_like(h)
    grid = np.linspace(0.0, TWO_PI, _N_PERIODIC, endpoint=False)
    for s in range(0, len(h), chunk):
        sl = slice(s, s + chunk)
        q, zm2, _ = _geometry(h[sl])
        psi = _psi_of(R[sl], z[sl], q, zm2)
        Rg, _, Sg = _orbit_point(grid[None, :], q[:, None], zm2[:, None])
        mt, t = _periodic_antiderivative(1.0 / Sg, psi)
        mg, G = _periodic_antiderivative(1.0 / (Rg * Sg), psi)
        out[sl] = (mg / mt) * t - G
    return out.reshape(shape)


def hill_to_action_angle(r, z, theta, c):
    """
    Map Hill states (r, z, theta) to (I, phi1, phi2) with
    phi2 = theta + c phi(I, phi1), wrapped to [0, 2pi).
    """
    R = 0.5 * np.asarray(r, dtype=float) ** 2
    I, phi1, _ = rz_to_action_angle(R, z)
    phi2 = np.mod(np.asarray(theta, dtype=float) + c * angle_offset(R, z), TWO_PI)
    return I, phi1, phi2


# ---------------------------------------------------------------------------
# tabulated chart
# ---------------------------------------------------------------------------

def _integrate_level(h, n_phi, tol):
    """Time-parametrised level set sampled at phi1 = 2pi j / n_phi."""
    q = math.sqrt(-8.0 * h)
    R0 = 0.25 * (1.0 + math.sqrt(1.0 - q * q))

    def rhs(t, y):
        R, z, _ = y
        return [2.0 * R * z, 1.0 - 4.0 * R - z * z, 1.0 / R]

    # the start lies on z = 0 itself; arm the crossing test once z > 0 again
    guess = float(period_of_level(h))

    def back_to_start(t, y):
        return y[1] if t > 0.75 * guess else 1.0

    back_to_start.direction = -1
    back_to_start.terminal = True
    horizon = 2.0 * guess
    sol = solve_ivp(rhs, (0.0, horizon), [R0, 0.0, 0.0], method="DOP853", rtol=tol, atol=tol,
                    dense_output=True, events=back_to_start)
    if sol.status != 1:
        raise RuntimeError(f"level h={h} did not close: {sol.message}")
    T = float(sol.t_events[0][0])
    ts = T * np.arange(n_phi) / n_phi
    R, z, G = sol.sol(ts)
    w2 = float(sol.y_events[0][0][2]) / T
    return R, z, w2 * ts - G, TWO_PI / T, w2


@dataclass
class ActionChart:
    """
    Tabulated action-angle chart on a (sqrt(I), phi1) grid.

    Rows are integrated level sets placed at Chebyshev-Lobatto nodes in
    sqrt(I) (R - 1/4 ~ sqrt(I) cos(phi1) near the elliptic point, so the
    tables are analytic in sqrt(I) but not in I). Interpolation is
    barycentric across rows and trigonometric along each periodic row.
    """

    rho: np.ndarray
    h: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray
    R: np.ndarray
    z: np.ndarray
    offset: np.ndarray

    @classmethod
    def build(cls, n_I=64, n_phi=256, I_range=(1e-6, 0.09), tol=1e-12):
        lo, hi = I_range
        if not (0.0 < lo < hi < I_MAX):
            raise ChartRange(f"I range {I_range} outside (0, {I_MAX})")
        a, b = math.sqrt(lo), math.sqrt(hi)
        rho = a + (b - a) * 0.5 * (1.0 - np.cos(np.pi * np.arange(n_I) / (n_I - 1)))
        h = np.array([level_of_action(p * p) for p in rho])
        R = np.empty((n_I, n_phi))
        z = np.empty_like(R)
        off = np.empty_like(R)
        w1 = np.empty(n_I)
        w2 = np.empty(n_I)
        for i, hv in enumerate(h):
            R[i], z[i], off[i], w1[i], w2[i] = _integrate_level(hv, n_phi, tol)
        return cls(rho, h, w1, w2, R, z, off)

    # -- queries -----------------------------------------------------------
    @property
    def I(self):
        return self.rho ** 2

    @property
    def I_range(self):
        return float(self.I[0]), float(self.I[-1])

    @property
    def n_phi(self):
        return self.R.shape[1]

    @property
    def period(self):
        return TWO_PI / self.omega1

    def _rho_of(self, I):
        I = np.asarray(I, dtype=float)
        lo, hi = self.I_range
        tol = 1e-12 * hi
        if np.any(I < lo - tol) or np.any(I > hi + tol):
            raise ChartRange(f"action outside chart range [{lo:.3g}, {hi:.3g}]")
        return np.sqrt(np.clip(I, lo, hi))

    def _interpolants(self):
        if not hasattr(self, "_cache"):
            spl = {name: BarycentricInterpolator(self.rho, np.fft.rfft(getattr(self, name), axis=1),
                                                 axis=0)
                   for name in ("R", "z", "offset")}
            for name in ("omega1", "omega2", "h"):
                spl[name] = BarycentricInterpolator(self.rho, getattr(self, name))
            self._cache = spl
        return self._cache

    def _table(self, name, I, phi1):
        rho = self._rho_of(I)
        I_b, phi1 = np.broadcast_arrays(rho, np.asarray(phi1, dtype=float))
        C = self._interpolants()[name](I_b.ravel())
        n = self.n_phi
        k = np.arange(C.shape[1])
        w = np.full(C.shape[1], 2.0)
        w[0] = 1.0
        if n % 2 == 0:
            w[-1] = 1.0
        val = np.real(np.sum(w * C * np.exp(1j * np.outer(phi1.ravel(), k)), axis=1)) / n
        return val.reshape(I_b.shape)

    def to_rz(self, I, phi1):
        return self._table("R", I, phi1), self._table("z", I, phi1)

    def phi_offset(self, I, phi1):
        return self._table("offset", I, phi1)

    def frequencies(self, I):
        rho = self._rho_of(I)
        s = self._interpolants()
        return s["omega1"](rho)[()], s["omega2"](rho)[()]

    def level(self, I):
        return self._interpolants()["h"](self._rho_of(I))[()]

    def second_angle(self, I, phi1, theta, c=1.0):
        """phi2 = theta + c phi(I, phi1), not reduced mod 2pi."""
        return np.asarray(theta) + c * self.phi_offset(I, phi1)

    # -- serialisation -----------------------------------------------------
    def to_json_dict(self):
        return {name: np.asarray(getattr(self, name)).tolist()
                for name in ("rho", "h", "omega1", "omega2", "R", "z", "offset")}

    @classmethod
    def from_json_dict(cls, d):
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def second_angle(I, phi1, theta, chart=None, c=1.0):
    """
    phi2 = theta + c [ (phi1/2pi) oint g - int_0^phi1 g ],  g = 2/(r^2 omega1).

    ``c = 1`` reproduces the bare formula; the swirling flow needs the
    swirl strength ``c`` for phi2 to advance uniformly.
    """
    if chart is not None:
        return chart.second_angle(I, phi1, theta, c)
    R, z = action_angle_to_rz(I, phi1)
    return np.asarray(theta) + c * angle_offset(R, z)


# ---------------------------------------------------------------------------
# first-order averages of the Poincare map
# ---------------------------------------------------------------------------

@dataclass
class Assumption1Residual:
    I: float
    phi1: float
    residual_I: float
    residual_phi1: float
    scale_I: float
    scale_phi1: float
    G_I: float
    G_phi1: float


def _gradients(r, z, step=1e-6):
    """d(I, phi1)/dr and d(I, phi1)/dz by central differences of the inverse chart."""
    out = []
    for dr, dz in ((step, 0.0), (0.0, step)):
        rp, zp = r + dr, z + dz
        rm, zm = r - dr, z - dz
        Ip, pp, _ = rz_to_action_angle(0.5 * rp * rp, zp)
        Im, pm, _ = rz_to_action_angle(0.5 * rm * rm, zm)
        dphi = (pp - pm + math.pi) % TWO_PI - math.pi
        out.append(((Ip - Im) / (2 * step), dphi / (2 * step)))
    (I_r, p_r), (I_z, p_z) = out
    return float(I_r), float(I_z), float(p_r), float(p_z)


def verify_assumption1(spec: HillFlowSpec, I, phi1, chart=None, n_tau=64, n_phi2=64,
                       omega2=None, phi2_shift=0.0):
    """
    Average over phi2^0 of the first-order Poincare-map increments f_I and
    f_phi1 at one (I, phi1).

    The increments integrate sin(theta) sin(omega tau) G over one forcing
    period with theta = phi2^0 + omega2 tau - c phi(I, phi1) and G frozen
    at (I, phi1). tau uses Gauss-Legendre nodes, phi2^0 the periodic
    trapezoid rule starting at ``phi2_shift``.
    """
    w1, w2 = frequencies(I, chart)
    if omega2 is not None:
        w2 = float(omega2)
    if w2 == 0.0:
        raise ValueError("omega2 = 0: the phi2 average degenerates")
    if chart is not None:
        R, z = chart.to_rz(I, phi1)
        R, z = float(R), float(z)
    else:
        R, z = (float(v) for v in action_angle_to_rz(I, phi1))
    r = math.sqrt(2.0 * R)
    I_r, I_z, p_r, p_z = _gradients(r, z)
    a = math.sqrt(2.0 * r)
    b = z * math.sqrt(1.0 / (2.0 * r))
    G_I = I_r * a - I_z * b
    G_p = p_r * a - p_z * b
    varphi = spec.c * float(angle_offset(R, z))
    T = TWO_PI / spec.omega
    x, wq = np.polynomial.legendre.leggauss(n_tau)
    tau = 0.5 * T * (x + 1.0)
    wq = 0.5 * T * wq
    p0 = phi2_shift + np.linspace(0.0, TWO_PI, n_phi2, endpoint=False)
    ph = p0[:, None] + w2 * tau[None, :]
    kern = (np.sin(ph) * math.cos(varphi) - np.cos(ph) * math.sin(varphi)) * np.sin(spec.omega * tau)
    base = kern @ wq
    fI, fp = G_I * base, G_p * base
    dphi = TWO_PI / n_phi2
    return Assumption1Residual(float(I), float(phi1), abs(fI.sum() * dphi), abs(fp.sum() * dphi),
                               float(np.abs(fI).max()), float(np.abs(fp).max()), G_I, G_p)


def section_orbit_in_action_angle(orbit):
    """
    Recast a Hill stroboscopic orbit (r, z, theta) as an action-angle-angle
    orbit with x = theta, y = phi1 and z = I.

    theta rather than phi2 is the first angle because phi2 - theta =
    c phi(I, phi1) winds O(c) times in phi1, which would push the torus
    graph to phi1 orders of order c. On a fixed torus the two angles are
    related by a smooth bijection, so either pair parametrises it.
    """
    from .dynamics import Orbit

    r, z, th = orbit.states.T
    I, phi1, _ = rz_to_action_angle(0.5 * r * r, z)
    wind = np.column_stack([orbit.wind[:, 1], np.zeros(len(orbit), dtype=np.int64)])
    return Orbit(np.arange(len(orbit)), np.column_stack([th, phi1, I]), wind, "map",
                 dict(orbit.meta, coordinates="theta,phi1,I"))
