"""
Orbits of the action-angle-angle map and of the forced Hill's vortex:
map iteration, flow integration, stroboscopic sections, rotation numbers,
least-squares torus fits and the intersection-property scan.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import _hillkernel
from .core import DEFAULT_TOLERANCES, TWO_PI, AngleActionState, HillFlowSpec, wrap_angle
from .errors import (DomainEscape, RankDeficient, SingularAxis, StepFailure,
                     TooShort)

STEP_TOL_FACTOR = 0.1

__all__ = [
    "Orbit",
    "TorusGraph",
    "RotationEstimate",
    "IntersectionDiagnostic",
    "iterate_map",
    "hill_vector_field",
    "hill_hamiltonian",
    "integrate_flow",
    "poincare_map",
    "poincare_ensemble",
    "divergence_diagnostic",
    "estimate_rotation_numbers",
    "fit_invariant_torus",
    "check_intersection_property",
]


@dataclass
class Orbit:
    """
    A sampled trajectory.

    ``states`` has one row per sample. For map orbits the columns are
    (x, y, z) with both angles in [0, 2pi) and ``wind`` holding the
    (x, y) winding counts. For flow and section orbits the columns are
    (r, z, theta), ``wind[:, 0]`` is always 0 and ``wind[:, 1]`` counts
    turns of theta.
    """

    t: np.ndarray
    states: np.ndarray
    wind: np.ndarray
    kind: str = "map"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 3)
        self.wind = np.asarray(self.wind, dtype=np.int64).reshape(-1, 2)
        if len(self.t) < 1 or len(self.t) != len(self.states) or len(self.wind) != len(self.t):
            raise ValueError("orbit arrays must be non-empty and of equal length")
        if len(self.t) > 1:
            dt = np.diff(self.t)
            if not (np.all(dt > 0) or np.all(dt < 0)):
                raise ValueError("time stamps must be strictly monotone")

    def __len__(self):
        return len(self.t)

    @property
    def x(self):
        return self.states[:, 0]

    @property
    def y(self):
        return self.states[:, 1]

    @property
    def z(self):
        return self.states[:, 2]

    def unwrapped(self, col):
        """Unwrapped angle in column ``col`` (0 or 1 for maps, 2 for flows)."""
        if self.kind == "map":
            return self.states[:, col] + TWO_PI * self.wind[:, col]
        if col != 2:
            raise ValueError("only theta (column 2) is an angle on flow orbits")
        return self.states[:, 2] + TWO_PI * self.wind[:, 1]

    def state(self, i):
        if self.kind != "map":
            raise TypeError("state() is only defined for map orbits")
        x, y, z = self.states[i]
        return AngleActionState(float(x), float(y), float(z), int(self.wind[i, 0]), int(self.wind[i, 1]))

    def to_csv(self, path):
        """Write ``step|t, x|r, y|z, z|theta, wind_x, wind_y`` rows."""
        head = ("step", "x", "y", "z") if self.kind == "map" else ("t", "r", "z", "theta")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(head + ("wind_x", "wind_y"))
            for t, s, k in zip(self.t, self.states, self.wind):
                tt = str(int(t)) if self.kind == "map" else repr(float(t))
                w.writerow([tt] + [repr(float(v)) for v in s] + [int(k[0]), int(k[1])])

    @classmethod
    def from_csv(cls, path, kind=None):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        arr = np.array(body, dtype=float)
        if kind is None:
            kind = "map" if head[0] == "step" else "flow"
        return cls(arr[:, 0], arr[:, 1:4], arr[:, 4:6].astype(np.int64), kind)


# ---------------------------------------------------------------------------
# the discrete map
# ---------------------------------------------------------------------------

def iterate_map(spec, s0, n):
    """
    Iterate the action-angle-angle map ``n`` times from ``s0``.

    Returns an orbit of length ``n + 1``. Raises :class:`DomainEscape` if
    the action leaves [a, b].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (spec.a <= s0.z <= spec.b):
        raise DomainEscape(0, s0.z)
    out = np.empty((n + 1, 3))
    wind = np.empty((n + 1, 2), dtype=np.int64)
    x, y, z = s0.x, s0.y, s0.z
    wx, wy = s0.wind_x, s0.wind_y
    out[0] = (x, y, z)
    wind[0] = (wx, wy)
    perturbed = spec.epsilon != 0.0
    eps = spec.epsilon
    for i in range(1, n + 1):
        if perturbed:
            X = spec.X.evaluate(x, y, z)
            Y = spec.Y.evaluate(x, y, z)
            Z = spec.Z.evaluate(x, y, z)
            g = spec.g0(z)
            xr = x + z + eps * X
            yr = y + eps * g + eps * Y
            z = z + eps * Z
        else:
            xr = x + z
            yr = y
        x, kx = wrap_angle(xr)
        y, ky = wrap_angle(yr)
        x, y = float(x), float(y)
        wx += int(kx)
        wy += int(ky)
        if not (spec.a <= z <= spec.b):
            raise DomainEscape(i, float(z))
        out[i] = (x, y, z)
        wind[i] = (wx, wy)
    return Orbit(np.arange(n + 1), out, wind, "map")


@dataclass
class RotationEstimate:
    rot_x: float
    rot_y: float
    err_x: float
    err_y: float

    def __iter__(self):
        return iter((self.rot_x, self.rot_y))


def estimate_rotation_numbers(orbit):
    """
    Mean advance per iterate of both angles, with a Richardson error.

    The estimate from the whole orbit is compared with the one from the
    first half; for an O(1/N) error the extrapolated value is
    ``2 rot_N - rot_{N/2}`` and the reported error is its distance to
    ``rot_N``.
    """
    if len(orbit) < 100:
        raise TooShort("need at least 100 iterates")
    N = len(orbit) - 1
    h = N // 2
    res = []
    for col in (0, 1):
        u = orbit.unwrapped(col)
        full = (u[N] - u[0]) / N
        half = (u[h] - u[0]) / h
        res.append((full, abs(full - half)))
    return RotationEstimate(res[0][0], res[1][0], res[0][1], res[1][1])


# ---------------------------------------------------------------------------
# torus graphs
# ---------------------------------------------------------------------------

def _powers(theta, K):
    """e^{i k theta} for k = -K..K, shape (n, 2K+1)."""
    return np.exp(1j * np.outer(theta, np.arange(-K, K + 1)))


@dataclass
class TorusGraph:
    """A fitted invariant-torus candidate z = gamma(x, y)."""

    coeffs: np.ndarray  # complex, (2Gx+1, 2Gy+1), Hermitian
    residual: float
    span: float
    tol: float
    rotation: tuple = (float("nan"), float("nan"))

    @property
    def Gx(self):
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def Gy(self):
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def detected(self):
        return bool(self.residual < self.tol)

    @classmethod
    def constant(cls, value, Gx=0, Gy=0):
        c = np.zeros((2 * Gx + 1, 2 * Gy + 1), complex)
        c[Gx, Gy] = value
        return cls(c, 0.0, 0.0, 0.0)

    @classmethod
    def from_modes(cls, modes, Gx, Gy):
        """``{(j, k): c}`` for one of each conjugate pair, like TrigField.from_modes."""
        c = np.zeros((2 * Gx + 1, 2 * Gy + 1), complex)
        for (j, k), v in modes.items():
            if (j, k) == (0, 0):
                c[Gx, Gy] += np.real(v)
            else:
                c[j + Gx, k + Gy] += v
                c[-j + Gx, -k + Gy] += np.conj(v)
        return cls(c, 0.0, 0.0, 0.0)

    def cos_sin(self, j, k):
        """Amplitudes (A, B) of A cos(jx+ky) + B sin(jx+ky)."""
        c = self.coeffs[j + self.Gx, k + self.Gy]
        if (j, k) == (0, 0):
            return float(c.real), 0.0
        return float(2 * c.real), float(-2 * c.imag)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        jj = np.arange(-self.Gx, self.Gx + 1)
        kk = np.arange(-self.Gy, self.Gy + 1)
        ex = np.exp(1j * x[..., None] * jj)
        ey = np.exp(1j * y[..., None] * kk)
        return np.einsum("...i,ij,...j->...", ex, self.coeffs, ey).real


def fit_invariant_torus(orbit, orders, tol=None, noise=0.0):
    """
    Least-squares fit of z_n against a trigonometric polynomial in
    (x_n, y_n).

    The orbit is declared to lie on a torus when the RMS misfit is below
    ``tol`` (default ``1e-4 * span(z)``, but never below ``noise``, the
    resolution of the data, e.g. the integrator tolerance). Raises :class:`RankDeficient`
    when the normal matrix is singular, which happens when the orbit does
    not fill the torus (e.g. a resonant orbit).

    The fit is done in the complex exponential basis. Its Gram matrix
    entry for modes a, b is the orbit sum of e^{i(b - a).(x, y)}, so all
    of it comes from one (4Gx+1) x (4Gy+1) table of sums and the design
    matrix is never formed.
    """
    Gx, Gy = (int(g) for g in orders)
    nx, ny = 2 * Gx + 1, 2 * Gy + 1
    nb = nx * ny
    n = len(orbit)
    if n < 10 * nb:
        raise TooShort(f"{n} points is fewer than 10 x {nb} basis functions")
    x, y, z = orbit.x, orbit.y, orbit.z
    z0 = float(np.mean(z))
    zc = z - z0
    Ex2, Ey2 = _powers(x, 2 * Gx), _powers(y, 2 * Gy)
    S = Ex2.T @ Ey2  # S[m1, m2] = sum_n e^{i(m1 x_n + m2 y_n)}
    jj, kk = np.meshgrid(np.arange(-Gx, Gx + 1), np.arange(-Gy, Gy + 1), indexing="ij")
    jj, kk = jj.ravel(), kk.ravel()
    M = S[jj[None, :] - jj[:, None] + 2 * Gx, kk[None, :] - kk[:, None] + 2 * Gy]
    Ex, Ey = Ex2[:, Gx:3 * Gx + 1], Ey2[:, Gy:3 * Gy + 1]
    rhs = (np.conj(Ex).T @ (zc[:, None] * np.conj(Ey))).ravel()
    w, V = np.linalg.eigh(M)
    if w[0] <= DEFAULT_TOLERANCES.rank_rcond * w[-1]:
        raise RankDeficient(f"normal matrix condition {w[-1] / max(w[0], 1e-300):.3e}; "
                            "orbit does not fill a 2-torus")
    c = (V @ ((V.conj().T @ rhs) / w)).reshape(nx, ny)
    c = 0.5 * (c + np.conj(c[::-1, ::-1]))  # exact Hermitian symmetry
    fitted = np.einsum("ni,ij,nj->n", Ex, c, Ey).real
    resid = math.sqrt(float(np.mean((fitted - zc) ** 2)))
    span = float(np.ptp(z))
    if tol is None:
        # the floor lets a constant (zero-span) orbit count as a torus
        tol = max(DEFAULT_TOLERANCES.torus_rel_tol * span,
                  64 * np.finfo(float).eps * max(1.0, abs(z0)), float(noise))
    c[Gx, Gy] += z0
    rot = (float("nan"), float("nan"))
    if orbit.kind == "map" and n >= 100:
        est = estimate_rotation_numbers(orbit)
        rot = (est.rot_x, est.rot_y)
    return TorusGraph(c, resid, span, float(tol), rot)


@dataclass
class IntersectionDiagnostic:
    holds: bool
    min_gap: float
    max_gap: float


def check_intersection_property(map_spec, torus, grid=64, atol=1e-14):
    """
    Scan the signed gap z1(x, y) - gamma(x1, y1) between the image of the
    torus z = gamma(x, y) and the torus itself.

    The torus intersects its image exactly when the gap changes sign or
    vanishes somewhere on the grid.
    """
    if grid < 16:
        raise ValueError("grid must have at least 16 points per angle")
    th = np.linspace(0.0, TWO_PI, grid, endpoint=False)
    X, Y = np.meshgrid(th, th, indexing="ij")
    Z = torus(X, Y)
    x1, y1, z1 = map_spec.apply(X.ravel(), Y.ravel(), Z.ravel())
    gap = z1 - torus(np.mod(x1, TWO_PI), np.mod(y1, TWO_PI))
    lo, hi = float(gap.min()), float(gap.max())
    scale = atol * max(1.0, float(np.abs(Z).max()))
    holds = (lo <= scale and hi >= -scale)
    return IntersectionDiagnostic(bool(holds), lo, hi)


# ---------------------------------------------------------------------------
# Hill's vortex
# ---------------------------------------------------------------------------

def _check_axis(r, spec):
    if np.any(np.asarray(r) <= spec.r_min):
        raise SingularAxis(f"r <= r_min = {spec.r_min}: swirl velocity 2c/r^2 diverges")


def hill_vector_field(state, t, spec):
    """
    Right-hand side (dr/dt, dz/dt, dtheta/dt) of the forced swirling
    Hill's vortex in physical time.
    """
    r, z, th = (np.asarray(v, dtype=float) for v in state)
    _check_axis(r, spec)
    s = math.sin(spec.Omega * t) if spec.forcing else 0.0
    sq = np.sqrt(2.0 * r)
    dr = r * z + sq * np.sin(th) * s
    dz = 1.0 - 2.0 * r ** 2 - z ** 2 - z * np.sqrt(1.0 / (2.0 * r)) * np.sin(th) * s
    dth = 2.0 * spec.c / r ** 2 + sq * np.cos(th) * s
    return np.array([dr, dz, dth])


def hill_hamiltonian(r, z):
    """H(R, z) = R z^2 - R + 2 R^2 with R = r^2 / 2."""
    R = 0.5 * np.asarray(r) ** 2
    return R * z ** 2 - R + 2.0 * R ** 2


def divergence_diagnostic(spec, state, t, method="exact", h=None):
    """
    Divergence of the Hill field with respect to r dr dz dtheta:

        (1/r) [d_r(r rdot) + d_z(r zdot) + d_theta(r thetadot)].

    ``method="exact"`` differentiates each term by hand; ``"fd"`` uses
    central differences with step ``h`` (default 1e-6, scaled by r).
    """
    r, z, th = (float(v) for v in state)
    _check_axis(r, spec)
    if method == "fd":
        h = DEFAULT_TOLERANCES.fd_step if h is None else h
        hr = h * max(1.0, abs(r))
        hz = h * max(1.0, abs(z))
        f = lambda rr, zz, tt: rr * hill_vector_field((rr, zz, tt), t, spec)  # noqa: E731
        d_r = (f(r + hr, z, th)[0] - f(r - hr, z, th)[0]) / (2 * hr)
        d_z = (f(r, z + hz, th)[1] - f(r, z - hz, th)[1]) / (2 * hz)
        d_t = (f(r, z, th + h)[2] - f(r, z, th - h)[2]) / (2 * h)
        return float((d_r + d_z + d_t) / r)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    s = math.sin(spec.Omega * t) if spec.forcing else 0.0
    sth, cth = math.sin(th), math.cos(th)
    # r * rdot = r^2 z + sqrt(2) r^{3/2} sin(th) s
    d_r = 2 * r * z + 1.5 * math.sqrt(2.0 * r) * sth * s
    # r * zdot = r - 2 r^3 - r z^2 - z sqrt(r/2) sin(th) s
    d_z = -2 * r * z - math.sqrt(r / 2.0) * sth * s
    # r * thdot = 2c/r + sqrt(2) r^{3/2} cos(th) s
    d_t = -r * math.sqrt(2.0 * r) * sth * s
    return float((d_r + d_z + d_t) / r)


def integrate_flow(spec, s0, t_span, tol=None, t_eval=None, n_out=None):
    """
    Integrate the Hill flow with an embedded 8(5,3) Runge-Kutta pair and
    dense output.

    ``s0`` is (r, z, theta). Output is sampled at ``t_eval`` if given, else
    on ``n_out`` equispaced times (default: the solver's own steps).
    """
    tol = DEFAULT_TOLERANCES.integrator_tol if tol is None else tol
    if not tol > 0:
        raise ValueError("tol must be positive")
    t0, t1 = (float(v) for v in t_span)
    r0, z0, th0 = (float(v) for v in s0)
    _check_axis(r0, spec)
    if t1 == t0:
        th, k = wrap_angle(th0)
        return Orbit([t0], [[r0, z0, float(th)]], [[0, int(k)]], "flow")

    def rhs(t, y):
        return hill_vector_field(y, t, spec)

    def axis(t, y):
        return y[0] - spec.r_min

    axis.terminal = True
    # scipy bounds the error per step; steps here are ~0.1 time units, so a
    # tenth of tol keeps the local error below tol per unit time
    sol = solve_ivp(rhs, (t0, t1), [r0, z0, th0], method="DOP853", rtol=STEP_TOL_FACTOR * tol,
                    atol=STEP_TOL_FACTOR * tol,
                    dense_output=True, events=axis)
    if sol.status == 1:
        raise SingularAxis(f"trajectory reached r_min at t={sol.t_events[0][0]!r}")
    if sol.status != 0:
        raise StepFailure(sol.message)
    if t_eval is None and n_out is not None:
        t_eval = np.linspace(t0, t1, n_out)
    if t_eval is None:
        ts, Y = sol.t, sol.y
    else:
        ts = np.asarray(t_eval, dtype=float)
        Y = sol.sol(ts)
    th, k = wrap_angle(Y[2])
    states = np.column_stack([Y[0], Y[1], th])
    wind = np.column_stack([np.zeros_like(k), k])
    return Orbit(ts, states, wind, "flow", {"nfev": int(sol.nfev)})


def poincare_ensemble(spec, ics, n_sections, tol=None):
    """
    Stroboscopic samples at t = k T (T = 2pi/Omega in physical time, i.e.
    2pi/omega in the rescaled time) for many initial conditions at once.

    Returns (states, wind, status) with states of shape
    (n_ics, n_sections + 1, 3). Status 0 is success; non-zero rows are
    truncated at the failure point and padded with NaN.
    """
    if n_sections < 1:
        raise ValueError("n_sections must be >= 1")
    tol = DEFAULT_TOLERANCES.integrator_tol if tol is None else tol
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    _check_axis(ics[:, 0], spec)
    amp = 1.0 if spec.forcing else 0.0
    threads = os.environ.get("TORUS_SLEUTH_THREADS")
    if threads:
        import numba
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
    return _hillkernel.run_sections(ics, spec.c, spec.Omega, amp, spec.period, n_sections,
                                    tol, tol, spec.r_min)


def poincare_map(spec, s0, n_sections, tol=None):
    """Stroboscopic orbit of a single initial condition (r, z, theta)."""
    states, wind, status = poincare_ensemble(spec, [s0], n_sections, tol)
    st = int(status[0])
    if st == _hillkernel.SINGULAR_AXIS:
        raise SingularAxis("stroboscopic orbit reached the axis")
    if st == _hillkernel.STEP_FAILURE:
        raise StepFailure("step size underflow in stroboscopic integration")
    t = spec.period * np.arange(n_sections + 1)
    w = np.column_stack([np.zeros(n_sections + 1, dtype=np.int64), wind[0]])
    return Orbit(t, states[0], w, "section", {"period": spec.period})
