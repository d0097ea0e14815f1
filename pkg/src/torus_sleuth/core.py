"""
Shared domain types: trigonometric fields, map and flow specifications,
state vectors and configuration constants.

Nothing in here iterates or solves anything; the types only know how to
evaluate themselves.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from functools import cached_property

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline

from .errors import OutOfDomain

TWO_PI = 2.0 * np.pi

__all__ = [
    "Tolerances",
    "DEFAULT_TOLERANCES",
    "AngleActionState",
    "Drift",
    "TrigField",
    "AAAMapSpec",
    "HillFlowSpec",
    "EstimateConstants",
    "eval_trig_field",
    "project_assumption1",
]


@dataclass(frozen=True)
class Tolerances:
    """Every numerical tolerance used by the package, in one place."""

    realness: float = 1e-12
    domain_slack: float = 1e-12
    r_min: float = 1e-6
    newton_tol: float = 1e-13
    newton_maxiter: int = 50
    torus_rel_tol: float = 1e-4
    fd_step: float = 1e-6
    integrator_tol: float = 1e-10
    rank_rcond: float = 1e-10
    periodicity: float = 1e-8


DEFAULT_TOLERANCES = Tolerances()


def wrap_angle(theta):
    """Split an angle into (theta mod 2pi, winding count)."""
    theta = np.asarray(theta, dtype=float)
    wind = np.floor(theta / TWO_PI)
    wrapped = theta - TWO_PI * wind
    # floor can leave exactly 2pi after rounding
    over = wrapped >= TWO_PI
    wrapped = np.where(over, wrapped - TWO_PI, wrapped)
    wind = np.where(over, wind + 1, wind)
    return wrapped, wind.astype(np.int64)


@dataclass(frozen=True)
class AngleActionState:
    """
    A point (x, y, z) of the action-angle-angle phase space.

    ``x`` and ``y`` are kept in [0, 2pi); the integer windings record how
    many full turns were removed so the unwrapped angle is
    ``x + 2pi * wind_x``.
    """

    x: float
    y: float
    z: float
    wind_x: int = 0
    wind_y: int = 0

    def __post_init__(self):
        if not math.isfinite(self.z):
            raise ValueError("action z must be finite")
        if not (0.0 <= self.x < TWO_PI and 0.0 <= self.y < TWO_PI):
            raise ValueError("angles must be wrapped into [0, 2pi); use AngleActionState.wrap")

    @classmethod
    def wrap(cls, x, y, z, wind_x=0, wind_y=0):
        xw, kx = wrap_angle(x)
        yw, ky = wrap_angle(y)
        return cls(float(xw), float(yw), float(z), int(wind_x + kx), int(wind_y + ky))

    @property
    def unwrapped(self):
        return (self.x + TWO_PI * self.wind_x, self.y + TWO_PI * self.wind_y, self.z)


@dataclass(frozen=True)
class Drift:
    """Polynomial drift g0(z) of the degenerate angle, with derivatives."""

    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @classmethod
    def quadratic(cls, a=1.0):
        """g0(z) = a z**2."""
        return cls((0.0, 0.0, a))

    @cached_property
    def _polys(self):
        p = Polynomial(self.coeffs)
        return (p, p.deriv(1), p.deriv(2))

    def __call__(self, z, nu=0):
        return self._polys[nu](np.asarray(z, dtype=float))

    def min_second_derivative(self, a, b, n=1025):
        return float(np.min(self(np.linspace(a, b, n), nu=2)))


def _half_plane(Kx, Ky):
    """Index pairs (k1, k2) with (k1, k2) > (0, 0) lexicographically."""
    pairs = []
    for k1 in range(0, Kx + 1):
        for k2 in range(-Ky, Ky + 1):
            if k1 == 0 and k2 <= 0:
                continue
            pairs.append((k1, k2))
    return pairs


@dataclass(frozen=True, eq=False)
class TrigField:
    """
    Real trigonometric polynomial in two angles with action-dependent
    Fourier coefficients.

    ``coeffs[k1 + Kx, k2 + Ky, m]`` is the coefficient of
    ``exp(i (k1 x + k2 y))`` sampled at ``z = zgrid[m]``. Values between
    grid nodes come from a cubic spline. Hermitian symmetry is enforced at
    construction so every evaluation is real.
    """

    coeffs: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 3 or c.shape[0] % 2 == 0 or c.shape[1] % 2 == 0:
            raise ValueError("coeffs must have shape (2Kx+1, 2Ky+1, M)")
        if c.shape[2] < 4:
            raise ValueError("need at least 4 z-grid points for cubic interpolation")
        if not self.b > self.a:
            raise ValueError("empty action domain")
        mirror = np.conj(c[::-1, ::-1, :])
        scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        if np.abs(c - mirror).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("coefficients are not Hermitian; field would be complex-valued")
        c = 0.5 * (c + mirror)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    # -- shape -------------------------------------------------------------
    @property
    def Kx(self):
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def Ky(self):
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def M(self):
        return self.coeffs.shape[2]

    @cached_property
    def zgrid(self):
        return np.linspace(self.a, self.b, self.M)

    @cached_property
    def kx(self):
        return np.arange(-self.Kx, self.Kx + 1)

    @cached_property
    def ky(self):
        return np.arange(-self.Ky, self.Ky + 1)

    @cached_property
    def decay(self):
        """Non-increasing envelope of max |c_k(z)| as a function of |k1|+|k2|."""
        kk = np.abs(self.kx)[:, None] + np.abs(self.ky)[None, :]
        mags = np.abs(self.coeffs).max(axis=2)
        raw = np.array([mags[kk == n].max(initial=0.0) for n in range(self.Kx + self.Ky + 1)])
        return np.maximum.accumulate(raw[::-1])[::-1]

    @cached_property
    def norm(self):
        """sup_z sum_k |c_k(z)|, a bound on the sup of the field."""
        return float(np.abs(self.coeffs).sum(axis=(0, 1)).max())

    @cached_property
    def _spline(self):
        flat = self.coeffs.reshape(-1, self.M).T
        return CubicSpline(self.zgrid, flat, axis=0)

    # -- constructors ------------------------------------------------------
    @classmethod
    def zeros(cls, a, b, Kx=0, Ky=0, M=256):
        return cls(np.zeros((2 * Kx + 1, 2 * Ky + 1, M), complex), a, b)

    @classmethod
    def constant(cls, value, a, b, M=256):
        c = np.zeros((1, 1, M), complex)
        c[0, 0, :] = value
        return cls(c, a, b)

    @classmethod
    def from_modes(cls, modes, a, b, Kx, Ky, M=256):
        """
        Build a field from ``{(k1, k2): f(z)}`` where ``f`` is a constant or
        a vectorised callable. Conjugate modes are filled in automatically.
        """
        z = np.linspace(a, b, M)
        c = np.zeros((2 * Kx + 1, 2 * Ky + 1, M), complex)
        for (k1, k2), f in modes.items():
            if callable(f):
                vals = f(z)
            elif np.ndim(f) == 0:
                vals = np.full(M, f, dtype=complex)
            else:
                vals = np.asarray(f, dtype=complex)
            if (k1, k2) == (0, 0):
                c[Kx, Ky] += np.real(vals)
                continue
            c[k1 + Kx, k2 + Ky] += vals
            c[-k1 + Kx, -k2 + Ky] += np.conj(vals)
        return cls(c, a, b)

    @classmethod
    def random(cls, rng, a, b, Kx=6, Ky=6, M=256, amplitude=1.0, decay=0.5,
               zero_x_average=False):
        """
        Random analytic field with ``|c_k(z)| <= amplitude * decay**(|k1|+|k2|)``.

        Each mode is ``amplitude * decay**|k| * (u + v cos(z + w)) / 2`` with
        complex ``|u|, |v| <= 1``, so the coefficients are entire in z.
        """
        z = np.linspace(a, b, M)
        modes = {}
        for k1, k2 in [(0, 0)] + _half_plane(Kx, Ky):
            if zero_x_average and k1 == 0:
                continue
            u = rng.uniform(-1, 1) + 1j * rng.uniform(-1, 1)
            v = rng.uniform(-1, 1) + 1j * rng.uniform(-1, 1)
            w = rng.uniform(0, TWO_PI)
            s = amplitude * decay ** (abs(k1) + abs(k2)) / (2.0 * math.sqrt(2.0))
            modes[(k1, k2)] = s * (u + v * np.cos(z + w))
        return cls.from_modes(modes, a, b, Kx, Ky, M)

    # -- evaluation --------------------------------------------------------
    def _check_z(self, z):
        slack = DEFAULT_TOLERANCES.domain_slack * max(1.0, abs(self.b) + abs(self.a))
        if np.any(z < self.a - slack) or np.any(z > self.b + slack) or not np.all(np.isfinite(z)):
            bad = z[(z < self.a - slack) | (z > self.b + slack) | ~np.isfinite(z)]
            raise OutOfDomain(f"z={bad[0]!r} outside [{self.a}, {self.b}]")

    def coefficients_at(self, z, nu=0):
        """Coefficient matrices at the given actions, shape (P, 2Kx+1, 2Ky+1)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        self._check_z(z)
        vals = self._spline(z, nu) if nu else self._spline(z)
        return vals.reshape(z.shape[0], 2 * self.Kx + 1, 2 * self.Ky + 1)

    def evaluate(self, x, y, z, dx=0, dy=0, dz=0, check_real=False, chunk=8192):
        """
        Evaluate the field (or one of its partial derivatives) at states.

        ``dx``/``dy`` are derivative orders in the angles, ``dz`` in the
        action (0 or 1, from the spline).
        """
        x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, z)))
        shape = x.shape
        x, y, z = x.ravel(), y.ravel(), z.ravel()
        out = np.empty(x.shape[0])
        kxf = (1j * self.kx) ** dx
        kyf = (1j * self.ky) ** dy
        for s in range(0, x.shape[0], chunk):
            sl = slice(s, s + chunk)
            C = self.coefficients_at(z[sl], nu=dz)
            ex = np.exp(1j * np.outer(x[sl], self.kx)) * kxf
            ey = np.exp(1j * np.outer(y[sl], self.ky)) * kyf
            val = np.einsum("pi,pi->p", ex, np.einsum("pij,pj->pi", C, ey))
            if check_real:
                bound = np.abs(C).sum(axis=(1, 2)) + 1e-300
                resid = np.abs(val.imag)
                if np.any(resid > DEFAULT_TOLERANCES.realness * np.maximum(bound, 1.0)):
                    raise AssertionError(f"imaginary residue {resid.max():.3e} exceeds tolerance")
            out[sl] = val.real
        return out.reshape(shape)

    def __call__(self, x, y, z):
        return self.evaluate(x, y, z)

    # -- transformations ---------------------------------------------------
    def with_coeffs(self, coeffs):
        return TrigField(coeffs, self.a, self.b)

    def project_assumption1(self):
        c = np.array(self.coeffs)
        c[self.Kx] = 0.0
        return self.with_coeffs(c)

    def x_average(self):
        """The k1 = 0 row: a field independent of x."""
        c = np.zeros_like(self.coeffs)
        c[self.Kx] = self.coeffs[self.Kx]
        return self.with_coeffs(c)

    def truncate_x(self, N):
        """Drop every mode with |k1| > N."""
        c = np.array(self.coeffs)
        c[np.abs(self.kx) > N] = 0.0
        return self.with_coeffs(c)

    def scaled(self, factor):
        return self.with_coeffs(self.coeffs * factor)

    # -- serialisation -----------------------------------------------------
    def to_json_dict(self):
        flat = self.coeffs.ravel()  # row-major: k1, k2, grid index
        return {
            "Kx": self.Kx,
            "Ky": self.Ky,
            "a": self.a,
            "b": self.b,
            "M": self.M,
            "coeffs": [[float(v.real), float(v.imag)] for v in flat],
        }

    @classmethod
    def from_json_dict(cls, d):
        Kx, Ky, M = int(d["Kx"]), int(d["Ky"]), int(d["M"])
        arr = np.asarray(d["coeffs"], dtype=float)
        c = (arr[:, 0] + 1j * arr[:, 1]).reshape(2 * Kx + 1, 2 * Ky + 1, M)
        return cls(c, d["a"], d["b"])

    def dumps(self):
        return json.dumps(self.to_json_dict())

    @classmethod
    def loads(cls, text):
        return cls.from_json_dict(json.loads(text))


def eval_trig_field(field, s):
    """Evaluate ``field`` at an :class:`AngleActionState` (real scalar)."""
    return float(field.evaluate(s.x, s.y, s.z, check_real=True))


def project_assumption1(field):
    """Zero every k1 = 0 coefficient so the field has vanishing x-average."""
    return field.project_assumption1()


@dataclass(frozen=True, eq=False)
class AAAMapSpec:
    """
    The degenerate action-angle-angle map

        x1 = x + z + eps X(x, y, z)
        y1 = y + eps g0(z) + eps Y(x, y, z)
        z1 = z + eps Z(x, y, z)

    with the twist fixed to f(z) = z. ``strict`` enforces the zero x-average
    of Y and Z and the second-twist floor ``g0'' >= c1`` at construction;
    turn it off only to build deliberate counterexamples.
    """

    epsilon: float
    g0: Drift
    X: TrigField
    Y: TrigField
    Z: TrigField
    c1: float | None = None
    strict: bool = True

    def __post_init__(self):
        if not (self.epsilon >= 0.0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be a finite non-negative number")
        doms = {(f.a, f.b) for f in (self.X, self.Y, self.Z)}
        if len(doms) != 1:
            raise ValueError("X, Y, Z must share one action domain")
        if not self.strict:
            return
        for name, f in (("Y", self.Y), ("Z", self.Z)):
            if np.abs(f.coeffs[f.Kx]).max(initial=0.0) != 0.0:
                raise ValueError(f"{name} has a non-zero x-average")
        twist = self.g0.min_second_derivative(self.a, self.b, self.X.M)
        floor = self.c1 if self.c1 is not None else 0.0
        if not twist > 0.0 or twist < floor:
            raise ValueError(f"second twist condition fails: min g0'' = {twist:.3g}, c1 = {floor}")

    @property
    def a(self):
        return self.X.a

    @property
    def b(self):
        return self.X.b

    @classmethod
    def unperturbed(cls, epsilon, g0, a, b, M=256):
        zero = TrigField.zeros(a, b, M=M)
        return cls(epsilon, g0, zero, zero, zero)

    def increments(self, x, y, z):
        """Raw (un-wrapped) increments (dx, dy, dz) of one map step."""
        eps = self.epsilon
        dx = z + eps * self.X.evaluate(x, y, z)
        dy = eps * self.g0(z) + eps * self.Y.evaluate(x, y, z)
        dz = eps * self.Z.evaluate(x, y, z)
        return dx, dy, dz

    def apply(self, x, y, z):
        """One step, angles not reduced mod 2pi."""
        dx, dy, dz = self.increments(x, y, z)
        return x + dx, y + dy, z + dz


@dataclass(frozen=True)
class HillFlowSpec:
    """
    Periodically forced swirling Hill's vortex.

    Time ``t`` is the physical time of the flow. The rescaled time is
    ``tau = c t`` and the forcing frequency is ``Omega = omega * c``, so
    one forcing period is ``2pi/omega`` in tau and ``2pi/Omega`` in t.
    """

    c: float
    omega: float = 1.0
    forcing: bool = True
    r_min: float = DEFAULT_TOLERANCES.r_min

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("swirl strength c must be positive")
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    @classmethod
    def from_epsilon(cls, epsilon, omega=1.0, forcing=True):
        if not epsilon > 0:
            raise ValueError("epsilon must be positive (it is 1/c)")
        return cls(1.0 / epsilon, omega, forcing)

    @property
    def epsilon(self):
        return 1.0 / self.c

    @property
    def Omega(self):
        return self.omega * self.c

    @property
    def period(self):
        """Forcing period in physical time."""
        return TWO_PI / self.Omega

    def unforced(self):
        return HillFlowSpec(self.c, self.omega, False, self.r_min)


@dataclass(frozen=True)
class EstimateConstants:
    """
    Proof constants that the analysis never pins down; supplied by
    configuration. Defaults are 1.
    """

    a1: float = 1.0
    a4: float = 1.0
    b1: float = 1.0
    b5: float = 1.0
    b6: float = 1.0
    c3: float = 1.0
    c5: float = 1.0
    c6: float = 5.0
    c_w: float = 1.0
    c1: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{f.name} must be a positive finite number, got {v!r}")
