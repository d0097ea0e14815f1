"""
Compiled Dormand-Prince 8(5,3) stepper for the forced Hill's vortex.

Only used for stroboscopic sampling: each forcing period is integrated
exactly to its end point (the last step is clipped), and theta is kept
reduced mod 2pi so the relative error control never acts on a huge
accumulated angle. The tableau and the combined 5th/3rd order error
norm are the ones scipy's DOP853 uses.
"""
import math

import numba
import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

# try TBB last: old system TBB builds only produce a warning and get skipped anyway
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

OK = 0
SINGULAR_AXIS = 2
STEP_FAILURE = 3
SAFETY = 0.8

_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:_NS])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)


@numba.njit(cache=True)
def _rhs(y, t, c, Om, amp, out):
    r = y[0]
    z = y[1]
    th = y[2]
    s = amp * math.sin(Om * t)
    sq = math.sqrt(2.0 * r)
    sth = math.sin(th)
    out[0] = r * z + sq * sth * s
    out[1] = 1.0 - 2.0 * r * r - z * z - z * sth * s / sq
    out[2] = 2.0 * c / (r * r) + sq * math.cos(th) * s


@numba.njit(cache=True)
def strobe_one(r, z, th, c, Om, amp, T, n_sections, rtol, atol, r_min, out, wind,
               A, B, C, E3, E5):
    """
    Integrate one initial condition over ``n_sections`` forcing periods.

    Writes (r, z, theta mod 2pi) at t = k T into ``out[k]`` for k = 0..n and
    the accumulated theta winding into ``wind[k]``. Returns a status code and
    the number of completed sections. theta is reduced after every
    accepted step, so the relative tolerance always acts on a value in
    [0, 2pi).
    """
    ns = B.shape[0]
    K = np.empty((ns + 1, 3))
    y = np.array([r, z, th])
    ys = np.empty(3)
    yn = np.empty(3)
    out[0, :] = y
    wind[0] = 0
    turns = 0
    h = T / 16.0
    hmin = 1e-14 * T
    _rhs(y, 0.0, c, Om, amp, K[0])
    for k in range(n_sections):
        t = k * T
        t_end = (k + 1) * T
        while t < t_end:
            hs = h
            last = False
            if t + hs >= t_end:
                hs = t_end - t
                last = True
            low = False
            for s in range(1, ns):
                for d in range(3):
                    acc = 0.0
                    for j in range(s):
                        acc += A[s, j] * K[j, d]
                    ys[d] = y[d] + hs * acc
                if ys[0] <= r_min:
                    low = True
                    ys[0] = r_min
                _rhs(ys, t + C[s] * hs, c, Om, amp, K[s])
            for d in range(3):
                acc = 0.0
                for j in range(ns):
                    acc += B[j] * K[j, d]
                yn[d] = y[d] + hs * acc
            if yn[0] <= r_min:
                low = True
                err = 10.0
            else:
                _rhs(yn, t + hs, c, Om, amp, K[ns])
                e5 = 0.0
                e3 = 0.0
                for d in range(3):
                    sc = atol + rtol * max(abs(y[d]), abs(yn[d]))
                    a5 = 0.0
                    a3 = 0.0
                    for j in range(ns + 1):
                        a5 += E5[j] * K[j, d]
                        a3 += E3[j] * K[j, d]
                    e5 += (a5 / sc) ** 2
                    e3 += (a3 / sc) ** 2
                if e5 == 0.0 and e3 == 0.0:
                    err = 0.0
                else:
                    err = hs * e5 / math.sqrt((e5 + 0.01 * e3) * 3.0)
            # a stage that dipped below r_min is a rejected step, not an accepted one
            if low:
                err = max(err, 10.0)
            if err <= 1.0:
                t = t_end if last else t + hs
                for d in range(3):
                    y[d] = yn[d]
                    K[0, d] = K[ns, d]
                # rhs sees theta only through sin/cos, so the FSAL stage stays valid
                if y[2] >= 2.0 * math.pi or y[2] < 0.0:
                    n_turns = math.floor(y[2] / (2.0 * math.pi))
                    y[2] -= 2.0 * math.pi * n_turns
                    turns += n_turns
                # safety 0.8 rather than 0.9: the fast theta rotation makes the error
                # estimate phase dependent, and fewer rejections outweigh smaller steps
                fac = 10.0 if err == 0.0 else min(10.0, SAFETY * err ** (-1.0 / 8.0))
                # a clipped final step says nothing about the next period's step size
                if not last or hs * fac < h:
                    h = hs * fac
            else:
                h = hs * max(0.2, SAFETY * err ** (-1.0 / 8.0))
                if h < hmin:
                    if low:
                        return SINGULAR_AXIS, k
                    return STEP_FAILURE, k
        if y[2] >= 2.0 * math.pi:
            y[2] -= 2.0 * math.pi
            turns += 1
        out[k + 1, :] = y
        wind[k + 1] = turns
    return OK, n_sections


@numba.njit(cache=True, parallel=True)
def strobe_many(ics, c, Om, amp, T, n_sections, rtol, atol, r_min, out, wind, status,
                A, B, C, E3, E5):
    for i in numba.prange(ics.shape[0]):
        st, _ = strobe_one(ics[i, 0], ics[i, 1], ics[i, 2], c, Om, amp, T, n_sections,
                           rtol, atol, r_min, out[i], wind[i], A, B, C, E3, E5)
        status[i] = st


def run_sections(ics, c, Om, amp, T, n_sections, rtol, atol, r_min):
    ics = np.ascontiguousarray(ics, dtype=np.float64)
    n = ics.shape[0]
    out = np.full((n, n_sections + 1, 3), np.nan)
    wind = np.zeros((n, n_sections + 1), dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    strobe_many(ics, float(c), float(Om), float(amp), float(T), int(n_sections),
                float(rtol), float(atol), float(r_min), out, wind, status, _A, _B, _C, _E3, _E5)
    return out, wind, status
