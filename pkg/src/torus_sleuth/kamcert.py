"""
Log-space certificates for the finite and infinite parameter schedules,
the step-size estimates they feed, and the frequency-drift ledger.

Every recurrence is carried in natural logarithms: the raw d_n underflow
double precision long before the schedules end.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import Inadmissible, ScheduleMissing

__all__ = [
    "FiniteInputs",
    "InfiniteInputs",
    "Check",
    "Certificate",
    "FiniteSchedule",
    "InfiniteSchedule",
    "certify_finite",
    "certify_infinite",
    "finite_closed_form",
    "finite_step_prediction",
    "second_step_bound",
    "sensitivity",
    "largest_d0",
    "Handoff",
    "handoff",
    "DriftLedger",
    "drift_accumulate",
]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class Check:
    """``lhs < rhs`` compared as natural logs; ``const`` names a linear prefactor."""

    lhs: float
    rhs: float
    const: str | None = None

    @property
    def passed(self):
        return bool(self.lhs < self.rhs)

    def to_json_dict(self):
        return {"lhs": _j(self.lhs), "rhs": _j(self.rhs), "pass": self.passed}


def _j(v):
    return None if not math.isfinite(v) else float(v)


@dataclass
class Certificate:
    inputs: dict
    log_d: list
    log_e: list
    checks: dict
    verdict: str
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict == "PASS"

    def to_json_dict(self):
        out = {
            "inputs": self.inputs,
            "log_d": [float(v) for v in self.log_d],
            "log_e": [float(v) for v in self.log_e],
            "checks": {k: c.to_json_dict() for k, c in self.checks.items()},
            "verdict": self.verdict,
            "log_scale": "natural",
        }
        if self.extra:
            out["extra"] = self.extra
        return out

    def dumps(self, **kw):
        return json.dumps(self.to_json_dict(), **kw)


# --------------------------------------------------------------------------
# finite schedule
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class FiniteInputs:
    d0: float | None = 1e-34
    gamma1: float = 0.01
    c7: float = 4.0
    r0: float = 0.5
    mu_hat: float = 3.0
    K_hat: float = 1.0
    a1: float = 1.0
    a4: float = 1.0
    n_steps: int = 6
    log_d0: float | None = None

    @property
    def chi(self):
        return 2.0 * self.mu_hat + 3.0

    @property
    def ln_d0(self):
        return self.log_d0 if self.log_d0 is not None else math.log(self.d0)

    @property
    def ln_eps(self):
        return 0.5 * self.ln_d0


@dataclass
class FiniteSchedule:
    inputs: FiniteInputs
    log_d: np.ndarray
    log_e: np.ndarray
    log_s: np.ndarray
    r: np.ndarray
    certificate: Certificate


def _finite_admissibility(inp: FiniteInputs):
    lhs = inp.ln_d0
    rhs = -20.0 * math.log(inp.c7) + 7.0 * inp.chi * math.log(inp.r0) + 14.0 * inp.gamma1 * inp.ln_eps
    return lhs, rhs


def finite_step_prediction(d, inp: FiniteInputs, n=0):
    """``d_{n+1}`` from ``d_n = d`` by the finite recurrence (plain floats)."""
    ln = (-inp.chi * math.log(inp.r0) + (n + 1) * math.log(inp.c7) + 1.2 * math.log(d)
          - 2.0 * inp.gamma1 * inp.ln_eps)
    return math.exp(ln)


def finite_closed_form(inp: FiniteInputs, n):
    """
    ``log d_{n+1}`` from the unrolled product with ``beta = 6/5``: the
    r0 and eps exponents carry ``sum_{k=0}^{n} beta**k`` and the c7
    exponent ``sum_{k=0}^{n} (n+1-k) beta**k``.
    """
    beta = 1.2
    geo = math.fsum(beta ** k for k in range(n + 1))
    lin = math.fsum((n + 1 - k) * beta ** k for k in range(n + 1))
    return ((-inp.chi * math.log(inp.r0) - 2.0 * inp.gamma1 * inp.ln_eps) * geo
            + math.log(inp.c7) * lin + beta ** (n + 1) * inp.ln_d0)


def second_step_bound(d, s, sigma, r_minus_rho, eps, gamma1, mu_hat, a4=1.0):
    """
    Summands of the second-step bound on ``|X| + |Z|`` after one step,
    ``a4 * (D g d s, D g d^2 / s, D eps^(1 - 2 gamma1) d, (sigma/s)^5 d)``
    with ``D = (r - rho)^(-2 mu_hat - 3)`` and ``g = eps^(-2 gamma1)``.
    """
    D = r_minus_rho ** (-2.0 * mu_hat - 3.0)
    eg = eps ** (-2.0 * gamma1)
    terms = (a4 * D * eg * d * s,
             a4 * D * eg * d * d / s,
             a4 * D * eps ** (1.0 - 2.0 * gamma1) * d,
             a4 * (sigma / s) ** 5 * d)
    return terms


def certify_finite(inp: FiniteInputs) -> FiniteSchedule:
    """
    Evaluate the finite schedule and its inequality chain.

    PASS requires ``d_6 < d_0^(3/2)``, ``e_0 < 1``, ``s_{n+1}/s_n < 1/3``
    and the single-step inequality chain at every step. The final ``|X_6| + |Z_6|``
    coefficient is reported summand by summand but does not enter the
    verdict.
    """
    if not inp.gamma1 < 0.2 or inp.gamma1 <= 0:
        raise ValueError("gamma1 must lie in (0, 1/5)")
    if not inp.c7 > 3.0:
        raise ValueError("c7 must exceed 3")
    if not 0.0 < inp.r0 < 1.0:
        raise ValueError("r0 must lie in (0, 1)")
    lhs, rhs = _finite_admissibility(inp)
    if not lhs < rhs:
        raise Inadmissible(f"log d0 = {lhs:.6g} is not below the admissibility bound {rhs:.6g}",
                           lhs, rhs)
    L_r, L_c, L_e = math.log(inp.r0), math.log(inp.c7), inp.ln_eps
    chi, n_steps = inp.chi, int(inp.n_steps)
    log_d = [inp.ln_d0]
    for n in range(n_steps):
        log_d.append(-chi * L_r + (n + 1) * L_c + 1.2 * log_d[-1] - 2.0 * inp.gamma1 * L_e)
    log_d = np.array(log_d)
    n_idx = np.arange(n_steps + 1)
    log_e = -5.0 * chi * L_r + 5.0 * (n_idx + 6) * L_c - 10.0 * inp.gamma1 * L_e + log_d
    log_s = (11.0 / 50.0) * log_d
    r = inp.r0 / 2.0 * (1.0 + 2.0 ** -n_idx.astype(float))

    checks = {"admissible": Check(lhs, rhs)}
    checks["d_final<d0^1.5"] = Check(log_d[-1], 1.5 * inp.ln_d0)
    checks["e0<1"] = Check(log_e[0], 0.0)
    ln3 = math.log(3.0)
    lnK, lna1 = math.log(inp.K_hat), math.log(inp.a1)
    for n in range(n_steps):
        tag = f"[{n}]"
        ln_gap = math.log(inp.r0) - (n + 2) * LN2          # r_n - r_{n+1}
        ls, lsig, ld = log_s[n], log_s[n + 1], log_d[n]
        checks["s_ratio<1/3" + tag] = Check(lsig - ls, -ln3)
        checks["r<1" + tag] = Check(math.log(r[n]), 0.0)
        checks["3sigma<s" + tag] = Check(ln3 + lsig, ls)
        checks["s<(r-rho)/4" + tag] = Check(ls, ln_gap - 2 * LN2)
        checks["d<s/6" + tag] = Check(ld, ls - math.log(6.0))
        ln_th = lna1 - 2 * lnK + (-2 * inp.mu_hat - 2) * ln_gap + ld - ls - 2 * inp.gamma1 * L_e
        ln_th2 = lna1 - 4 * lnK + (-4 * inp.mu_hat - 3) * ln_gap + ld - 4 * inp.gamma1 * L_e
        checks["theta<theta2/s" + tag] = Check(ln_th, ln_th2 - ls)
        checks["theta2/s<1/7" + tag] = Check(ln_th2 - ls, -math.log(7.0), const="a1")
    passed = all(c.passed for c in checks.values())

    extra = {}
    if n_steps >= 2:
        # final |X6| + |Z6| coefficient, summand by summand (informational)
        ld5, ld6 = log_d[-2], log_d[-1]
        pre = math.log(inp.a4) + 7.0 * chi * LN2
        summands = {
            "c7^-6 d5^(1/50)": pre - 6 * L_c + ld5 / 50.0,
            "c7^-6 d5^(29/50)": pre - 6 * L_c + 29.0 * ld5 / 50.0,
            "r0^chi c7^-10": pre + chi * L_r - 10 * L_c,
            "(d6/d5)^(1/10)": math.log(inp.a4) + (ld6 - ld5) / 10.0,
        }
        total = _logsumexp(list(summands.values()))
        extra["final_XZ_coefficient"] = {"log_summands": summands, "log_total": total,
                                         "below_one": bool(total < 0.0)}
    cert = Certificate(_inputs_json(inp), list(log_d), list(log_e), checks,
                       "PASS" if passed else "FAIL", extra)
    return FiniteSchedule(inp, log_d, log_e, log_s, r, cert)


def _logsumexp(v):
    m = max(v)
    return m + math.log(math.fsum(math.exp(x - m) for x in v))


def _inputs_json(inp):
    d = asdict(inp)
    d["chi"] = inp.chi
    d["ln_d0"] = inp.ln_d0
    return d


# --------------------------------------------------------------------------
# infinite schedule
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class InfiniteInputs:
    d0: float | None = 1e-141
    r0: float = 0.25
    gamma2: float = 0.01
    c7: float = 3.0
    mu: float = 5.0
    K0: float = 1.0
    b1: float = 1.0
    b5: float = 1.0
    b6: float = 1.0
    log_d0: float | None = None
    log_eps: float | None = None   # defaults to log d0 / 2

    @property
    def chi(self):
        return 2.0 * self.mu + 5.0

    @property
    def ln_d0(self):
        return self.log_d0 if self.log_d0 is not None else math.log(self.d0)

    @property
    def ln_eps(self):
        return self.log_eps if self.log_eps is not None else 0.5 * self.ln_d0


@dataclass
class InfiniteSchedule:
    inputs: InfiniteInputs
    log_d: np.ndarray
    log_e: np.ndarray
    log_s: np.ndarray
    r: np.ndarray
    K: np.ndarray
    certificate: Certificate


def certify_infinite(inp: InfiniteInputs, n_steps=30) -> InfiniteSchedule:
    """
    Evaluate the infinite schedule over ``n_steps`` steps.

    PASS requires admissibility, strictly decreasing ``d_n`` and ``e_n``
    with ``e_0 < 1``, ``s_{n+1}/s_n < 1/3``, and the displayed
    coefficients of the ``|H|`` and ``|Phi| + |Psi|`` induction bounds
    below one at every step.
    """
    if inp.mu < 5:
        raise ValueError("mu must be >= 5")
    if not inp.c7 > 2.0:
        raise ValueError("c7 must exceed 2")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    L_r, L_c, L_e, L_K = math.log(inp.r0), math.log(inp.c7), inp.ln_eps, math.log(inp.K0)
    chi, g2 = inp.chi, inp.gamma2
    # d0^(1 - 24 g2) < r0^(8 chi) c7^(-72); the sign of 1 - 24 g2 decides the direction
    lhs = (1.0 - 24.0 * g2) * inp.ln_d0
    rhs = 8.0 * chi * L_r - 72.0 * L_c
    if 1.0 - 24.0 * g2 <= 0.0 or not lhs < rhs:
        raise Inadmissible(f"(1 - 24 gamma2) log d0 = {lhs:.6g} vs bound {rhs:.6g}", lhs, rhs)
    log_d = [inp.ln_d0]
    for n in range(n_steps):
        log_d.append(-chi * L_r + (n + 1) * L_c - 6.0 * g2 * L_e + 1.125 * log_d[-1])
    log_d = np.array(log_d)
    n_idx = np.arange(n_steps + 1)
    log_e = -8.0 * chi * L_r + 8.0 * (n_idx + 9) * L_c - 48.0 * g2 * L_e + log_d
    log_s = (11.0 / 16.0) * log_d
    r = inp.r0 / 2.0 * (1.0 + 2.0 ** -n_idx.astype(float))
    K = np.array([math.ldexp(inp.K0, -int(n)) for n in n_idx])

    checks = {"admissible": Check(lhs, rhs), "e0<1": Check(log_e[0], 0.0)}
    ln3 = math.log(3.0)
    for n in range(n_steps):
        tag = f"[{n}]"
        checks["d_decreasing" + tag] = Check(log_d[n + 1], log_d[n])
        checks["e_decreasing" + tag] = Check(log_e[n + 1], log_e[n])
        checks["s_ratio<1/3" + tag] = Check(log_s[n + 1] - log_s[n], -ln3)
        ld, ld1 = log_d[n], log_d[n + 1]
        j = n
        c15 = -1.5 * (j + 1) * L_c
        H = [
            inp.chi / 2 * L_r + (chi * (j + 2) + 2 * j) * LN2 - 2 * L_K + c15 + 7 * g2 * L_e,
            (2 - chi / 2) * L_r + (2 * (chi - 1) * (j + 2) + 4 * j) * LN2 - 4 * L_K + c15
            + 5 * g2 * L_e + ld / 8,
            (2 - 1.5 * chi) * L_r + (-(j + 2) * (2 - 3 * chi) + 6 * j) * LN2 - 6 * L_K + c15
            + 3 * g2 * L_e + 7 * ld / 16,
            (1 + chi / 2) * L_r + (-(j + 2) * (1 - chi) + 2 * j) * LN2 - 2 * L_K + c15
            + 7 * g2 * L_e + 2 * ld / 16,
            9.0 / 16.0 * (ld1 - ld),
        ]
        c1_ = -(j + 1) * L_c
        PP = [
            (chi * (j + 2) + 2 * j) * LN2 - 2 * L_K + c1_ + 4 * g2 * L_e + ld / 16,
            LN2 + L_r + (-(1 - chi) * (j + 2) + 2 * j) * LN2 - 2 * L_K + c1_ + 4 * g2 * L_e
            + 3 * ld / 16,
            (2 - chi) * L_r + (-(j + 2) * (2 - 2 * chi) + 4 * j) * LN2 - 4 * L_K + c1_ + 2 * g2 * L_e,
        ]
        checks["H_coefficient<1" + tag] = Check(math.log(inp.b5) + _logsumexp(H), 0.0, const="b5")
        checks["PhiPsi_coefficient<1" + tag] = Check(math.log(inp.b6) + _logsumexp(PP), 0.0, const="b6")
    passed = all(c.passed for c in checks.values())
    cert = Certificate(_inputs_json(inp), list(log_d), list(log_e), checks,
                       "PASS" if passed else "FAIL")
    return InfiniteSchedule(inp, log_d, log_e, log_s, r, K, cert)


def sensitivity(cert: Certificate, const):
    """
    Largest value of a linear prefactor for which every check scaled by it
    still passes, holding the rest fixed. Returns ``None`` if no check
    depends on ``const``; the value may be below the current one.
    """
    current = cert.inputs.get(const)
    margins = [c.rhs - c.lhs for c in cert.checks.values() if c.const == const]
    if not margins or current is None:
        return None
    return float(current * math.exp(min(margins)))


def largest_d0(certify, make_inputs, log_lo, log_hi, tol=1e-6, maxiter=200):
    """
    Bisection in ``log d0`` for the largest value with a PASS verdict.

    ``make_inputs(log_d0)`` builds an input record, ``certify`` evaluates
    it. Inadmissible counts as failure. ``log_lo`` must pass.
    """
    def ok(ld):
        try:
            return certify(make_inputs(ld)).certificate.passed
        except Inadmissible:
            return False

    if not ok(log_lo):
        raise ValueError("lower end of the bracket does not pass")
    if ok(log_hi):
        return log_hi
    lo, hi = log_lo, log_hi
    for _ in range(maxiter):
        if hi - lo <= tol * max(1.0, abs(lo)):
            break
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class Handoff:
    """Admissibility of a finite-schedule output as the infinite schedule's start."""

    log_d0: float          # start handed over, 1.5 * log d_final
    given: Check           # at the supplied (c7, gamma2)
    best: Check            # limit c7 -> 2, gamma2 -> 0 with r0, mu fixed

    def to_json_dict(self):
        return {"log_d0": self.log_d0, "given": self.given.to_json_dict(),
                "best": self.best.to_json_dict()}


def handoff(finite: FiniteSchedule, inf: InfiniteInputs) -> Handoff:
    """
    Feed the finite schedule into the infinite one.

    The size after the finite steps is tracked as ``d^(3/2)`` of the last
    ``d``. ``best`` is the supremum of the admissibility bound over
    ``c7 > 2`` and ``gamma2 > 0``; if it fails no choice of the two helps.
    """
    ld = 1.5 * float(finite.log_d[-1])
    chi = inf.chi
    given = Check((1.0 - 24.0 * inf.gamma2) * ld,
                  8.0 * chi * math.log(inf.r0) - 72.0 * math.log(inf.c7))
    best = Check(ld, 8.0 * chi * math.log(inf.r0) - 72.0 * LN2)
    return Handoff(ld, given, best)


# --------------------------------------------------------------------------
# frequency drift
# --------------------------------------------------------------------------
@dataclass
class DriftLedger:
    g: np.ndarray          # g_1 .. g_{J+1}
    g_eta: np.ndarray
    partial: np.ndarray    # partial sums of g
    beta: np.ndarray       # beta_1 .. beta_{J+1}
    bound_g: np.ndarray    # 2 d_j prod (1 + d_i/s_i)
    c1: float
    c5: float
    c6: float
    c_w: float
    verdict: str

    @property
    def g_star(self):
        return float(self.partial[-1]) if self.partial.size else 0.0

    def to_json_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}


def drift_accumulate(schedule, epsilon, Xt, Yt, eps_g0_eta, c1=1.0, c5=1.0, c6=None, c_w=1.0,
                     j_max=None, g_eta=None):
    """
    Accumulate ``g_{j+1} = -(eps g0_eta + sum_{l<=j} g_l,eta) Xt_j + Yt_j``.

    ``schedule`` supplies ``log_d`` and ``log_s``. Derivatives ``g_l,eta``
    default to the Cauchy estimate ``g_l / s_{l-1}``. ``beta_j =
    c6 c_w d_{j-1} / eps`` with ``c6 = 5 max(c5, 1)`` by default; PASS iff
    ``sum beta < c1 / 2`` (which also keeps the effective twist above
    ``eps c1 / 2``).
    """
    if schedule is None or getattr(schedule, "log_d", None) is None:
        raise ScheduleMissing("drift accumulation needs a certified schedule")
    log_d = np.asarray(schedule.log_d)
    log_s = np.asarray(schedule.log_s)
    J = len(log_d) - 1 if j_max is None else int(j_max)
    if J > len(log_d) - 1 or len(Xt) < J or len(Yt) < J:
        raise ScheduleMissing("schedule or averages shorter than j_max")
    c6 = 5.0 * max(c5, 1.0) if c6 is None else c6
    d = np.exp(log_d)
    ds = np.exp(log_d - log_s)
    g = np.zeros(J)
    ge = np.zeros(J)
    bound = np.zeros(J)
    for j in range(J):
        lead = eps_g0_eta + ge[:j].sum()
        g[j] = -lead * Xt[j] + Yt[j]
        ge[j] = g_eta[j] if g_eta is not None else g[j] / math.exp(log_s[j])
        bound[j] = 2.0 * d[j] * math.prod(1.0 + ds[i] for i in range(1, j))
    beta = c6 * c_w * d[:J] / epsilon
    ok = math.fsum(beta.tolist()) < c1 / 2.0
    ok = ok and (epsilon * c1 - epsilon * beta.sum() > epsilon * c1 / 2.0)
    return DriftLedger(g, ge, np.cumsum(g), beta, bound, c1, c5, c6, c_w, "PASS" if ok else "FAIL")
