"""
Run configuration: nested JSON with per-experiment parameter sections,
scale presets and a 64-bit seed. Every field of the resolved config is
explicit, so an emitted ``config.json`` replays the run exactly.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError

__all__ = ["RunConfig", "DEFAULTS", "PRESETS", "EXPERIMENTS", "parse_override"]

EXPERIMENTS = ("simulate", "average-step", "second-step", "diophantine", "certify",
               "partition", "chart")

_FIELD = {"a": 0.64, "b": 0.94, "Kx": 6, "Ky": 6, "M": 128, "amplitude": 0.25, "decay": 0.5,
          "g0_quadratic": 0.5}

DEFAULTS = {
    "simulate": {
        "system": "map",
        "epsilon": 0.0,
        "steps": 1000,
        "sections": 10000,
        "ic": None,
        "tol": None,
        "field": dict(_FIELD),
    },
    "average-step": {
        "epsilon": 0.01,
        "K_bar": 1e-3,
        "mu_bar": 3.0,
        "N": None,
        "lattice": [64, 64, 16],
        "field": dict(_FIELD),
    },
    "second-step": {
        "epsilon": 0.01,
        "omega": 0.79,
        "s_hat": 0.1,
        "steps": 6,
        "shrink": 3.5,
        "K_hat": 1e-3,
        "mu_hat": 3.0,
        "gamma1": 0.01,
        "field": dict(_FIELD, Kx=4, Ky=4),
    },
    "diophantine": {
        "epsilon": 0.01,
        "a": 1.0,
        "b": 2.0,
        "K": 1e-3,
        "mu": 5.0,
        "gamma2": 0.01,
        "kmax": 30,
        "mc_samples": 10000,
        "K_bar": 1e-3,
        "mu_bar": 3.0,
        "N": 28,
    },
    "certify": {
        "schedule": "finite",
        "n_steps": 30,
        "finite": {"d0": 1e-34, "log_d0": None, "gamma1": 0.01, "c7": 4.0, "r0": 0.5,
                   "mu_hat": 3.0, "K_hat": 1.0, "a1": 1.0, "a4": 1.0, "n_steps": 6},
        "infinite": {"d0": 1e-141, "log_d0": None, "log_eps": None, "r0": 0.25, "gamma2": 0.01,
                     "c7": 3.0, "mu": 5.0, "K0": 1.0, "b1": 1.0, "b5": 1.0, "b6": 1.0},
    },
    "partition": {
        "epsilon": 0.01,
        "c_unforced": 100.0,
        "n_ics": None,
        "sections": 10000,
        "tol": None,
        "r_range": [0.2, 0.3],
        "z_range": [-0.1, 0.1],
        "ic_coordinate": "r",
        "orders": [8, 8, 8],
        "threshold": None,
        "threshold_factor": 5.0,
        "fit_orders": [3, 16],
        "resolution": [200, 200],
    },
    "chart": {
        "n_I": 64,
        "n_phi": 256,
        "I_range": [1e-6, 0.09],
        "tol": 1e-12,
        "check_points": [[0.02, 1.0], [0.05, 2.5]],
        "epsilon": 0.01,
    },
}

# values a preset fills in wherever the resolved config still holds null
PRESETS = {
    "desk": {"partition": {"n_ics": 700, "tol": 1e-9}, "simulate": {"tol": 1e-9}},
    "paper": {"partition": {"n_ics": 7000, "tol": 1e-9}, "simulate": {"tol": 1e-9}},
}

_SEED_MAX = 2 ** 64


def _merge(base, over, path):
    out = copy.deepcopy(base)
    for k, v in over.items():
        p = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(p, "unknown field")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(p, "expected an object")
            out[k] = _merge(base[k], v, p)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _fill(cfg, preset):
    for k, v in preset.items():
        if isinstance(v, dict):
            _fill(cfg[k], v)
        elif cfg.get(k) is None:
            cfg[k] = v


def _num(p, v, lo=None, hi=None, integer=False, lo_open=False, allow_none=False):
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(p, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(p, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(p, "must be finite")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(p, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(p, f"must be <= {hi}, got {v}")


def _pair(p, v, increasing=True):
    if not (isinstance(v, list) and len(v) == 2):
        raise ConfigError(p, "expected a two-element list")
    for i, x in enumerate(v):
        _num(f"{p}[{i}]", x)
    if increasing and not v[0] < v[1]:
        raise ConfigError(p, "expected lo < hi")


def _check_field(p, f):
    _pair(p + ".(a,b)", [f["a"], f["b"]])
    for k in ("Kx", "Ky"):
        _num(f"{p}.{k}", f[k], lo=0, integer=True)
    _num(f"{p}.M", f["M"], lo=8, integer=True)
    _num(f"{p}.amplitude", f["amplitude"], lo=0)
    _num(f"{p}.decay", f["decay"], lo=0, hi=1, lo_open=True)
    _num(f"{p}.g0_quadratic", f["g0_quadratic"], lo=0, lo_open=True)


def _validate(params):
    s = params["simulate"]
    if s["system"] not in ("map", "hill"):
        raise ConfigError("simulate.system", "must be 'map' or 'hill'")
    _num("simulate.epsilon", s["epsilon"], lo=0)
    if s["system"] == "hill" and s["epsilon"] <= 0:
        raise ConfigError("simulate.epsilon", "the Hill flow needs epsilon > 0 (epsilon = 1/c)")
    _num("simulate.steps", s["steps"], lo=1, integer=True)
    _num("simulate.sections", s["sections"], lo=1, integer=True)
    _num("simulate.tol", s["tol"], lo=0, lo_open=True, allow_none=True)
    if s["ic"] is not None:
        if not (isinstance(s["ic"], list) and len(s["ic"]) == 3):
            raise ConfigError("simulate.ic", "expected three numbers")
        for i, v in enumerate(s["ic"]):
            _num(f"simulate.ic[{i}]", v)
    _check_field("simulate.field", s["field"])

    a = params["average-step"]
    _num("average-step.epsilon", a["epsilon"], lo=0, hi=1, lo_open=True)
    _num("average-step.K_bar", a["K_bar"], lo=0)
    _num("average-step.mu_bar", a["mu_bar"], lo=3)
    _num("average-step.N", a["N"], lo=1, integer=True, allow_none=True)
    if not (isinstance(a["lattice"], list) and len(a["lattice"]) == 3):
        raise ConfigError("average-step.lattice", "expected three integers")
    for i, v in enumerate(a["lattice"]):
        _num(f"average-step.lattice[{i}]", v, lo=2, integer=True)
    _check_field("average-step.field", a["field"])

    q = params["second-step"]
    _num("second-step.epsilon", q["epsilon"], lo=0, hi=1, lo_open=True)
    _num("second-step.s_hat", q["s_hat"], lo=0, lo_open=True)
    _num("second-step.steps", q["steps"], lo=1, integer=True)
    _num("second-step.shrink", q["shrink"], lo=1, lo_open=True)
    _num("second-step.gamma1", q["gamma1"], lo=0, hi=0.2, lo_open=True)
    _num("second-step.mu_hat", q["mu_hat"], lo=3)
    _num("second-step.K_hat", q["K_hat"], lo=0)
    _check_field("second-step.field", q["field"])
    _num("second-step.omega", q["omega"], lo=q["field"]["a"] + q["s_hat"],
         hi=q["field"]["b"] - q["s_hat"])

    d = params["diophantine"]
    _num("diophantine.epsilon", d["epsilon"], lo=0, hi=1, lo_open=True)
    _pair("diophantine.(a,b)", [d["a"], d["b"]])
    _num("diophantine.K", d["K"], lo=0)
    _num("diophantine.mu", d["mu"], lo=5)
    _num("diophantine.gamma2", d["gamma2"], lo=0, hi=1, lo_open=True)
    _num("diophantine.kmax", d["kmax"], lo=1, integer=True)
    _num("diophantine.mc_samples", d["mc_samples"], lo=0, integer=True)
    _num("diophantine.K_bar", d["K_bar"], lo=0)
    _num("diophantine.mu_bar", d["mu_bar"], lo=3)
    _num("diophantine.N", d["N"], lo=1, integer=True)

    c = params["certify"]
    if c["schedule"] not in ("finite", "infinite"):
        raise ConfigError("certify.schedule", "must be 'finite' or 'infinite'")
    _num("certify.n_steps", c["n_steps"], lo=1, integer=True)
    for sect in ("finite", "infinite"):
        for k, v in c[sect].items():
            if k == "n_steps":
                _num(f"certify.{sect}.{k}", v, lo=1, integer=True)
            elif k in ("log_d0", "log_eps"):
                _num(f"certify.{sect}.{k}", v, allow_none=True)
            elif k == "d0":
                _num(f"certify.{sect}.{k}", v, lo=0, allow_none=True)
            else:
                _num(f"certify.{sect}.{k}", v)
        if c[sect]["d0"] is None and c[sect]["log_d0"] is None:
            raise ConfigError(f"certify.{sect}.d0", "either d0 or log_d0 is required")

    p = params["partition"]
    _num("partition.epsilon", p["epsilon"], lo=0)
    _num("partition.c_unforced", p["c_unforced"], lo=0, lo_open=True)
    _num("partition.n_ics", p["n_ics"], lo=2, integer=True, allow_none=True)
    _num("partition.sections", p["sections"], lo=100, integer=True)
    _num("partition.tol", p["tol"], lo=0, lo_open=True, allow_none=True)
    _pair("partition.r_range", p["r_range"])
    _pair("partition.z_range", p["z_range"])
    if p["ic_coordinate"] not in ("r", "R"):
        raise ConfigError("partition.ic_coordinate", "must be 'r' or 'R'")
    if p["r_range"][0] <= 0:
        raise ConfigError("partition.r_range[0]", "must be > 0 (the axis r = 0 is singular)")
    if not (isinstance(p["orders"], list) and len(p["orders"]) == 3):
        raise ConfigError("partition.orders", "expected three integers")
    for i, v in enumerate(p["orders"]):
        _num(f"partition.orders[{i}]", v, lo=1, integer=True)
    _num("partition.threshold", p["threshold"], lo=0, lo_open=True, allow_none=True)
    _num("partition.threshold_factor", p["threshold_factor"], lo=0, lo_open=True)
    _pair("partition.fit_orders", p["fit_orders"], increasing=False)
    _pair("partition.resolution", p["resolution"], increasing=False)
    for i, v in enumerate(p["resolution"]):
        _num(f"partition.resolution[{i}]", v, lo=1, integer=True)

    h = params["chart"]
    _num("chart.n_I", h["n_I"], lo=4, integer=True)
    _num("chart.n_phi", h["n_phi"], lo=16, integer=True)
    _pair("chart.I_range", h["I_range"])
    _num("chart.tol", h["tol"], lo=0, lo_open=True)
    _num("chart.epsilon", h["epsilon"], lo=0, lo_open=True)
    if not isinstance(h["check_points"], list):
        raise ConfigError("chart.check_points", "expected a list of [I, phi1] pairs")
    for i, v in enumerate(h["check_points"]):
        _pair(f"chart.check_points[{i}]", v, increasing=False)


@dataclass
class RunConfig:
    experiment: str
    seed: int = 12345
    output: str = "out"
    preset: str = "desk"
    params: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < _SEED_MAX:
            raise ConfigError("seed", "must be an integer in [0, 2**64)")
        if self.preset not in PRESETS:
            raise ConfigError("preset", f"must be one of {', '.join(PRESETS)}")
        if not isinstance(self.output, str) or not self.output:
            raise ConfigError("output", "must be a non-empty path")
        self.params = _merge(DEFAULTS, self.params, "params")
        _fill(self.params, PRESETS[self.preset])
        _validate(self.params)

    def section(self, name=None):
        return self.params[name or self.experiment]

    def to_json_dict(self):
        return {"experiment": self.experiment, "seed": self.seed, "output": self.output,
                "preset": self.preset, "params": copy.deepcopy(self.params)}

    def dumps(self):
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("", "config must be a JSON object")
        unknown = set(d) - {"experiment", "seed", "output", "preset", "params"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        if "experiment" not in d:
            raise ConfigError("experiment", "missing")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from None
        return cls.from_json_dict(d)


def parse_override(text):
    """``section.key.sub=value`` with a JSON value (bare strings allowed)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    parts = key.split(".")
    out = cur = {}
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = val
    return out
