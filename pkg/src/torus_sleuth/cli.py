"""
``torus-sleuth`` command line: one subcommand per experiment, each driven
by a :class:`RunConfig` (JSON file plus flag overrides). Every run writes
the resolved config next to its outputs.

Exit codes: 0 success or PASS, 1 runtime error or FAIL, 2 bad config or
inadmissible certificate inputs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import EXPERIMENTS, RunConfig, parse_override
from .errors import ConfigError, Inadmissible, TorusSleuthError

__all__ = ["main", "build_parser", "run"]

# flag -> (experiment, dotted key inside its section)
_SHORTCUTS = {
    "epsilon": ("simulate", "average-step", "second-step", "diophantine", "partition", "chart"),
    "steps": ("simulate", "second-step"),
    "sections": ("simulate", "partition"),
    "n_ics": ("partition",),
    "kmax": ("diophantine",),
    "mc_samples": ("diophantine",),
}


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def _synthetic_map(f, epsilon, rng):
    from .core import AAAMapSpec, Drift, TrigField

    a, b = f["a"], f["b"]
    kw = dict(Kx=f["Kx"], Ky=f["Ky"], M=f["M"], amplitude=f["amplitude"], decay=f["decay"])
    X = TrigField.random(rng, a, b, **kw)
    Y = TrigField.random(rng, a, b, zero_x_average=True, **kw)
    Z = TrigField.random(rng, a, b, zero_x_average=True, **kw)
    return AAAMapSpec(epsilon, Drift.quadratic(f["g0_quadratic"]), X, Y, Z)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------
def cmd_simulate(cfg: RunConfig, out):
    from .core import AngleActionState, HillFlowSpec
    from .dynamics import estimate_rotation_numbers, iterate_map, poincare_map

    p = cfg.section()
    rng = np.random.default_rng(cfg.seed)
    meta = {"system": p["system"]}
    if p["system"] == "map":
        spec = _synthetic_map(p["field"], p["epsilon"], rng)
        ic = p["ic"] or [0.0, 0.0, 0.5 * (spec.a + spec.b)]
        orbit = iterate_map(spec, AngleActionState(*map(float, ic)), p["steps"])
        orbit.to_csv(os.path.join(out, "orbit.csv"))
        rot = estimate_rotation_numbers(orbit)
        z = orbit.z
        meta.update(ic=ic, n=len(orbit), rot_x=rot.rot_x, rot_y=rot.rot_y,
                    max_abs_dz=float(np.abs(z - z[0]).max()))
    else:
        spec = HillFlowSpec.from_epsilon(p["epsilon"])
        ic = p["ic"] or [0.25, 0.0, 0.0]
        orbit = poincare_map(spec, np.asarray(ic, float), p["sections"], p["tol"])
        orbit.to_csv(os.path.join(out, "poincare.csv"))
        meta.update(ic=ic, n=len(orbit), c=spec.c, period=spec.period, tol=p["tol"],
                    ic_coordinates="r,z,theta")
    _dump_json(os.path.join(out, "meta.json"), meta)
    return 0


def cmd_average_step(cfg: RunConfig, out):
    from .diophantine import DiophantineParams
    from .homological import conjugate_and_measure, sample_lattice, solve_first_step

    p = cfg.section()
    rng = np.random.default_rng(cfg.seed)
    spec = _synthetic_map(p["field"], p["epsilon"], rng)
    dioph = DiophantineParams(K_bar=p["K_bar"], mu_bar=p["mu_bar"], N=p["N"])
    tr = solve_first_step(spec, dioph)
    samples = sample_lattice(spec, tr, *p["lattice"])
    rep = conjugate_and_measure(spec, tr, samples)
    d = rep.to_json_dict()
    d["ratio_to_eps2"] = rep.sup_total / p["epsilon"] ** 2
    d["within_eps2"] = bool(rep.sup_total <= p["epsilon"] ** 2)
    _dump_json(os.path.join(out, "report.json"), d)
    _dump_json(os.path.join(out, "excluded_zones.json"), tr.excluded.to_json_dict())
    return 0


def cmd_second_step(cfg: RunConfig, out):
    from .diophantine import DiophantineParams
    from .homological import LocalMap, second_step_cascade

    p = cfg.section()
    rng = np.random.default_rng(cfg.seed)
    spec = _synthetic_map(p["field"], p["epsilon"], rng)
    dioph = DiophantineParams(K_hat=p["K_hat"], mu_hat=p["mu_hat"], gamma1=p["gamma1"])
    lm = LocalMap.from_spec(spec, p["omega"], p["s_hat"])
    res = second_step_cascade(lm, dioph, steps=p["steps"], shrink=p["shrink"])
    rows = [{"step": i, "sigma": r.sigma, "before": list(r.before), "after": list(r.after)}
            for i, r in enumerate(res)]
    _dump_json(os.path.join(out, "cascade.json"), {"omega": p["omega"], "steps": rows})
    return 0


def cmd_diophantine(cfg: RunConfig, out):
    from .core import Drift
    from .diophantine import DiophantineParams, excluded_zones_first, measure_S

    p = cfg.section()
    rng = np.random.default_rng(cfg.seed)
    params = DiophantineParams(K=p["K"], mu=p["mu"], gamma2=p["gamma2"], kmax=p["kmax"],
                               K_bar=p["K_bar"], mu_bar=p["mu_bar"], N=p["N"])
    cm = measure_S(Drift.quadratic(0.5), p["epsilon"], params, p["a"], p["b"],
                   mc_samples=p["mc_samples"], rng=rng)
    first = excluded_zones_first(p["a"], p["b"], p["K_bar"], p["mu_bar"], p["N"])
    _dump_json(os.path.join(out, "cantor.json"), cm.to_json_dict())
    _dump_json(os.path.join(out, "first_step_zones.json"), first.to_json_dict())
    return 0


def cmd_certify(cfg: RunConfig, out):
    from .kamcert import FiniteInputs, InfiniteInputs, certify_finite, certify_infinite

    p = cfg.section()
    if p["schedule"] == "finite":
        sched = certify_finite(FiniteInputs(**p["finite"]))
    else:
        sched = certify_infinite(InfiniteInputs(**p["infinite"]), n_steps=p["n_steps"])
    cert = sched.certificate
    with open(os.path.join(out, "certificate.json"), "w") as fh:
        fh.write(cert.dumps(indent=2, sort_keys=True) + "\n")
    print(f"{p['schedule']} schedule: {cert.verdict}")
    return 0 if cert.verdict == "PASS" else 1


def cmd_partition(cfg: RunConfig, out):
    from .core import HillFlowSpec
    from .ergodic import (HarmonicBasis, run_partition, sample_ics, slice_raster,
                          write_averages_csv, write_labels_csv)

    p = cfg.section()
    rng = np.random.default_rng(cfg.seed)
    ics = sample_ics(rng, p["n_ics"], p["r_range"], p["z_range"], first=p["ic_coordinate"])
    if p["epsilon"] > 0:
        spec = HillFlowSpec.from_epsilon(p["epsilon"])
    else:
        spec = HillFlowSpec(p["c_unforced"], forcing=False)
    basis = HarmonicBasis(tuple(p["orders"]))
    t0 = time.perf_counter()
    run = run_partition(spec, ics, p["sections"], basis, tol=p["tol"],
                        fit_orders=tuple(p["fit_orders"]), threshold=p["threshold"],
                        factor=p["threshold_factor"])
    raster = slice_raster(run.labeling, ics, tuple(p["resolution"]))
    raster.write_ppm(os.path.join(out, "partition.ppm"))
    write_labels_csv(os.path.join(out, "labels.csv"), ics, run.labeling)
    write_averages_csv(os.path.join(out, "averages.csv"), run.vectors, basis)
    conv = [v.convergence_norm for v in run.vectors]
    summary = {
        "epsilon": p["epsilon"],
        "c": spec.c,
        "forcing": spec.forcing,
        "n_ics": len(ics),
        "n_clusters": run.labeling.n_clusters,
        "threshold": run.labeling.threshold,
        "torus_fraction": run.torus_fraction,
        "integration_failures": int(np.count_nonzero(run.status)),
        "median_convergence": float(np.median(conv)) if conv else None,
        "max_clipped_fraction": max((v.clipped_fraction for v in run.vectors), default=0.0),
        "ic_first_coordinate": p["ic_coordinate"],
        "basis_first_coordinate": "R = r^2/2",
        "timings_s": {k: round(v, 3) for k, v in run.timings.items()},
        "wall_s": round(time.perf_counter() - t0, 3),
    }
    _dump_json(os.path.join(out, "summary.json"), summary)
    print(f"{summary['n_clusters']} clusters, torus fraction {summary['torus_fraction']:.3f}")
    return 0


def cmd_chart(cfg: RunConfig, out):
    from .actionangle import ActionChart, verify_assumption1
    from .core import HillFlowSpec

    p = cfg.section()
    chart = ActionChart.build(p["n_I"], p["n_phi"], tuple(p["I_range"]), p["tol"])
    chart.dump(os.path.join(out, "chart.json"))
    spec = HillFlowSpec.from_epsilon(p["epsilon"])
    rows = []
    for I, phi1 in p["check_points"]:
        r = verify_assumption1(spec, I, phi1, chart)
        w1, w2 = chart.frequencies(I)
        rows.append({"I": I, "phi1": phi1, "omega1": float(w1), "omega2": float(w2),
                     "residual_I": r.residual_I, "residual_phi1": r.residual_phi1,
                     "scale_I": r.scale_I, "scale_phi1": r.scale_phi1})
    _dump_json(os.path.join(out, "assumption1.json"), rows)
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "average-step": cmd_average_step,
    "second-step": cmd_second_step,
    "diophantine": cmd_diophantine,
    "certify": cmd_certify,
    "partition": cmd_partition,
    "chart": cmd_chart,
}


def run(cfg: RunConfig):
    """Execute a resolved config; returns the exit code."""
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(cfg.dumps())
    return _COMMANDS[cfg.experiment](cfg, out)


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------
def build_parser():
    ap = argparse.ArgumentParser(prog="torus-sleuth",
                                 description="KAM diagnostics for degenerate action-angle-angle maps "
                                             "and the forced swirling Hill's vortex.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="experiment", required=True, metavar="command")
    helps = {
        "simulate": "iterate the map or integrate the Hill flow",
        "average-step": "averaging transform and conjugated-map residual",
        "second-step": "second-step cascade on a synthetic local map",
        "diophantine": "resonance zones and Cantor-set measure",
        "certify": "finite or infinite KAM schedule certificate",
        "partition": "ergodic partition of the theta = 0 slice",
        "chart": "tabulated action-angle chart and zero-average check",
    }
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", "--output", dest="output")
        sp.add_argument("--preset", choices=("desk", "paper"))
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a parameter, e.g. --set field.Kx=4 (JSON values)")
        for flag, owners in _SHORTCUTS.items():
            if name in owners:
                typ = float if flag == "epsilon" else int
                sp.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
        if name == "simulate":
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--map", dest="system", action="store_const", const="map")
            g.add_argument("--hill", dest="system", action="store_const", const="hill")
        if name == "certify":
            sp.add_argument("--schedule", choices=("finite", "infinite"))
            sp.add_argument("--d0", type=float)
            sp.add_argument("--log-d0", dest="log_d0", type=float)
    return ap


def config_from_args(args):
    if args.config:
        base = RunConfig.load(args.config).to_json_dict()
        if base["experiment"] != args.experiment:
            raise ConfigError("experiment",
                              f"config is for '{base['experiment']}', not '{args.experiment}'")
    else:
        base = {"experiment": args.experiment, "params": {}}
    for k in ("seed", "output", "preset"):
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    sec = {}
    for flag in _SHORTCUTS:
        v = getattr(args, flag, None)
        if v is not None:
            sec[flag] = v
    if getattr(args, "system", None):
        sec["system"] = args.system
    if getattr(args, "schedule", None):
        sec["schedule"] = args.schedule
    sched = getattr(args, "schedule", None) or base.get("params", {}).get("certify", {}).get(
        "schedule", "finite")
    for k in ("d0", "log_d0"):
        v = getattr(args, k, None)
        if v is not None:
            sec.setdefault(sched, {})[k] = v
            if k == "log_d0":
                sec[sched]["d0"] = None
    params = base.get("params", {})
    if sec:
        params = _deep_update(params, {args.experiment: sec})
    for o in args.overrides:
        params = _deep_update(params, {args.experiment: parse_override(o)})
    base["params"] = params
    return RunConfig.from_json_dict(base)


def _deep_update(a, b):
    out = dict(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return run(cfg)
    except (ConfigError, Inadmissible) as exc:
        print(f"torus-sleuth: {exc}", file=sys.stderr)
        return 2
    except (TorusSleuthError, ValueError, OSError) as exc:
        print(f"torus-sleuth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
