"""Command-line front end.

    bloch-relax analytic   --config run.json
    bloch-relax simulate   --config run.json --format csv
    bloch-relax optimize   --config run.json --m 1 --restarts 16 --seed 0
    bloch-relax sweep      --config run.json --jobs 4
    bloch-relax sweep-grid --config run.json --resolution 101
    bloch-relax slope      --config run.json

Exit status is 0 on success, 2 for configuration errors and 3 for numerical
failures; errors are written to stderr as a JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from typing import Optional

import numpy as np

from . import analytic as an
from .bloch import purity
from .channels import (AMPLITUDE_DAMPING, DEPOLARIZING, PHASE_DAMPING, ChannelError,
                       NoFixedPointError, axis_rates, fixed_points, purity_speed)
from .config import ConfigError, RunConfig
from .control import fit_slope, optimize_T_m, sweep_m
from .dynamics import IntegrationError, evolve, evolve_to_ball

log = logging.getLogger("bloch_relax")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _csv(header, rows, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------- subcommands

def analytic_report(cfg: RunConfig) -> dict:
    """Every closed-form quantity that applies to the configured channel."""
    ch = cfg.build_channel()
    s0 = np.asarray(cfg.s0, dtype=float)
    eps = cfg.eps
    unit = cfg.time_scale
    r_i = float(np.linalg.norm(s0))
    rep: dict = {"channel": ch.kind, "time_unit": "1/rate" if cfg.natural_units else "absolute",
                 "purity": purity(s0), "purity_speed": purity_speed(ch, s0)}
    fps = fixed_points(ch)
    rep["fixed_point"] = {"base": fps.base, "directions": list(fps.directions)}

    def t(x):
        return float(x) / unit

    if ch.kind == AMPLITUDE_DAMPING:
        p = an.ad_params(ch)
        fast, free = an.worst_case_times_ad(eps, p)
        rep.update({
            "r_fp": p.r_fp,
            "task": "cooling" if r_i < p.r_fp else "heating",
            "t_free": {"value": t(an.t_free_ad(s0, eps, p)), "formula": "free relaxation"},
            "t_fast": {"value": t(an.t_fast_ad(s0, eps, p)),
                       "formula": "rotate-relax-rotate with unbounded control"},
            "v_cool": an.v_cool(r_i, p), "v_heat": an.v_heat(r_i, p),
            "worst_case": {"t_fast": t(fast), "t_free": t(free), "ratio": free / fast,
                           "formula": "leading order in eps"},
        })
        if 0 < r_i <= p.r_fp:
            rep["theta_stall"] = an.theta_stall(r_i, p)
    elif ch.kind == DEPOLARIZING:
        g = ch.params
        rates = (g["gx"], g["gy"], g["gz"])
        G = axis_rates(ch)
        fast, free = an.worst_case_times_dp(eps, *rates)
        tf, tr = an.t_fast_dp(s0, eps, *rates), an.t_free_dp(s0, eps, *rates)
        useless = bool(np.ptp(G) == 0.0)
        rep.update({
            "axis_rates": G,
            "t_free": {"value": t(tr), "formula": "root of |r(t)| = eps"},
            "t_fast": {"value": t(tf), "formula": "relaxation along the fastest axis"},
            "control_useless": useless,
            "worst_case": {"t_fast": t(fast), "t_free": t(free), "ratio": free / fast,
                           "formula": "Gamma_max / Gamma_min"},
        })
    elif ch.kind == PHASE_DAMPING:
        gh = ch.params["ghat"]
        rep.update({
            "natural_target": an.natural_target(ch, s0),
            "t_free": {"value": t(an.t_free_pd(s0, eps, gh)), "formula": "transverse decay"},
            "t_fast": {"value": t(an.t_fast_pd(s0, eps, gh)),
                       "formula": "rotation towards the z-axis target"},
            "worst_case": {"t_fast": t(abs(math.log(eps)) / (2 * gh)),
                           "t_free": t(abs(math.log(eps)) / (2 * gh)), "ratio": 1.0},
        })
    return rep


def cmd_analytic(cfg: RunConfig, args) -> str:
    rep = analytic_report(cfg)
    if cfg.format == "csv":
        flat = [(k, v["value"] if isinstance(v, dict) and "value" in v else v)
                for k, v in rep.items() if not isinstance(v, dict) or "value" in v]
        return _csv(["quantity", "value"], [(k, _plain(v)) for k, v in flat])
    return _json(rep)


def cmd_simulate(cfg: RunConfig, args) -> str:
    """Uncontrolled run, or the configured CRAB field when a drift frequency is given."""
    ch = cfg.build_channel()
    center = fixed_points(ch).base if cfg.center is None else np.asarray(cfg.center)
    field = None
    icfg = cfg.integrator_config()
    if cfg.control.omega is not None:
        field = cfg.crab()
        icfg = icfg.with_horizon(min(icfg.t_max, field.tau))
    traj = evolve(ch, field, cfg.s0, icfg)
    hit = evolve_to_ball(ch, field, cfg.s0, center, cfg.eps, icfg).hit_time
    if cfg.format == "csv":
        return traj.write_csv()
    return _json({"rows": [list(r) for r in traj.rows()], "reason": traj.reason,
                  "accepted": traj.accepted, "rejected": traj.rejected,
                  "hit_time": None if hit is None else hit / cfg.time_scale,
                  "center": center})


def _report_dict(rep, unit):
    d = rep.to_dict()
    if d["T_m"] is not None:
        d["T_m"] /= unit
    return d


def cmd_optimize(cfg: RunConfig, args) -> str:
    ocfg = cfg.optimize_config()
    m = cfg.control.m if args.m is None else args.m
    rep = optimize_T_m(m, ocfg, cfg.optimizer.restarts, cfg.optimizer.seed, args.jobs)
    d = _report_dict(rep, cfg.time_scale)
    if cfg.format == "csv":
        return _csv(["m", "T_m", "objective", "evaluations"],
                    [(rep.m, d["T_m"], rep.objective, rep.evaluations)])
    return _json(d)


def _t_fast_floor(cfg: RunConfig) -> Optional[float]:
    try:
        return an.t_fast(cfg.build_channel(), np.asarray(cfg.s0), cfg.eps) / cfg.time_scale
    except ValueError:
        return None


def cmd_sweep(cfg: RunConfig, args) -> str:
    ocfg = cfg.optimize_config()
    o = cfg.optimizer
    reps = sweep_m(o.m_list, ocfg, o.restarts, o.seed, args.jobs)
    floor = _t_fast_floor(cfg)
    rows = [(r.m, None if r.T_m is None else r.T_m / cfg.time_scale, floor) for r in reps]
    if cfg.format == "csv":
        return _csv(["m", "T_m", "T_fast_analytic"], rows)
    return _json({"rows": rows, "reports": [_report_dict(r, cfg.time_scale) for r in reps]})


def sweep_grid_rows(cfg: RunConfig, resolution: int):
    ch = cfg.build_channel()
    xs = np.linspace(-1.0, 1.0, resolution)
    X, Z = np.meshgrid(xs, xs, indexing="ij")
    mask = X * X + Z * Z <= 1.0 + 1e-12
    pts = np.stack([X[mask], np.zeros(mask.sum()), Z[mask]], axis=-1)
    if ch.kind == DEPOLARIZING:
        g = ch.params
        free = np.array([an.t_free_dp(s, cfg.eps, g["gx"], g["gy"], g["gz"]) for s in pts])
    else:
        free = an.t_free(ch, pts, cfg.eps)
    fast = an.t_fast(ch, pts, cfg.eps)
    unit = cfg.time_scale
    return [(p[0], p[2], float(a) / unit, float(b) / unit) for p, a, b in zip(pts, free, fast)]


def cmd_sweep_grid(cfg: RunConfig, args) -> str:
    res = args.resolution or cfg.grid_resolution
    if res < 16:
        raise ConfigError("resolution must be >= 16")
    rows = sweep_grid_rows(cfg, res)
    if cfg.format == "csv":
        return _csv(["r_x", "r_z", "T_free", "T_fast"], rows)
    return _json({"columns": ["r_x", "r_z", "T_free", "T_fast"], "rows": rows})


def slope_report(cfg: RunConfig, jobs: int = 1) -> dict:
    ocfg = cfg.optimize_config()
    o = cfg.optimizer
    reps = sweep_m(o.slope_m_list, ocfg, o.restarts, o.seed, jobs)
    ms = [r.m for r in reps]
    Ts = [r.T_m for r in reps]
    if any(T is None for T in Ts):
        raise IntegrationError("the target ball was not reached for some m in the slope sweep")
    fit = fit_slope(ms, Ts)
    out = {"m": ms, "T_m": [T / cfg.time_scale for T in Ts],
           "fit": {"T_bar": fit.T_bar / cfg.time_scale, "A": fit.A / cfg.time_scale,
                   "r2": fit.r2}}
    p = an.ad_params(cfg.build_channel())
    if p is not None:
        wf = an.weak_field_report(np.asarray(cfg.s0), cfg.eps, p, cfg.crab(0.0),
                                  cfg.integrator_config())
        sens = an.slope_sensitivity(ocfg.channel, ocfg.s0, cfg.eps, cfg.crab(0.0),
                                    ocfg.center, ocfg.integrator)
        out["weak_field"] = {"T_bar": wf.T_bar / cfg.time_scale,
                             "A_bound": wf.A_bound / cfg.time_scale, "D": wf.D,
                             "A_max_adjoint": sens.A_max / cfg.time_scale}
    return out


def cmd_slope(cfg: RunConfig, args) -> str:
    rep = slope_report(cfg, args.jobs)
    if cfg.format == "csv":
        comments = [f"fit T_bar={_fmt(rep['fit']['T_bar'])} A={_fmt(rep['fit']['A'])} "
                    f"r2={_fmt(rep['fit']['r2'])}"]
        if "weak_field" in rep:
            wf = rep["weak_field"]
            comments.append(f"quadrature T_bar={_fmt(wf['T_bar'])} "
                            f"A_bound={_fmt(wf['A_bound'])} "
                            f"A_max_adjoint={_fmt(wf['A_max_adjoint'])}")
        return _csv(["m", "T_m"], zip(rep["m"], rep["T_m"]), comments)
    return _json(rep)


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "sweep-grid": cmd_sweep_grid,
    "slope": cmd_slope,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bloch-relax", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--natural-units", action="store_true", default=None,
                        help="interpret and report times in units of 1/rate")
        if name in ("optimize", "sweep", "slope"):
            sp.add_argument("--restarts", type=int)
        if name == "optimize":
            sp.add_argument("--m", type=float)
        if name == "sweep-grid":
            sp.add_argument("--resolution", type=int)
    return ap


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    kw = {}
    if args.format:
        kw["format"] = args.format
    if args.out:
        kw["out"] = args.out
    if args.natural_units:
        kw["natural_units"] = True
    opt = {}
    if args.seed is not None:
        opt["seed"] = args.seed
    if getattr(args, "restarts", None) is not None:
        opt["restarts"] = args.restarts
    if opt:
        kw["optimizer"] = replace(cfg.optimizer, **opt)
    return replace(cfg, **kw) if kw else cfg


def _fail(code: int, kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__,
                                 "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BLOCH_RELAX_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_flags(RunConfig.load(args.config), args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        text = COMMANDS[args.command](cfg, args)
    except (ConfigError, ChannelError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (IntegrationError, NoFixedPointError, an.WeakFieldError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
