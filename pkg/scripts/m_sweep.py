"""Optimized hitting time T_m against the control bound m (amplitude damping, beta = 2).

Writes CSV rows (m, T_m, T_fast) where T_fast is the unbounded-control floor.
"""

import argparse
import csv
import logging
import sys

import numpy as np

from bloch_relax import analytic as an
from bloch_relax.config import ControlSettings, thermal_control_config
from bloch_relax.control import sweep_m


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=float, nargs="+", default=[0, 0.5, 1, 2, 5, 10])
    ap.add_argument("--restarts", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--omega", type=float, default=1.0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = thermal_control_config(control=ControlSettings(tau=10.0, n_modes=10, omega=args.omega))
    ocfg = cfg.optimize_config()
    floor = an.t_fast(ocfg.channel, np.asarray(cfg.s0), cfg.eps)
    reports = sweep_m(sorted(args.m), ocfg, args.restarts, args.seed, args.jobs)

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["m", "T_m", "T_fast"])
    for r in reports:
        w.writerow([f"{r.m:.17g}", "" if r.T_m is None else f"{r.T_m:.17g}", f"{floor:.17g}"])
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
