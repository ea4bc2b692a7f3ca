"""Relative cost gap of the switched loop against the threshold M.

Uses the optimal LQG controller as primary and the default fallback, so the
gap should shrink towards zero as M grows. Prints a table and, with --csv,
writes it to disk.
"""
import argparse
import csv
from dataclasses import dataclass

import numpy as np

from safeswitch import certify, model, simulate
from safeswitch.supervisor import SupervisorConfig


@dataclass
class SweepConfig:
    seed: int = 3
    n: int = 4
    m: int = 2
    p: int = 3
    plant_rho: float = 0.95
    t: int = 10
    M_lo: float = 0.5
    M_hi: float = 3.0
    points: int = 8
    traj: int = 200
    T: int = 1000
    csv: str = ""


def sweep(cfg: SweepConfig):
    sys = model.random_stable_system(cfg.seed, cfg.n, cfg.m, cfg.p, cfg.plant_rho)
    primary = model.synth_optimal_controller(sys)
    fallback = model.default_fallback(sys)
    rows = []
    for M in np.geomspace(cfg.M_lo, cfg.M_hi, cfg.points):
        sup = SupervisorConfig(float(M), cfg.t)
        mc = simulate.monte_carlo(sys, primary, fallback, sup, cfg.traj, cfg.T, 0)
        eff = certify.efficiency_certificate(sys, primary, fallback, sup)
        rows.append({
            "M": float(M),
            "relative_gap": mc.relative_gap,
            "std_err": mc.gap_std_err / mc.mean_cost_unswitched,
            "fallback_fraction": mc.mean_fallback_fraction,
            "log_gap_bound": eff.log_gap_bound(float(M)),
        })
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    defaults = SweepConfig()
    for name, val in vars(defaults).items():
        ap.add_argument("--" + name.replace("_", "-"), type=type(val), default=val)
    cfg = SweepConfig(**vars(ap.parse_args()))
    rows = sweep(cfg)
    print(f"{'M':>8} {'rel_gap':>10} {'std_err':>10} {'fallback':>9} {'log_bound':>10}")
    for r in rows:
        print(f"{r['M']:8.3f} {r['relative_gap']:10.4g} {r['std_err']:10.2g} "
              f"{r['fallback_fraction']:9.4f} {r['log_gap_bound']:10.4g}")
    if cfg.csv:
        with open(cfg.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)


if __name__ == "__main__":
    main()
