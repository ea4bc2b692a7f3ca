"""Seed-matched runs of a destabilized primary, with and without the supervisor.

Generates a random plant, perturbs its optimal controller until the augmented
primary closed loop has spectral radius ``target_rho``, then reports the
worst-case cost of the switched loop next to the safety bound and how many
unswitched runs blow up.

    python3 scripts/destabilized_primary.py --systems 5 --traj 20 --T 5000
"""
import argparse
from dataclasses import asdict, dataclass

import numpy as np

from safeswitch import certify, matops, model, simulate
from safeswitch.supervisor import SupervisorConfig


@dataclass
class Experiment:
    systems: int = 5
    n: int = 4
    m: int = 2
    p: int = 3
    plant_rho: float = 0.95
    target_rho: float = 1.05
    M: float = 1.0
    t: int = 10
    traj: int = 20
    T: int = 5000
    seed: int = 100


def scr_radius(sys, primary, fallback, lam):
    return matops.spectral_radius(model.build_scr_A1(sys, model.perturb_controller(primary, lam), fallback))


def find_lambda(sys, primary, fallback, target, hi=2.0):
    # scan for a bracket, then bisect
    grid = np.linspace(0.0, hi, 201)
    for lo, up in zip(grid, grid[1:]):
        if scr_radius(sys, primary, fallback, up) >= target:
            break
    else:
        raise RuntimeError("no perturbation reaches the target radius")
    for _ in range(60):
        mid = 0.5 * (lo + up)
        if scr_radius(sys, primary, fallback, mid) < target:
            lo = mid
        else:
            up = mid
    return up


def run(exp: Experiment):
    cfg = SupervisorConfig(exp.M, exp.t)
    print("system  lambda  rho_scrA1  max_cost  thm1_bound  unswitched_blowups")
    for i in range(exp.systems):
        sys = model.random_stable_system(exp.seed + i, exp.n, exp.m, exp.p, exp.plant_rho)
        fallback = model.default_fallback(sys)
        optimal = model.synth_optimal_controller(sys)
        lam = find_lambda(sys, optimal, fallback, exp.target_rho)
        primary = model.perturb_controller(optimal, lam)
        bound = certify.safety_certificate(sys, fallback, exp.M).thm1_bound
        mc = simulate.monte_carlo(sys, primary, fallback, cfg, exp.traj, exp.T, 0)
        worst = max(s.cost for s in mc.trajectories)
        blown = sum(s.max_state_norm_unswitched > 1e6 for s in mc.trajectories)
        print(f"{i:6d}  {lam:.4f}  {scr_radius(sys, optimal, fallback, lam):9.4f}  "
              f"{worst:8.3g}  {bound:10.3g}  {blown}/{exp.traj}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, val in asdict(Experiment()).items():
        ap.add_argument("--" + name.replace("_", "-"), type=type(val), default=val)
    run(Experiment(**vars(ap.parse_args())))


if __name__ == "__main__":
    main()
