"""Command-line front end.

Exit codes: 0 success, 1 usage/IO/parse error, 2 an assumption failed
(partial output is still written).
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import certify, model, simulate
from .errors import SafeSwitchError
from .matops import block_diag
from .supervisor import SupervisorConfig

EXIT_OK, EXIT_ERROR, EXIT_ASSUMPTION = 0, 1, 2

DEFAULTS = {
    "M": 1.0,
    "M_grid": "0.5:3:8",
    "t": 10,
    "T": 1000,
    "traj": 1000,
    "seed": 0,
    "out": ".",
    "zero_noise": False,
    "lambda": None,
    "workers": 1,
    "model": None,
    "gen": None,
    "bound_scale": 1.0,
}
COMMAND_DEFAULTS = {
    "check": {"T": 2000, "traj": 200},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


@dataclass
class ExperimentConfig:
    scenario: str
    model: Optional[str]
    gen: Optional[tuple]
    M: float
    M_grid: list
    t: int
    T: int
    traj: int
    seed: int
    out: Path
    zero_noise: bool
    lam: Optional[float]
    workers: int
    bound_scale: float

    def __post_init__(self):
        if self.T < 1:
            raise UsageError("--T must be >= 1")
        if self.traj < 1:
            raise UsageError("--traj must be >= 1")
        if not self.M_grid:
            raise UsageError("--M-grid must be nonempty")


def parse_gen(text):
    parts = str(text).split(",")
    if len(parts) != 5:
        raise UsageError("--gen expects seed,n,m,p,rho")
    try:
        return int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])
    except ValueError:
        raise UsageError(f"--gen could not parse {text!r}") from None


def parse_grid(text):
    """``lo:hi:steps`` log-spaced, or a comma-separated list."""
    text = str(text)
    try:
        if ":" in text:
            lo, hi, steps = text.split(":")
            lo, hi, steps = float(lo), float(hi), int(steps)
            if lo <= 0 or hi <= 0 or steps < 1:
                raise ValueError
            return [float(v) for v in np.geomspace(lo, hi, steps)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --M-grid {text!r}; expected lo:hi:steps") from None


def build_parser():
    parser = _Parser(prog="safeswitch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with option values; flags override it")
    src = common.add_mutually_exclusive_group()
    src.add_argument("--model", help="model file (lqg-model v1)")
    src.add_argument("--gen", help="generate a random stable model: seed,n,m,p,rho")
    common.add_argument("--M", type=float, help="switching threshold (inf disables switching)")
    common.add_argument("--M-grid", dest="M_grid", help="threshold grid lo:hi:steps (log-spaced)")
    common.add_argument("--t", type=int, help="dwell time")
    common.add_argument("--T", type=int, help="horizon")
    common.add_argument("--traj", type=int, help="number of Monte Carlo trajectories")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--zero-noise", dest="zero_noise", action="store_true", default=None)
    common.add_argument("--lambda", dest="lambda", type=float, help="perturb the primary by lambda * ones")
    common.add_argument("--workers", type=int, help="threads for trajectory-level parallelism")
    common.add_argument("--bound-scale", dest="bound_scale", type=float, help=argparse.SUPPRESS)
    for name, helptext in [
        ("certify", "assumption report and all certificates"),
        ("compare", "seed-matched trajectories with and without switching"),
        ("sweep", "paired Monte Carlo cost gap over a threshold grid"),
        ("check", "empirical validation of every bound"),
        ("synth", "generate and save a random model with controllers"),
    ]:
        sub.add_parser(name, parents=[common], help=helptext)
    return parser


def resolve_config(args):
    values = dict(DEFAULTS)
    values.update(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(loaded)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.model is not None:
        values["gen"] = None
    if args.gen is not None:
        values["model"] = None
    return ExperimentConfig(
        scenario=args.command,
        model=values["model"],
        gen=parse_gen(values["gen"]) if values["gen"] is not None else None,
        M=float(values["M"]),
        M_grid=parse_grid(values["M_grid"]),
        t=int(values["t"]),
        T=int(values["T"]),
        traj=int(values["traj"]),
        seed=int(values["seed"]),
        out=Path(values["out"]),
        zero_noise=bool(values["zero_noise"]),
        lam=None if values["lambda"] is None else float(values["lambda"]),
        workers=int(values["workers"]),
        bound_scale=float(values["bound_scale"]),
    )


def resolve_model(cfg):
    """Return (system, primary, fallback)."""
    if cfg.model is not None:
        try:
            bundle = model.load_model(cfg.model)
        except OSError as exc:
            raise UsageError(f"cannot read model {cfg.model}: {exc}") from None
        system, fallback, primary = bundle.system, bundle.fallback, bundle.primary
    elif cfg.gen is not None:
        seed, n, m, p, rho = cfg.gen
        system = model.random_stable_system(seed, n, m, p, rho)
        fallback = primary = None
    else:
        raise UsageError("one of --model or --gen is required")
    if fallback is None:
        try:
            fallback = model.default_fallback(system)
        except ValueError as exc:
            raise UsageError(f"no fallback controller in model and {exc}") from None
    if primary is None:
        primary = model.synth_optimal_controller(system)
    if cfg.lam is not None:
        primary = model.perturb_controller(primary, cfg.lam)
    return system, primary, fallback


def _supervisor(M, t):
    return SupervisorConfig.never_switch(t) if math.isinf(M) else SupervisorConfig(M, t)


def _g(x):
    return f"{x:.17g}"


def _write_kv(path, items):
    Path(path).write_text("".join(f"{k} {v}\n" for k, v in items), encoding="utf-8")


def cmd_synth(cfg):
    if cfg.gen is None:
        raise UsageError("synth needs --gen seed,n,m,p,rho")
    system, primary, fallback = resolve_model(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "model.lqg"
    model.save_model(path, system, fallback, primary)
    print(f"wrote {path}")
    return EXIT_OK


def certify_all(system, primary, fallback, M, t):
    report = certify.check_assumptions(system, primary, fallback)
    safety = dwell = eff = None
    notes = []
    if report.assumption1:
        safety = certify.safety_certificate(system, fallback, M)
    else:
        notes.append("assumption 1 fails: no certificate available")
    if report.assumption1 and report.assumption2:
        dwell = certify.dwell_certificate(system, primary, fallback)
        eff = certify.efficiency_certificate(system, primary, fallback, _supervisor(M, t), dwell)
        if not eff.dwell_valid:
            notes.append(f"t = {t} is below t_min = {dwell.t_min}: efficiency bounds outside validity region")
        if not eff.threshold_valid:
            notes.append("M < a0 * Kdiff: switching-probability and gap bounds outside validity region")
    elif report.assumption1:
        notes.append("assumption 2 fails: safety certificate only")
    return report, safety, dwell, eff, notes


def cmd_certify(cfg):
    system, primary, fallback = resolve_model(cfg)
    report, safety, dwell, eff, notes = certify_all(system, primary, fallback, cfg.M, cfg.t)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "certificate.txt"
    certify.write_report(path, certify.report_lines(report, safety, dwell, eff, notes))
    print(f"assumption1={report.assumption1} assumption2={report.assumption2}")
    if dwell is not None:
        print(f"t_min={dwell.t_min} rho={dwell.rho:.6g}")
    if safety is not None:
        print(f"thm1_bound(M={cfg.M:g})={safety.thm1_bound:.6g}")
    print(f"wrote {path}")
    return EXIT_OK if report.assumption1 and report.assumption2 else EXIT_ASSUMPTION


def cmd_compare(cfg):
    system, primary, fallback = resolve_model(cfg)
    sup = _supervisor(cfg.M, cfg.t)
    sw = simulate.rollout_switched(system, primary, fallback, sup, cfg.seed, cfg.T,
                                   zero_noise=cfg.zero_noise, record_states=False)
    un = simulate.rollout_unswitched(system, primary, cfg.seed, cfg.T, fallback=fallback,
                                     zero_noise=cfg.zero_noise, record_states=False)
    cfg.out.mkdir(parents=True, exist_ok=True)
    simulate.write_trajectory_csv(cfg.out / "trajectory_switched.csv", sw)
    simulate.write_trajectory_csv(cfg.out / "trajectory_unswitched.csv", un)
    summary = [
        ("M", _g(cfg.M)), ("t", cfg.t), ("T", cfg.T), ("seed", cfg.seed),
        ("max_state_norm_switched", _g(sw.max_state_norm)),
        ("max_state_norm_unswitched", _g(un.max_state_norm)),
        ("unswitched_exceeds_1e6", int(un.max_state_norm > 1e6)),
        ("diverged_switched", int(sw.diverged)),
        ("diverged_unswitched", int(un.diverged)),
        ("fallback_fraction", _g(sw.fallback_fraction)),
        ("empirical_cost_switched", _g(sw.empirical_cost)),
        ("empirical_cost_unswitched", _g(un.empirical_cost)),
    ]
    _write_kv(cfg.out / "compare_summary.txt", summary)
    for k, v in summary[4:]:
        print(f"{k} {v}")
    return EXIT_OK


SWEEP_COLUMNS = ["M", "gap_estimate", "std_err", "gap_bound", "fallback_fraction",
                 "relative_gap", "relative_std_err", "J1", "bound_valid"]


def run_sweep(system, primary, fallback, grid, t, T, n_traj, seed, zero_noise=False, workers=1):
    dwell = certify.dwell_certificate(system, primary, fallback)
    rows = []
    for M in grid:
        sup = SupervisorConfig(M, t)
        mc = simulate.monte_carlo(system, primary, fallback, sup, n_traj, T, seed,
                                  zero_noise=zero_noise, workers=workers)
        eff = certify.efficiency_certificate(system, primary, fallback, sup, dwell)
        J1 = mc.mean_cost_unswitched
        rows.append({
            "M": M, "gap_estimate": mc.gap, "std_err": mc.gap_std_err, "gap_bound": eff.gap_bound(),
            "fallback_fraction": mc.mean_fallback_fraction,
            "relative_gap": mc.gap / J1, "relative_std_err": mc.gap_std_err / J1, "J1": J1,
            "bound_valid": int(eff.valid),
        })
    return rows


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([v if isinstance(v, (int, str)) else _g(v) for v in (row[c] for c in columns)])


def cmd_sweep(cfg):
    system, primary, fallback = resolve_model(cfg)
    report = certify.check_assumptions(system, primary, fallback)
    if not (report.assumption1 and report.assumption2):
        print("assumptions 1-2 do not hold for this primary; run `safeswitch certify` for details",
              file=sys.stderr)
        return EXIT_ASSUMPTION
    rows = run_sweep(system, primary, fallback, cfg.M_grid, cfg.t, cfg.T, cfg.traj, cfg.seed,
                     cfg.zero_noise, cfg.workers)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "gap_sweep.csv"
    write_csv(path, SWEEP_COLUMNS, rows)
    for r in rows:
        print(f"M={r['M']:.4g} gap={r['gap_estimate']:.4g}±{r['std_err']:.2g} "
              f"rel={r['relative_gap']:.4g} fallback={r['fallback_fraction']:.4g}")
    print(f"wrote {path}")
    return EXIT_OK


# --- bound check -------------------------------------------------------------------------

CHECK_COLUMNS = ["bound", "theoretical", "empirical", "margin", "status"]


def _row(name, theo, emp, scale):
    theo = theo * scale
    return {"bound": name, "theoretical": theo, "empirical": emp, "margin": theo - emp,
            "status": "PASS" if emp <= theo else "FAIL"}


def _skip(name, why):
    return {"bound": name, "theoretical": math.nan, "empirical": math.nan, "margin": math.nan,
            "status": f"SKIPPED({why})"}


def transformed_second_moment(system, primary, fallback, sup, P, n_traj, T, seed, zero_noise=False):
    """max over j of the mean over trajectories of (x_aug(i(j))' P x_aug(i(j)))^2."""
    sums = np.zeros(T + 1)
    counts = np.zeros(T + 1)
    for i in range(n_traj):
        r = simulate.rollout_switched(system, primary, fallback, sup, seed + i, T, zero_noise=zero_noise)
        tr = simulate.extract_transformed(r, sup)
        v = np.einsum("ki,ij,kj->k", tr.states, P, tr.states)
        sums[: v.size] += v**2
        counts[: v.size] += 1
    # only indices reached by every trajectory are averaged
    full = counts == n_traj
    return float(np.max(sums[full] / n_traj))


def bound_check(system, primary, fallback, M, t, T, n_traj, seed, zero_noise=False, bound_scale=1.0,
                workers=1):
    report, safety, dwell, eff, _ = certify_all(system, primary, fallback, M, t)
    sup = _supervisor(M, t)
    rows = []
    if safety is None:
        for name in ("lemma1", "thm1", "lemma2", "thm3_moment", "thm3_switch", "thm4_gap"):
            rows.append(_skip(name, "assumption"))
        return rows
    N = system.n + fallback.nc + primary.nc
    k = N - safety.P0.shape[0]
    weights = {"V0": block_diag(safety.P0, np.zeros((k, k)))}
    if eff is not None:
        weights["P0_aug"] = eff.P0_aug
    mc = simulate.monte_carlo(system, primary, fallback, sup, n_traj, T, seed, zero_noise=zero_noise,
                              weights=weights, workers=workers)
    rows.append(_row("lemma1", safety.lemma1_bound, float(np.nanmax(mc.per_step["V0"])), bound_scale))
    rows.append(_row("thm1", safety.thm1_bound, mc.mean_cost, bound_scale))
    if eff is None:
        for name in ("lemma2", "thm3_moment", "thm3_switch", "thm4_gap"):
            rows.append(_skip(name, "assumption"))
        return rows
    if eff.dwell_valid:
        emp = transformed_second_moment(system, primary, fallback, sup, dwell.P, n_traj, T, seed, zero_noise)
        rows.append(_row("lemma2", eff.Qcal, emp, bound_scale))
        rows.append(_row("thm3_moment", eff.fourth_moment_bound, float(np.nanmax(mc.per_step["P0_aug^2"])),
                         bound_scale))
    else:
        rows.append(_skip("lemma2", "validity"))
        rows.append(_skip("thm3_moment", "validity"))
    if eff.valid:
        rows.append(_row("thm3_switch", eff.switch_prob_bound(), mc.mean_fallback_fraction, bound_scale))
        se = 0.0 if math.isnan(mc.gap_std_err) else mc.gap_std_err
        rows.append(_row("thm4_gap", eff.gap_bound(), mc.gap + 3 * se, bound_scale))
    else:
        rows.append(_skip("thm3_switch", "validity"))
        rows.append(_skip("thm4_gap", "validity"))
    return rows


def cmd_check(cfg):
    system, primary, fallback = resolve_model(cfg)
    rows = bound_check(system, primary, fallback, cfg.M, cfg.t, cfg.T, cfg.traj, cfg.seed,
                       cfg.zero_noise, cfg.bound_scale, cfg.workers)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "bound_check.csv"
    write_csv(path, CHECK_COLUMNS, rows)
    for r in rows:
        print(f"{r['bound']:<12} {r['status']:<20} theoretical={r['theoretical']:.6g} empirical={r['empirical']:.6g}")
    print(f"wrote {path}")
    return EXIT_OK if all(r["status"] != "FAIL" for r in rows) else EXIT_ASSUMPTION


COMMANDS = {
    "certify": cmd_certify,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "check": cmd_check,
    "synth": cmd_synth,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"safeswitch: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (SafeSwitchError, OSError, ValueError) as exc:
        print(f"safeswitch: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
