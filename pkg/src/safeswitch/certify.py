"""Stability assumptions, the safety cost bound, the dwell-time certificate and efficiency bounds.

Weighted matrix norms come in two readings (see ``matops``): the
similarity-transform norm ``||P^{1/2} M P^{-1/2}||`` and the literal
``||P^{-1/2} M P^{-1/2}||``. Wherever a bound contains a weighted matrix norm
both readings are evaluated and the larger one is used.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matops
from .errors import AssumptionError, ConvergenceError
from .model import build_cal_A0, build_cal_A1, build_scr_A0, build_scr_A1, build_Sigma, build_sigma_tilde

RHO_MARGIN = 1e-10
RHO_FLOOR = 0.2500001
T_MIN_CAP = 10**6
SERIES_TOL = 1e-14


@dataclass(frozen=True)
class AssumptionReport:
    rho_calA0: float
    rho_A0: float
    rho_calA1: float
    rho_A1: float

    @property
    def assumption1(self):
        return self.rho_calA0 < 1.0 and self.rho_A0 < 1.0

    @property
    def assumption2(self):
        return self.rho_calA1 < 1.0 and self.rho_A1 < 1.0

    def radii(self):
        return {"calA0": self.rho_calA0, "A0": self.rho_A0, "calA1": self.rho_calA1, "A1": self.rho_A1}


def check_assumptions(sys, primary, fallback):
    return AssumptionReport(
        rho_calA0=matops.spectral_radius(build_cal_A0(sys, fallback)),
        rho_A0=matops.spectral_radius(fallback.Ac),
        rho_calA1=matops.spectral_radius(build_cal_A1(sys, primary)),
        rho_A1=matops.spectral_radius(primary.Ac),
    )


def _require(report, which):
    names = ("calA0", "A0") if which == 1 else ("calA1", "A1")
    bad = [f"rho({k}) = {report.radii()[k]:.6g} >= 1" for k in names if report.radii()[k] >= 1.0]
    if bad:
        raise AssumptionError(f"Assumption {which} violated: " + ", ".join(bad))


# --- safety ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SafetyCertificate:
    P0: np.ndarray
    rho0: float
    input_gain_sq: float  # ||[B; B0]||^2
    P0_norm: float
    noise_trace: float  # tr(blockdiag(W, L0 V L0^T) P0)
    R_norm: float
    M: float

    def lemma1(self, M):
        """Upper bound on E ||[x; z0]||^2_{P0} valid at every step."""
        r = self.rho0
        return 4 * (1 + r) / (1 - r) ** 2 * (M**2 * self.input_gain_sq * self.P0_norm + self.noise_trace)

    def thm1(self, M):
        """Upper bound on the LQ cost of the switched loop, for any primary and any t."""
        r = self.rho0
        k = 8 * (1 + r) / (1 - r) ** 2
        return (k * self.input_gain_sq * self.P0_norm + 2 * self.R_norm) * M**2 + k * self.noise_trace

    @property
    def lemma1_bound(self):
        return self.lemma1(self.M)

    @property
    def thm1_bound(self):
        return self.thm1(self.M)


def safety_certificate(sys, fallback, M):
    report = AssumptionReport(
        matops.spectral_radius(build_cal_A0(sys, fallback)), matops.spectral_radius(fallback.Ac), math.nan, math.nan)
    _require(report, 1)
    calA0 = build_cal_A0(sys, fallback)
    K0 = fallback.Kc
    weight = matops.block_diag(sys.Q, K0.T @ sys.R @ K0 + np.eye(fallback.nc))
    P0 = matops.solve_dlyap_transpose(calA0, weight)
    rho0 = matops.contraction_factor(calA0, P0)
    noise = matops.block_diag(sys.W, fallback.Lc @ sys.V @ fallback.Lc.T)
    return SafetyCertificate(
        P0=P0,
        rho0=rho0,
        input_gain_sq=float(np.linalg.norm(np.vstack([sys.B, fallback.Bc]), 2) ** 2),
        P0_norm=float(np.linalg.norm(P0, 2)),
        noise_trace=float(np.trace(noise @ P0)),
        R_norm=float(np.linalg.norm(sys.R, 2)),
        M=float(M),
    )


# --- dwell time ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DwellCertificate:
    P: np.ndarray
    rho: float
    rho_exact: float
    t_min: int


def minimal_dwell(scrA0, P, rho, cap=T_MIN_CAP):
    """Smallest t >= 1 with ||scrA0^t||_P^2 < rho."""
    Ak = np.array(scrA0, dtype=float)
    for t in range(1, cap + 1):
        if matops.contraction_factor(Ak, P) < rho:
            return t
        Ak = Ak @ scrA0
    raise ConvergenceError(f"no dwell time below {cap} satisfies the contraction test")


def dwell_from_matrices(scrA1, scrA0, cap=T_MIN_CAP):
    P = matops.solve_dlyap_transpose(scrA1, np.eye(scrA1.shape[0]))
    exact = matops.contraction_factor(scrA1, P)
    # inflate so both inequalities hold strictly
    rho = exact * (1 + RHO_MARGIN)
    return DwellCertificate(P=P, rho=rho, rho_exact=exact, t_min=minimal_dwell(scrA0, P, rho, cap))


def dwell_certificate(sys, primary, fallback, cap=T_MIN_CAP):
    report = check_assumptions(sys, primary, fallback)
    _require(report, 1)
    _require(report, 2)
    return dwell_from_matrices(build_scr_A1(sys, primary, fallback), build_scr_A0(sys, primary, fallback), cap)


# --- efficiency ---------------------------------------------------------------------

def _both_readings(M, P):
    """(similarity, literal) weighted norms; a reading needing an inverse of singular P is inf."""
    if not matops.is_spd(P):
        return math.inf, math.inf
    return matops.weighted_matrix_norm(M, P), matops.literal_pnorm(M, P)


def _sigma_inv_norms(P0, Sigma_t):
    # weight Sigma_t^{-1}: literal ||S^{1/2} P0 S^{1/2}||, similarity ||S^{-1/2} P0 S^{1/2}||
    Sh = matops.sqrtm_psd(Sigma_t)
    literal = float(np.linalg.norm(Sh @ P0 @ Sh, 2))
    if matops.is_spd(Sigma_t):
        _, Smh = matops.sqrtm_spd(Sigma_t)
        similarity = float(np.linalg.norm(Smh @ P0 @ Sh, 2))
    else:
        similarity = math.nan
    return similarity, literal


def power_norm_series(A, S, tol=SERIES_TOL, cap=T_MIN_CAP):
    """(similarity, literal) sums over s >= 0 of ||A^s||_S, truncated once terms fall below tol."""
    Sh, Smh = matops.sqrtm_spd(S)
    As = np.eye(A.shape[0])
    sim_total = lit_total = 0.0
    for _ in range(cap):
        sim = float(np.linalg.norm(Sh @ As @ Smh, 2))
        lit = float(np.linalg.norm(Smh @ As @ Smh, 2))
        sim_total += sim
        lit_total += lit
        if max(sim, lit) < tol:
            return sim_total, lit_total
        As = As @ A
    raise ConvergenceError("power-norm series did not converge")


@dataclass(eq=False)
class EfficiencyCertificate:
    N: int
    t: int
    M: float
    t_min: int
    P: np.ndarray
    rho: float
    rho_escape: float
    rho_inflated: bool
    Sigma: np.ndarray
    SigmaTilde: np.ndarray
    P0_aug: np.ndarray
    Qcal: float
    a0: float
    Kdiff: float
    P0_P_norm: float
    P0_SigInv_norm: float
    c1: float
    c2: float
    Delta_P0: float
    Qscr1: np.ndarray
    Delta: np.ndarray
    readings: dict = field(default_factory=dict)

    @property
    def spread(self):
        # ||Sigma_tilde|| ||P|| ||P^{-1}||
        return (float(np.linalg.norm(self.SigmaTilde, 2)) * float(np.linalg.norm(self.P, 2))
                * float(np.linalg.norm(np.linalg.inv(self.P), 2)))

    def log_escape(self, a):
        r, N = self.rho_escape, self.N
        return math.log(4 * N / (r ** -0.5 - 1)) - (1 - r**0.25) ** 2 / (2 * N * self.spread) * a**2

    def escape(self, a):
        """Tail bound on P(||x_aug|| >= a) along the transformed sequence."""
        return math.exp(self.log_escape(a))

    @property
    def moment_bracket(self):
        return self.Qcal * self.P0_P_norm**2 + (self.N**2 + 2 * self.N) * self.P0_SigInv_norm**2

    @property
    def fourth_moment_bound(self):
        return 8 * self.moment_bracket

    def switch_prob_bound(self, M=None, t=None):
        M = self.M if M is None else M
        t = self.t if t is None else t
        if self.Kdiff == 0:
            return 0.0
        return t * self.escape(M / self.Kdiff)

    def log_switch_prob_bound(self, M=None, t=None):
        M = self.M if M is None else M
        t = self.t if t is None else t
        if self.Kdiff == 0:
            return -math.inf
        return math.log(t) + self.log_escape(M / self.Kdiff)

    def log_G(self, M=None, t=None):
        return 0.75 * math.log(2) + 0.25 * math.log(self.moment_bracket) + 0.25 * self.log_switch_prob_bound(M, t)

    def G(self, M=None, t=None):
        return math.exp(self.log_G(M, t))

    def log_gap_bound(self, M=None, t=None):
        lg = self.log_G(M, t)
        if lg == -math.inf:
            return -math.inf
        # 2 c1 c2 G + (c2^2 + ||Delta||) G^2, evaluated without underflow
        return lg + float(np.logaddexp(math.log(2 * self.c1 * self.c2), math.log(self.c2**2 + self.Delta_P0) + lg))

    def gap_bound(self, M=None, t=None):
        return math.exp(self.log_gap_bound(M, t))

    @property
    def decay_constant(self):
        r = self.rho_escape
        return (1 - r**0.25) ** 2 / (2 * self.N * self.spread * self.Kdiff**2)

    @property
    def threshold_valid(self):
        return self.M >= self.a0 * self.Kdiff

    @property
    def dwell_valid(self):
        return self.t >= self.t_min

    @property
    def valid(self):
        return self.threshold_valid and self.dwell_valid


def decay_slope(Ms, log_values):
    """Least-squares slope of log_values against M^2 (centered for conditioning)."""
    x = np.asarray(Ms, dtype=float) ** 2
    y = np.asarray(log_values, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def efficiency_certificate(sys, primary, fallback, cfg, dwell=None):
    """All constants of the fourth-moment, escape, switching-probability and cost-gap bounds.

    The N-dimensional weight ``P0_aug`` solves the Lyapunov equation of the
    augmented fallback loop with weight blockdiag(Q, K0'RK0 + I, I); it plays
    the role of P0 on the stacked state [x; z0; z1].
    """
    dwell = dwell or dwell_certificate(sys, primary, fallback)
    scrA0 = build_scr_A0(sys, primary, fallback)
    scrA1 = build_scr_A1(sys, primary, fallback)
    Sigma = build_Sigma(sys, primary, fallback)
    Sigma_t = build_sigma_tilde(scrA0, Sigma)
    n, n0, n1 = sys.n, fallback.nc, primary.nc
    N = n + n0 + n1
    P, rho = dwell.P, dwell.rho
    rho_e = max(rho, RHO_FLOOR)

    Pn = float(np.linalg.norm(P, 2))
    Sn = float(np.linalg.norm(Sigma_t, 2))
    trSP = float(np.trace(Sigma_t @ P))
    Qcal = (6 * rho * trSP**2 + (1 - rho) * (N**2 + 2 * N) * Pn**2 * Sn**2) / ((1 - rho) * (1 - rho**2))
    spread = Sn * Pn * float(np.linalg.norm(np.linalg.inv(P), 2))
    a0 = 8 * N * spread / (1 - rho_e**0.25)
    Kdiff = float(np.linalg.norm(np.hstack([fallback.Kc, -primary.Kc]), 2))

    K0, K1, R = fallback.Kc, primary.Kc, sys.R
    P0_aug = matops.solve_dlyap_transpose(
        scrA0, matops.block_diag(sys.Q, K0.T @ R @ K0 + np.eye(n0), np.eye(n1)))
    Qscr1 = matops.block_diag(sys.Q, np.zeros((n0, n0)), K1.T @ R @ K1)
    Delta = matops.block_diag(np.zeros((n, n)), K0.T @ R @ K0, -K1.T @ R @ K1)
    S = Qscr1 + np.eye(N)

    readings = {}
    readings["P0_P"] = _both_readings(P0_aug, P)
    readings["P0_SigInv"] = _sigma_inv_norms(P0_aug, Sigma_t)
    readings["Q1_P"] = _both_readings(Qscr1, P)
    readings["Adiff_S"] = _both_readings(scrA0 - scrA1, S)
    readings["S_P0"] = _both_readings(S, P0_aug)
    readings["A1_series"] = power_norm_series(scrA1, S)
    readings["Delta_P0"] = _both_readings(Delta, P0_aug)

    def worst(key):
        return max(v for v in readings[key] if not math.isnan(v))

    base = math.sqrt(float(np.trace(Sigma @ P)) / (1 - rho))
    c1_pair = tuple(q * base for q in readings["Q1_P"])
    c2_pair = tuple(readings["Adiff_S"][i] * readings["S_P0"][i] * readings["A1_series"][i] for i in (0, 1))
    readings["c1"] = c1_pair
    readings["c2"] = c2_pair

    return EfficiencyCertificate(
        N=N, t=cfg.t, M=cfg.M, t_min=dwell.t_min, P=P, rho=rho, rho_escape=rho_e,
        rho_inflated=rho_e != rho, Sigma=Sigma, SigmaTilde=Sigma_t, P0_aug=P0_aug,
        Qcal=Qcal, a0=a0, Kdiff=Kdiff,
        P0_P_norm=worst("P0_P"), P0_SigInv_norm=worst("P0_SigInv"),
        c1=max(c1_pair), c2=max(c2_pair), Delta_P0=worst("Delta_P0"),
        Qscr1=Qscr1, Delta=Delta, readings=readings,
    )


# --- report ------------------------------------------------------------------------

REPORT_HEADER = "lqg-certificate v1"


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return repr(float(x))


def report_lines(assumptions, safety=None, dwell=None, efficiency=None, notes=None):
    """Key-value dump; matrices use the model-file ``matrix NAME rows cols`` block form."""
    from .model import format_matrix

    lines = [REPORT_HEADER]
    for k, v in assumptions.radii().items():
        lines.append(f"scalar rho({k}) {_fmt(v)}")
    lines.append(f"flag assumption1 {_fmt(assumptions.assumption1)}")
    lines.append(f"flag assumption2 {_fmt(assumptions.assumption2)}")
    if safety is not None:
        lines.append(f"scalar M {_fmt(safety.M)}")
        lines.append(f"scalar rho0 {_fmt(safety.rho0)}")
        lines.append(f"scalar lemma1_bound {_fmt(safety.lemma1_bound)}")
        lines.append(f"scalar thm1_bound {_fmt(safety.thm1_bound)}")
        lines += format_matrix("P0", safety.P0)
    if dwell is not None:
        lines.append(f"scalar rho {_fmt(dwell.rho)}")
        lines.append(f"scalar rho_exact {_fmt(dwell.rho_exact)}")
        lines.append(f"scalar t_min {dwell.t_min}")
        lines += format_matrix("P", dwell.P)
    if efficiency is not None:
        e = efficiency
        lines.append(f"scalar t {e.t}")
        lines.append(f"scalar N {e.N}")
        for name in ("rho_escape", "Qcal", "a0", "Kdiff", "P0_P_norm", "P0_SigInv_norm", "c1", "c2", "Delta_P0"):
            lines.append(f"scalar {name} {_fmt(getattr(e, name))}")
        lines.append(f"flag rho_inflated {_fmt(e.rho_inflated)}")
        for key, (sim, lit) in e.readings.items():
            lines.append(f"scalar {key}_similarity {_fmt(sim)}")
            lines.append(f"scalar {key}_literal {_fmt(lit)}")
        lines.append(f"scalar a0_Kdiff {_fmt(e.a0 * e.Kdiff)}")
        lines.append(f"scalar escape_M_over_K {_fmt(e.escape(e.M / e.Kdiff) if e.Kdiff else 0.0)}")
        lines.append(f"scalar log_switch_prob_bound {_fmt(e.log_switch_prob_bound())}")
        lines.append(f"scalar fourth_moment_bound {_fmt(e.fourth_moment_bound)}")
        lines.append(f"scalar switch_prob_bound {_fmt(e.switch_prob_bound())}")
        lines.append(f"scalar G {_fmt(e.G())}")
        lines.append(f"scalar gap_bound {_fmt(e.gap_bound())}")
        lines.append(f"scalar log_gap_bound {_fmt(e.log_gap_bound())}")
        lines.append(f"scalar decay_constant {_fmt(e.decay_constant) if e.Kdiff else 'inf'}")
        lines.append(f"flag dwell_valid {_fmt(e.dwell_valid)}")
        lines.append(f"flag threshold_valid {_fmt(e.threshold_valid)}")
        lines += format_matrix("SigmaTilde", e.SigmaTilde)
        lines += format_matrix("Qscr1", e.Qscr1)
        lines += format_matrix("Delta", e.Delta)
        lines += format_matrix("P0_aug", e.P0_aug)
    for note in notes or ():
        lines.append(f"note {note}")
    return lines


def write_report(path, lines):
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path):
    """Parse a report into {'scalar': {...}, 'flag': {...}, 'matrix': {...}, 'note': [...]}."""
    out = {"scalar": {}, "flag": {}, "matrix": {}, "note": []}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError("not a certificate report")
    i = 1
    while i < len(lines):
        kind, _, rest = lines[i].partition(" ")
        if kind == "scalar":
            name, value = rest.split(" ", 1)
            out["scalar"][name] = float(value)
        elif kind == "flag":
            name, value = rest.split(" ", 1)
            out["flag"][name] = value == "true"
        elif kind == "matrix":
            name, r, c = rest.split()
            rows = [[float(tok) for tok in lines[i + 1 + j].split()] for j in range(int(r))]
            out["matrix"][name] = np.array(rows).reshape(int(r), int(c))
            i += int(r)
        elif kind == "note":
            out["note"].append(rest)
        i += 1
    return out
