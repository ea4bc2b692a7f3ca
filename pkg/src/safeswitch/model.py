"""Plant and controller models, augmented closed-loop matrices, synthesis and file I/O."""

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import matops
from .errors import DimensionError, GenerationError, ModelFormatError, NotPositiveDefiniteError

PRIMARY = "primary"
FALLBACK = "fallback"


def _frozen(a):
    a = np.array(a, dtype=float, ndmin=2)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SystemModel:
    """x(k+1) = A x + B u + w,  y = C x + v,  w ~ N(0, W), v ~ N(0, V); stage cost x'Qx + u'Ru."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in "ABCWVQR":
            object.__setattr__(self, name, _frozen(matops.as_matrix(getattr(self, name), name)))
        n = self.A.shape[0]
        expected = {
            "A": (n, n), "B": (n, self.m), "C": (self.p, n),
            "W": (n, n), "V": (self.p, self.p), "Q": (n, n), "R": (self.m, self.m),
        }
        if self.A.shape[1] != n:
            raise DimensionError(f"A must be square, got {self.A.shape}")
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in "WVQR":
            if not matops.is_spd(getattr(self, name)):
                raise NotPositiveDefiniteError(f"{name} is not symmetric positive definite")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def equals(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABCWVQR")


@dataclass(frozen=True, eq=False)
class DynamicController:
    """z(k+1) = Ac z + Bc u + Lc y,  u_c(k) = Kc z."""

    Ac: np.ndarray
    Bc: np.ndarray
    Lc: np.ndarray
    Kc: np.ndarray
    label: str = PRIMARY

    def __post_init__(self):
        for name in ("Ac", "Bc", "Lc", "Kc"):
            object.__setattr__(self, name, _frozen(matops.as_matrix(getattr(self, name), name)))
        nc = self.Ac.shape[0]
        if self.Ac.shape != (nc, nc):
            raise DimensionError(f"Ac must be square, got {self.Ac.shape}")
        if self.Bc.shape[0] != nc or self.Lc.shape[0] != nc or self.Kc.shape[1] != nc:
            raise DimensionError("controller matrices disagree on the internal state dimension")
        if self.Kc.shape[0] != self.Bc.shape[1]:
            raise DimensionError(f"Kc has {self.Kc.shape[0]} rows but Bc has {self.Bc.shape[1]} columns")
        if self.label not in (PRIMARY, FALLBACK):
            raise ValueError(f"unknown controller label {self.label!r}")

    @property
    def nc(self):
        return self.Ac.shape[0]

    @property
    def m(self):
        return self.Bc.shape[1]

    @property
    def p(self):
        return self.Lc.shape[1]

    def check_compatible(self, sys: SystemModel):
        if self.m != sys.m or self.p != sys.p:
            raise DimensionError(
                f"{self.label} controller has (m, p) = ({self.m}, {self.p}), system has ({sys.m}, {sys.p})"
            )

    def relabel(self, label):
        return DynamicController(self.Ac, self.Bc, self.Lc, self.Kc, label)

    def equals(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("Ac", "Bc", "Lc", "Kc"))


def zero_controller(sys: SystemModel, label=FALLBACK):
    """u(k) = 0, realized with a single identically-zero internal state."""
    return DynamicController(np.zeros((1, 1)), np.zeros((1, sys.m)), np.zeros((1, sys.p)),
                             np.zeros((sys.m, 1)), label)


def default_fallback(sys: SystemModel):
    rho = matops.spectral_radius(sys.A)
    if rho >= 1.0:
        raise ValueError(f"zero fallback requires an open-loop stable plant (spectral radius {rho:.6g})")
    return zero_controller(sys)


def build_cal_A(sys: SystemModel, ctrl: DynamicController):
    """Closed loop of [x; z] under a single controller: [[A, B K], [L C, Ac + Bc K]]."""
    ctrl.check_compatible(sys)
    return np.block([
        [sys.A, sys.B @ ctrl.Kc],
        [ctrl.Lc @ sys.C, ctrl.Ac + ctrl.Bc @ ctrl.Kc],
    ])


def build_cal_A0(sys, fallback):
    return build_cal_A(sys, fallback)


def build_cal_A1(sys, primary):
    return build_cal_A(sys, primary)


def build_scr_A1(sys, primary, fallback):
    """Augmented [x; z0; z1] dynamics when the primary input u = K1 z1 is applied."""
    primary.check_compatible(sys)
    fallback.check_compatible(sys)
    n0, n1 = fallback.nc, primary.nc
    K1 = primary.Kc
    # the (z0, z1) block is B0 K1: z0 is driven by the applied input
    return np.block([
        [sys.A, np.zeros((sys.n, n0)), sys.B @ K1],
        [fallback.Lc @ sys.C, fallback.Ac, fallback.Bc @ K1],
        [primary.Lc @ sys.C, np.zeros((n1, n0)), primary.Ac + primary.Bc @ K1],
    ])


def build_scr_A0(sys, primary, fallback):
    """Augmented [x; z0; z1] dynamics when the fallback input u = K0 z0 is applied."""
    primary.check_compatible(sys)
    fallback.check_compatible(sys)
    n0, n1 = fallback.nc, primary.nc
    K0 = fallback.Kc
    # the (z1, z0) block is B1 K0: z1 is driven by the applied input
    return np.block([
        [sys.A, sys.B @ K0, np.zeros((sys.n, n1))],
        [fallback.Lc @ sys.C, fallback.Ac + fallback.Bc @ K0, np.zeros((n0, n1))],
        [primary.Lc @ sys.C, primary.Bc @ K0, primary.Ac],
    ])


def build_Sigma(sys, primary, fallback):
    """Covariance of the stacked noise [w; L0 v; L1 v]."""
    n = sys.n
    L0, L1, V = fallback.Lc, primary.Lc, sys.V
    N = n + fallback.nc + primary.nc
    S = np.zeros((N, N))
    S[:n, :n] = sys.W
    Lstack = np.vstack([L0, L1])
    S[n:, n:] = Lstack @ V @ Lstack.T
    return 0.5 * (S + S.T)


def build_sigma_tilde(scrA0, Sigma):
    """sum_t scrA0^t Sigma (scrA0^t)^T."""
    return matops.solve_dlyap(scrA0, Sigma, require_spd=False)


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    calA0: np.ndarray
    calA1: np.ndarray
    scrA1: np.ndarray
    scrA0: np.ndarray
    Sigma: np.ndarray
    SigmaTilde: Optional[np.ndarray]
    n: int
    n0: int
    n1: int

    @property
    def N(self):
        return self.n + self.n0 + self.n1

    @classmethod
    def build(cls, sys, primary, fallback):
        scrA0 = build_scr_A0(sys, primary, fallback)
        Sigma = build_Sigma(sys, primary, fallback)
        tilde = build_sigma_tilde(scrA0, Sigma) if matops.is_schur_stable(scrA0) else None
        return cls(
            calA0=build_cal_A0(sys, fallback),
            calA1=build_cal_A1(sys, primary),
            scrA1=build_scr_A1(sys, primary, fallback),
            scrA0=scrA0,
            Sigma=Sigma,
            SigmaTilde=tilde,
            n=sys.n, n0=fallback.nc, n1=primary.nc,
        )


def _kalman_rank(A, B):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    Kmat = np.hstack(blocks)
    s = np.linalg.svd(Kmat, compute_uv=False)
    return int(np.sum(s > 1e-8 * s[0])) if s.size and s[0] > 0 else 0


def is_controllable(A, B):
    return _kalman_rank(np.asarray(A, float), np.asarray(B, float)) == np.asarray(A).shape[0]


def is_observable(A, C):
    return is_controllable(np.asarray(A, float).T, np.asarray(C, float).T)


def optimal_gains(sys: SystemModel):
    """Return (K*, L*): LQR gain with u = K x and predictor-form Kalman gain."""
    P = matops.solve_dare(sys.A, sys.B, sys.Q, sys.R)
    K = matops.lqr_gain(sys.A, sys.B, sys.R, P)
    S = matops.solve_dare(sys.A.T, sys.C.T, sys.W, sys.V)
    L = -matops.lqr_gain(sys.A.T, sys.C.T, sys.V, S).T
    return K, L


def synth_optimal_controller(sys: SystemModel, label=PRIMARY):
    """Observer-based LQG controller (A - L*C, B, L*, K*)."""
    K, L = optimal_gains(sys)
    return DynamicController(sys.A - L @ sys.C, sys.B, L, K, label)


def perturb_controller(ctrl: DynamicController, lam: float):
    """Shift every controller matrix by lam times the all-ones matrix of its shape."""
    return DynamicController(
        ctrl.Ac + lam, ctrl.Bc + lam, ctrl.Lc + lam, ctrl.Kc + lam, ctrl.label
    )


def random_stable_system(seed, n, m, p, target_rho=0.95, max_attempts=100):
    """Random plant with spectral radius exactly ``target_rho`` and identity weights/covariances."""
    if not 0.0 < target_rho < 1.0:
        raise ValueError("target_rho must lie in (0, 1)")
    if min(n, m, p) < 1:
        raise ValueError("n, m, p must be >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        A = rng.standard_normal((n, n))
        rho = matops.spectral_radius(A)
        if rho < 1e-8:
            continue
        A = A * (target_rho / rho)
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        if is_controllable(A, B) and is_observable(A, C):
            return SystemModel(A, B, C, np.eye(n), np.eye(p), np.eye(n), np.eye(m))
    raise GenerationError(f"no controllable/observable system after {max_attempts} attempts")


# --- model files -----------------------------------------------------------

HEADER = "lqg-model v1"
SYSTEM_NAMES = ("A", "B", "C", "W", "V", "Q", "R")
FALLBACK_NAMES = ("A0", "B0", "L0", "K0")
PRIMARY_NAMES = ("A1", "B1", "L1", "K1")
ALL_NAMES = SYSTEM_NAMES + FALLBACK_NAMES + PRIMARY_NAMES


class ModelBundle(NamedTuple):
    system: SystemModel
    fallback: Optional[DynamicController]
    primary: Optional[DynamicController]


def format_matrix(name, M):
    M = np.atleast_2d(M)
    lines = [f"matrix {name} {M.shape[0]} {M.shape[1]}"]
    for row in M:
        lines.append(" ".join(repr(float(x)) for x in row))
    return lines


def save_model(path, system, fallback=None, primary=None):
    lines = [HEADER]
    for name in SYSTEM_NAMES:
        lines += format_matrix(name, getattr(system, name))
    for ctrl, names in ((fallback, FALLBACK_NAMES), (primary, PRIMARY_NAMES)):
        if ctrl is None:
            continue
        for name, attr in zip(names, ("Ac", "Bc", "Lc", "Kc")):
            lines += format_matrix(name, getattr(ctrl, attr))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_matrix_blocks(text, header, allowed):
    """Parse ``matrix NAME rows cols`` blocks after a header line; returns {name: array}."""
    lines = text.splitlines()
    idx = 0

    def next_line():
        nonlocal idx
        while idx < len(lines):
            raw = lines[idx].split("#", 1)[0].strip()
            idx += 1
            if raw:
                return raw
        return None

    first = next_line()
    if first != header:
        raise ModelFormatError(f"expected header {header!r}, got {first!r}", line=idx)
    out = {}
    while True:
        line = next_line()
        if line is None:
            break
        lineno = idx
        parts = line.split()
        if len(parts) != 4 or parts[0] != "matrix":
            raise ModelFormatError(f"expected 'matrix NAME rows cols', got {line!r}", line=lineno)
        _, name, r, c = parts
        if name not in allowed:
            raise ModelFormatError(f"unknown matrix name {name!r}", line=lineno, field=name)
        if name in out:
            raise ModelFormatError(f"duplicate matrix {name!r}", line=lineno, field=name)
        try:
            rows, cols = int(r), int(c)
        except ValueError:
            raise ModelFormatError(f"bad dimensions for {name}: {r} {c}", line=lineno, field=name) from None
        if rows < 1 or cols < 1:
            raise ModelFormatError(f"{name} must have positive dimensions", line=lineno, field=name)
        data = []
        for _ in range(rows):
            row = next_line()
            if row is None:
                raise ModelFormatError(f"unexpected end of file inside {name}", line=idx, field=name)
            try:
                vals = [float(tok) for tok in row.split()]
            except ValueError:
                raise ModelFormatError(f"non-numeric entry in {name}", line=idx, field=name) from None
            if len(vals) != cols:
                raise ModelFormatError(f"{name} row has {len(vals)} entries, expected {cols}", line=idx, field=name)
            data.append(vals)
        arr = np.array(data, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ModelFormatError(f"{name} has non-finite entries", line=lineno, field=name)
        out[name] = arr
    return out


def load_model(path):
    text = Path(path).read_text(encoding="utf-8")
    mats = parse_matrix_blocks(text, HEADER, ALL_NAMES)
    for name in SYSTEM_NAMES:
        if name not in mats:
            raise ModelFormatError(f"missing required matrix {name!r}", field=name)
    system = SystemModel(*(mats[k] for k in SYSTEM_NAMES))

    def controller(names, label):
        present = [k for k in names if k in mats]
        if not present:
            return None
        missing = [k for k in names if k not in mats]
        if missing:
            raise ModelFormatError(f"{label} controller is missing {', '.join(missing)}", field=missing[0])
        ctrl = DynamicController(*(mats[k] for k in names), label=label)
        ctrl.check_compatible(system)
        return ctrl

    return ModelBundle(system, controller(FALLBACK_NAMES, FALLBACK), controller(PRIMARY_NAMES, PRIMARY))
