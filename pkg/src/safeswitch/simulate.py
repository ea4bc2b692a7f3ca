"""Seeded closed-loop rollouts, paired Monte Carlo and transformed-sequence diagnostics."""

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matops
from ._kernel import OVERFLOW_NORM, closed_loop
from .errors import DimensionError, NoSolutionError, TraceUnavailableError
from .model import SystemModel, zero_controller
from .supervisor import SupervisorConfig, SupervisorState, advance, decide


class NoiseStream:
    """Deterministic (w(k), v(k)) pairs with w ~ N(0, W), v ~ N(0, V).

    Each step consumes n + p standard normals from a PCG64 generator seeded
    with ``seed``; the first n feed w through chol(W), the rest feed v.
    """

    def __init__(self, seed, W, V, zero=False):
        self.seed = int(seed)
        self.W = np.asarray(W, dtype=float)
        self.V = np.asarray(V, dtype=float)
        self.Lw = np.linalg.cholesky(self.W)
        self.Lv = np.linalg.cholesky(self.V)
        self.zero = zero

    @property
    def width(self):
        return self.W.shape[0] + self.V.shape[0]

    def standard_normals(self, T):
        if self.zero:
            return np.zeros((T, self.width))
        return np.random.default_rng(self.seed).standard_normal((T, self.width))

    def sample(self, T):
        eps = self.standard_normals(T)
        n = self.W.shape[0]
        return eps[:, :n] @ self.Lw.T, eps[:, n:] @ self.Lv.T

    def checksum(self, T):
        return hashlib.sha256(self.standard_normals(T).tobytes()).hexdigest()


@dataclass
class RolloutResult:
    T: int
    steps: int
    stage_costs: np.ndarray
    used_primary: np.ndarray
    triggered: np.ndarray
    u_diff: np.ndarray
    state_norms: np.ndarray
    dims: tuple
    states: Optional[np.ndarray] = None
    thin: int = 1
    fourth_moment_P0: Optional[float] = None
    seed: Optional[int] = None
    primary_lost_at: Optional[int] = None

    @property
    def diverged(self):
        return self.steps < self.T

    @property
    def empirical_cost(self):
        return float(np.mean(self.stage_costs)) if self.steps else 0.0

    @property
    def fallback_fraction(self):
        return float(1.0 - np.mean(self.used_primary)) if self.steps else 0.0

    @property
    def max_state_norm(self):
        return float(np.max(self.state_norms))

    @property
    def switch_events(self):
        return [(int(k), True) for k in np.flatnonzero(self.triggered)]

    def quad_series(self, P):
        """x_aug(k)^T P x_aug(k) for k = 0..steps on the stored trajectory."""
        if self.states is None:
            raise TraceUnavailableError("trajectory states were not recorded")
        return quad_forms(self.states, P)


def quad_forms(X, P):
    """Row-wise x'Px, reading only coordinates that P actually weights.

    Coordinates outside the support may be NaN (an overflowed primary state).
    """
    P = np.asarray(P, dtype=float)
    support = np.flatnonzero(np.any(P != 0, axis=0) | np.any(P != 0, axis=1))
    Xs = X[:, support]
    return np.einsum("ki,ij,kj->k", Xs, P[np.ix_(support, support)], Xs)


def _fallback_or_zero(sys, fallback):
    return zero_controller(sys) if fallback is None else fallback


def _run_kernel(sys, primary, fallback, M, t, switching, seed, T, x0, zero_noise):
    stream = NoiseStream(seed, sys.W, sys.V, zero=zero_noise)
    eps = stream.standard_normals(T)
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.n,):
        raise DimensionError(f"x0 has length {x0.shape[0]}, expected {sys.n}")
    M = math.inf if M is None else float(M)
    # an infinite threshold never triggers: take the unswitched path so both agree bit for bit
    switching = switching and not math.isinf(M)
    args = [np.ascontiguousarray(a, dtype=float) for a in (
        sys.A, sys.B, sys.C, primary.Ac, primary.Bc, primary.Lc, primary.Kc,
        fallback.Ac, fallback.Bc, fallback.Lc, fallback.Kc, stream.Lw, stream.Lv)]
    return closed_loop(*args, eps, x0, M, int(t), bool(switching))


def _package(sys, primary, fallback, raw, T, seed, record_states, thin, P0):
    states, inputs, used, trig, udiff, steps, lost_at = raw
    states = states[: steps + 1]
    n = sys.n
    X = states[:steps, :n]
    U = inputs[:steps]
    stage = np.einsum("ki,ij,kj->k", X, sys.Q, X) + np.einsum("ki,ij,kj->k", U, sys.R, U)
    norms = np.sqrt(np.einsum("ki,ki->k", states[:, :n], states[:, :n]))
    fourth = None
    if P0 is not None:
        P0 = np.asarray(P0, dtype=float)
        if P0.shape[0] < states.shape[1]:
            P0 = matops.block_diag(P0, np.zeros((states.shape[1] - P0.shape[0],) * 2))
        q = quad_forms(states[:steps], P0)
        fourth = float(np.mean(q ** 2)) if steps else 0.0
    kept = None
    if record_states:
        kept = states[::thin].copy()
    return RolloutResult(
        T=T, steps=int(steps), stage_costs=stage, used_primary=used[:steps].copy(),
        triggered=trig[:steps].copy(), u_diff=udiff[:steps].copy(), state_norms=norms,
        dims=(n, fallback.nc, primary.nc), states=kept, thin=thin if record_states else 1,
        fourth_moment_P0=fourth, seed=seed, primary_lost_at=None if lost_at < 0 else int(lost_at),
    )


def rollout_switched(sys: SystemModel, primary, fallback, cfg: SupervisorConfig, seed, T, x0=None, *,
                     zero_noise=False, record_states=True, thin=1, P0=None):
    """Closed loop under the switching supervisor; deterministic in ``seed``.

    Runs stop early (``result.diverged``) once ||[x; z0]|| exceeds 1e150.
    An overflowing primary state only locks the primary out
    (``result.primary_lost_at``).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    raw = _run_kernel(sys, primary, fallback, cfg.M, cfg.t, True, seed, T, x0, zero_noise)
    return _package(sys, primary, fallback, raw, T, seed, record_states, thin, P0)


def rollout_unswitched(sys: SystemModel, controller, seed, T, x0=None, *, fallback=None,
                       zero_noise=False, record_states=True, thin=1, P0=None):
    """Closed loop under ``controller`` alone.

    If ``fallback`` is given its internal state is propagated with the
    applied input so ``u_diff`` is comparable with a switched run; it never
    affects the plant. Same seed means the same (w, v) realization.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    fb = _fallback_or_zero(sys, fallback)
    raw = _run_kernel(sys, controller, fb, None, 1, False, seed, T, x0, zero_noise)
    return _package(sys, controller, fb, raw, T, seed, record_states, thin, P0)


def rollout_reference(sys, primary, fallback, cfg, seed, T, x0=None, zero_noise=False):
    """Slow pure-Python rollout driven by ``supervisor.decide``/``advance``.

    Returns (states, used_primary, triggered); used to cross-check the
    compiled kernel.
    """
    stream = NoiseStream(seed, sys.W, sys.V, zero=zero_noise)
    w_all, v_all = stream.sample(T)
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    state = SupervisorState.initial(primary, fallback)
    states = [np.concatenate([x, state.z0, state.z1])]
    used, trig = [], []
    for k in range(T):
        d = decide(state, cfg, primary, fallback)
        y = sys.C @ x + v_all[k]
        x = sys.A @ x + sys.B @ d.applied_input + w_all[k]
        state = advance(state, d, cfg, primary, fallback, y)
        states.append(np.concatenate([x, state.z0, state.z1]))
        used.append(d.used_primary)
        trig.append(d.triggered)
    return np.array(states), np.array(used), np.array(trig)


def estimate_cost_analytic(scrA, Sigma, Qscr):
    """Stationary average cost tr(X Qscr) of x+ = scrA x + noise(Sigma)."""
    if not matops.is_schur_stable(scrA):
        raise NoSolutionError("closed loop is not Schur stable; stationary cost is infinite")
    X = matops.solve_dlyap(scrA, Sigma, require_spd=False)
    return float(np.trace(X @ np.asarray(Qscr, dtype=float)))


@dataclass
class TrajectorySummary:
    seed: int
    cost: float
    cost_unswitched: float
    fallback_fraction: float
    max_state_norm: float
    max_state_norm_unswitched: float
    fourth_moment_P0: Optional[float]
    diverged: bool
    diverged_unswitched: bool


@dataclass
class MonteCarloResult:
    n_traj: int
    T: int
    mean_cost: float
    mean_cost_unswitched: float
    gap: float
    gap_std_err: float
    cost_std_err: float
    cost_unswitched_std_err: float
    mean_fallback_fraction: float
    mean_fourth_moment: Optional[float]
    trajectories: list
    per_step: dict = field(default_factory=dict)

    @property
    def relative_gap(self):
        return self.gap / self.mean_cost_unswitched

    @property
    def diverged(self):
        return [s.seed for s in self.trajectories if s.diverged]


def _std_err(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return math.nan
    # diverged trajectories make this inf rather than a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.std(values, ddof=1) / math.sqrt(values.size))


def monte_carlo(sys, primary, fallback, cfg, n_traj, T, base_seed, *, x0=None, zero_noise=False,
                P0=None, weights=None, burn_in=0, workers=1):
    """Seed-matched switched/unswitched pairs with seeds ``base_seed + i``.

    ``weights`` maps names to N x N matrices; for each, the per-step mean of
    the quadratic form (and of its square) over trajectories of the switched
    run is returned in ``per_step``. Aggregation is in trajectory order, so
    results do not depend on ``workers``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if not 0 <= burn_in < T:
        raise ValueError("burn_in must lie in [0, T)")
    weights = weights or {}
    record = bool(weights)

    def one(i):
        seed = base_seed + i
        sw = rollout_switched(sys, primary, fallback, cfg, seed, T, x0, zero_noise=zero_noise,
                              record_states=record, P0=P0)
        un = rollout_unswitched(sys, primary, seed, T, x0, fallback=fallback, zero_noise=zero_noise,
                                record_states=False)
        quads = {}
        for name, Wt in weights.items():
            q = np.full(T + 1, np.nan)
            q[: sw.steps + 1] = sw.quad_series(Wt)
            quads[name] = q
        c_sw = float(np.mean(sw.stage_costs[burn_in:])) if sw.steps > burn_in else math.inf
        c_un = float(np.mean(un.stage_costs[burn_in:])) if un.steps > burn_in else math.inf
        summary = TrajectorySummary(
            seed=seed, cost=c_sw, cost_unswitched=c_un, fallback_fraction=sw.fallback_fraction,
            max_state_norm=sw.max_state_norm, max_state_norm_unswitched=un.max_state_norm,
            fourth_moment_P0=sw.fourth_moment_P0, diverged=sw.diverged, diverged_unswitched=un.diverged,
        )
        return summary, quads

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_traj)))
    else:
        results = [one(i) for i in range(n_traj)]

    summaries = [r[0] for r in results]
    costs = np.array([s.cost for s in summaries])
    costs_un = np.array([s.cost_unswitched for s in summaries])
    diffs = costs - costs_un
    per_step = {}
    for name in weights:
        stack = np.vstack([r[1][name] for r in results])
        per_step[name] = np.mean(stack, axis=0)
        per_step[name + "^2"] = np.mean(stack ** 2, axis=0)
    fourth = None
    if P0 is not None:
        fourth = float(np.mean([s.fourth_moment_P0 for s in summaries]))
    return MonteCarloResult(
        n_traj=n_traj, T=T,
        mean_cost=float(np.mean(costs)), mean_cost_unswitched=float(np.mean(costs_un)),
        gap=float(np.mean(diffs)), gap_std_err=_std_err(diffs),
        cost_std_err=_std_err(costs), cost_unswitched_std_err=_std_err(costs_un),
        mean_fallback_fraction=float(np.mean([s.fallback_fraction for s in summaries])),
        mean_fourth_moment=fourth, trajectories=summaries, per_step=per_step,
    )


@dataclass
class TransformedTrace:
    indices: np.ndarray
    labels: list
    states: np.ndarray

    PRIMARY_STEP = "primary-step"
    FALLBACK_BLOCK = "fallback-block"


def extract_transformed(result: RolloutResult, cfg: SupervisorConfig):
    """Subsample the trajectory so that each t-step fallback block becomes one step."""
    if result.states is None or result.thin != 1:
        raise TraceUnavailableError("transformed trace needs the full, unthinned trajectory")
    idx, labels = [], []
    i = 0
    while i <= result.steps:
        idx.append(i)
        if i == result.steps:
            labels.append(None)
            break
        if result.used_primary[i]:
            labels.append(TransformedTrace.PRIMARY_STEP)
            i += 1
        else:
            if not result.triggered[i]:
                raise AssertionError(f"fallback at step {i} not aligned with a trigger event")
            labels.append(TransformedTrace.FALLBACK_BLOCK)
            i += cfg.t
    # the final index carries no outgoing transition
    if labels and labels[-1] is None:
        labels.pop()
    idx = np.array(idx, dtype=int)
    return TransformedTrace(indices=idx, labels=labels, states=result.states[idx])


def write_trajectory_csv(path, result: RolloutResult):
    """Columns: k, state_norm, applied_primary, stage_cost, u_diff_norm (17 significant digits)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "state_norm", "applied_primary", "stage_cost", "u_diff_norm"])
        for k in range(result.steps):
            writer.writerow([k, f"{result.state_norms[k]:.17g}", int(result.used_primary[k]),
                             f"{result.stage_costs[k]:.17g}", f"{result.u_diff[k]:.17g}"])


__all__ = [
    "NoiseStream", "RolloutResult", "rollout_switched", "rollout_unswitched", "rollout_reference",
    "estimate_cost_analytic", "monte_carlo", "MonteCarloResult", "TransformedTrace",
    "extract_transformed", "write_trajectory_csv", "OVERFLOW_NORM",
]
