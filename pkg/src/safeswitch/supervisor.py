"""The switching supervisor: threshold test on ||u1 - u0|| with a fallback dwell counter.

The decision depends only on the remaining-dwell counter ``xi`` and the gap
between the two candidate inputs; plant states and outputs are never read.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class SupervisorConfig:
    M: float
    t: int

    def __post_init__(self):
        if not (self.M > 0):
            raise ValueError(f"switching threshold M must be > 0, got {self.M}")
        if int(self.t) != self.t or self.t < 1:
            raise ValueError(f"dwell time t must be an integer >= 1, got {self.t}")
        object.__setattr__(self, "M", float(self.M))
        object.__setattr__(self, "t", int(self.t))

    @classmethod
    def never_switch(cls, t=1):
        return cls(math.inf, t)


@dataclass(frozen=True, eq=False)
class SupervisorState:
    xi: int
    z0: np.ndarray
    z1: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, primary, fallback):
        return cls(0, np.zeros(fallback.nc), np.zeros(primary.nc), 0)


@dataclass(frozen=True, eq=False)
class StepDecision:
    applied_input: np.ndarray
    used_primary: bool
    triggered: bool
    u1: np.ndarray
    u0: np.ndarray


def switch_rule(xi, gap, M, t):
    """Scalar core of one supervisor step.

    Returns ``(used_primary, triggered, xi_next)``. A trigger applies the
    fallback on the same step, so the fallback runs for ``t`` consecutive
    steps including the triggering one. A NaN gap (a primary that produced
    no usable output) counts as a breach.
    """
    if xi > 0:
        return False, False, xi - 1
    if gap >= M or math.isnan(gap):
        return False, True, t - 1
    return True, False, 0


def decide(state: SupervisorState, cfg: SupervisorConfig, primary, fallback) -> StepDecision:
    if state.z1.shape != (primary.nc,) or state.z0.shape != (fallback.nc,):
        raise DimensionError("supervisor state does not match controller dimensions")
    if primary.m != fallback.m:
        raise DimensionError("primary and fallback disagree on input dimension")
    u1 = primary.Kc @ state.z1
    u0 = fallback.Kc @ state.z0
    gap = float(np.linalg.norm(u1 - u0))
    used_primary, triggered, _ = switch_rule(state.xi, gap, cfg.M, cfg.t)
    return StepDecision(u1 if used_primary else u0, used_primary, triggered, u1, u0)


def advance(state: SupervisorState, decision: StepDecision, cfg: SupervisorConfig, primary, fallback, y):
    """Update both controller states with the applied input and count down the dwell."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (primary.p,) or primary.p != fallback.p:
        raise DimensionError(f"measurement has length {y.shape[0]}, expected {primary.p}")
    u = decision.applied_input
    z1 = primary.Ac @ state.z1 + primary.Bc @ u + primary.Lc @ y
    z0 = fallback.Ac @ state.z0 + fallback.Bc @ u + fallback.Lc @ y
    xi = cfg.t if decision.triggered else state.xi
    return SupervisorState(max(xi - 1, 0), z0, z1, state.k + 1)
