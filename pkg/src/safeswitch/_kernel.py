"""Compiled single-trajectory closed-loop stepper.

Explicit loops keep the floating-point evaluation order fixed, so results
do not depend on BLAS kernels or on how many trajectories run at once.
"""

import numba
import numpy as np

OVERFLOW_NORM = 1e150


@numba.njit(cache=True, nogil=True)
def _matvec(M, v, out):
    for i in range(M.shape[0]):
        s = 0.0
        for j in range(M.shape[1]):
            s += M[i, j] * v[j]
        out[i] = s


@numba.njit(cache=True, nogil=True)
def closed_loop(A, B, C, A1, B1, L1, K1, A0, B0, L0, K0, Lw, Lv, eps, x0, M, t, switching):
    """Run Algorithm-style supervision for ``eps.shape[0]`` steps.

    ``eps`` holds standard normals, row k = [w-part (n), v-part (p)].
    Returns (states, inputs, used_primary, triggered, u_diff, steps_done,
    primary_lost_at). States are stacked [x; z0; z1] for k = 0..steps_done.

    The run stops once ||[x; z0]|| exceeds OVERFLOW_NORM, or ||z1|| does
    without switching. Under switching an overflowing z1 only makes the
    primary output unusable: z1 is set to NaN, every later gap counts as a
    breach, and ``primary_lost_at`` records the step.
    """
    T = eps.shape[0]
    n = A.shape[0]
    m = B.shape[1]
    p = C.shape[0]
    n0 = A0.shape[0]
    n1 = A1.shape[0]
    N = n + n0 + n1
    states = np.zeros((T + 1, N))
    inputs = np.zeros((T, m))
    used = np.zeros(T, dtype=np.bool_)
    trig = np.zeros(T, dtype=np.bool_)
    udiff = np.zeros(T)

    x = x0.copy()
    z0 = np.zeros(n0)
    z1 = np.zeros(n1)
    u1 = np.zeros(m)
    u0 = np.zeros(m)
    w = np.zeros(n)
    v = np.zeros(p)
    y = np.zeros(p)
    tmp_n = np.zeros(n)
    tmp_nb = np.zeros(n)
    tmp0 = np.zeros(n0)
    tmp1 = np.zeros(n1)
    xi = 0
    lost_at = -1
    for i in range(n):
        states[0, i] = x[i]

    steps = T
    for k in range(T):
        _matvec(K1, z1, u1)
        _matvec(K0, z0, u0)
        g = 0.0
        for i in range(m):
            d = u1[i] - u0[i]
            g += d * d
        g = np.sqrt(g)
        if lost_at >= 0 or not np.isfinite(g):
            g = np.inf
        udiff[k] = g
        if xi > 0:
            use_primary = False
            xi -= 1
        elif switching and g >= M:
            use_primary = False
            trig[k] = True
            xi = t - 1
        else:
            use_primary = True
        used[k] = use_primary
        u = u1 if use_primary else u0
        for i in range(m):
            inputs[k, i] = u[i]

        _matvec(Lw, eps[k, :n], w)
        _matvec(Lv, eps[k, n:], v)
        _matvec(C, x, y)
        for i in range(p):
            y[i] += v[i]

        # x+ = A x + B u + w
        _matvec(A, x, tmp_n)
        _matvec(B, u, tmp_nb)
        nrm = 0.0
        for i in range(n):
            x[i] = tmp_n[i] + tmp_nb[i] + w[i]
            nrm += x[i] * x[i]
        # z0+ = A0 z0 + B0 u + L0 y
        _matvec(A0, z0, tmp0)
        new0 = tmp0.copy()
        _matvec(B0, u, tmp0)
        for i in range(n0):
            new0[i] += tmp0[i]
        _matvec(L0, y, tmp0)
        for i in range(n0):
            z0[i] = new0[i] + tmp0[i]
            nrm += z0[i] * z0[i]
        # z1+ = A1 z1 + B1 u + L1 y
        if lost_at < 0:
            _matvec(A1, z1, tmp1)
            new1 = tmp1.copy()
            _matvec(B1, u, tmp1)
            for i in range(n1):
                new1[i] += tmp1[i]
            _matvec(L1, y, tmp1)
            nrm1 = 0.0
            for i in range(n1):
                z1[i] = new1[i] + tmp1[i]
                nrm1 += z1[i] * z1[i]
            if not (np.sqrt(nrm1) <= OVERFLOW_NORM):
                if switching:
                    lost_at = k + 1
                    for i in range(n1):
                        z1[i] = np.nan
                else:
                    # the primary drives the plant, so this is divergence
                    nrm = np.inf

        for i in range(n):
            states[k + 1, i] = x[i]
        for i in range(n0):
            states[k + 1, n + i] = z0[i]
        for i in range(n1):
            states[k + 1, n + n0 + i] = z1[i]
        if not (np.sqrt(nrm) <= OVERFLOW_NORM):
            steps = k + 1
            break
    return states, inputs, used, trig, udiff, steps, lost_at
