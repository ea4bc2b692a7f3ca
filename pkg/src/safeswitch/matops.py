"""Dense real-matrix primitives: stability tests, Lyapunov/Riccati solvers, weighted norms.

Matrices are plain ``numpy.ndarray`` objects. Every public function validates
shape and finiteness of its inputs and raises :class:`DimensionError` or
``ValueError`` instead of propagating NaNs.
"""

import numpy as np

from .errors import ConvergenceError, DimensionError, NoSolutionError, NotPositiveDefiniteError

SYM_RTOL = 1e-10
SPD_PIVOT_RTOL = 1e-12
LYAP_ATOL = 1e-14
LYAP_MAX_ITER = 200
DARE_MAX_ITER = 200
DARE_RTOL = 1e-12


def as_matrix(M, name="matrix"):
    M = np.array(M, dtype=float, ndmin=2, copy=True)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def as_square(M, name="matrix"):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def is_symmetric(M, rtol=SYM_RTOL):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    scale = max(np.abs(M).max(initial=0.0), 1.0)
    return bool(np.abs(M - M.T).max(initial=0.0) <= rtol * scale)


def is_spd(M, rtol=SPD_PIVOT_RTOL):
    """Cholesky test with the pivot threshold ``rtol * trace(M)``."""
    M = np.asarray(M, dtype=float)
    if not is_symmetric(M):
        return False
    try:
        L = np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        return False
    tr = np.trace(M)
    return bool(tr > 0 and np.min(np.diag(L)) ** 2 > rtol * tr)


def as_spd(M, name="matrix"):
    M = as_square(M, name)
    if not is_spd(M):
        raise NotPositiveDefiniteError(f"{name} is not symmetric positive definite")
    return 0.5 * (M + M.T)


def spectral_radius(A):
    A = as_square(A, "A")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def is_schur_stable(A, margin=0.0):
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return spectral_radius(A) < 1.0 - margin


def _check_pair(A, Q):
    A = as_square(A, "A")
    Q = as_square(Q, "Q")
    if A.shape != Q.shape:
        raise DimensionError(f"A is {A.shape} but Q is {Q.shape}")
    return A, Q


def _doubling_sum(A, Q, atol, max_iter):
    # Returns sum_k (A^T)^k Q A^k.
    P = Q.copy()
    Ak = A.copy()
    for _ in range(max_iter):
        if np.linalg.norm(Ak, 2) < atol:
            return P
        P = P + Ak.T @ P @ Ak
        Ak = Ak @ Ak
    raise ConvergenceError("Lyapunov doubling did not converge", float(np.linalg.norm(Ak, 2)))


def lyap_residual(A, P, Q):
    """Return ``||A^T P A - P + Q||_2``."""
    return float(np.linalg.norm(A.T @ P @ A - P + Q, 2))


def solve_dlyap_transpose(A, Q, *, atol=LYAP_ATOL, rtol=1e-10, max_iter=LYAP_MAX_ITER, require_spd=True):
    """Solve ``A^T P A - P + Q = 0`` for Schur-stable ``A``.

    Uses the squared-power doubling iteration followed by one refinement
    sweep when the residual is above ``rtol * ||Q||``. ``Q`` only needs to be
    symmetric PSD when ``require_spd`` is False.
    """
    A, Q = _check_pair(A, Q)
    if not is_symmetric(Q):
        raise ValueError("Q must be symmetric")
    if require_spd and not is_spd(Q):
        raise NotPositiveDefiniteError("Q is not symmetric positive definite")
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise NoSolutionError(f"A is not Schur stable (spectral radius {rho:.6g})")
    Q = 0.5 * (Q + Q.T)
    P = _doubling_sum(A, Q, atol, max_iter)
    P = 0.5 * (P + P.T)
    qn = np.linalg.norm(Q, 2)
    for _ in range(3):
        R = A.T @ P @ A - P + Q
        if np.linalg.norm(R, 2) <= rtol * qn:
            break
        E = _doubling_sum(A, 0.5 * (R + R.T), atol, max_iter)
        P = P + 0.5 * (E + E.T)
    return P


def solve_dlyap(A, Q, **kwargs):
    """Solve ``A X A^T - X + Q = 0``, i.e. ``X = sum_k A^k Q (A^k)^T``."""
    A = as_square(A, "A")
    return solve_dlyap_transpose(A.T, Q, **kwargs)


def dare_residual(A, B, Q, R, P):
    BtP = B.T @ P
    G = R + BtP @ B
    rhs = A.T @ P @ A - (A.T @ P @ B) @ np.linalg.solve(G, BtP @ A) + Q
    return float(np.linalg.norm(rhs - P, 2))


def solve_dare(A, B, Q, R, *, rtol=DARE_RTOL, max_iter=DARE_MAX_ITER, residual_rtol=1e-8):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    ``P = A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A + Q`` is solved with the
    structure-preserving doubling algorithm (SDA)::

        A_{k+1} = A_k (I + G_k H_k)^{-1} A_k
        G_{k+1} = G_k + A_k (I + G_k H_k)^{-1} G_k A_k^T
        H_{k+1} = H_k + A_k^T H_k (I + G_k H_k)^{-1} A_k

    starting from ``A_0 = A, G_0 = B R^{-1} B^T, H_0 = Q``; ``H_k`` converges to P.
    """
    A = as_square(A, "A")
    n = A.shape[0]
    B = as_matrix(B, "B")
    if B.shape[0] != n:
        raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
    Q = as_square(Q, "Q")
    R = as_spd(R, "R")
    if Q.shape != (n, n) or R.shape[0] != B.shape[1]:
        raise DimensionError("Q/R dimensions inconsistent with A/B")
    Q = 0.5 * (Q + Q.T)

    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Gk = 0.5 * (Gk + Gk.T)
    Hk = Q.copy()
    eye = np.eye(n)
    for _ in range(max_iter):
        Wk = eye + Gk @ Hk
        WA = np.linalg.solve(Wk, Ak)
        WG = np.linalg.solve(Wk, Gk)
        H_next = Hk + Ak.T @ Hk @ WA
        G_next = Gk + Ak @ WG @ Ak.T
        Ak = Ak @ WA
        H_next = 0.5 * (H_next + H_next.T)
        Gk = 0.5 * (G_next + G_next.T)
        change = np.linalg.norm(H_next - Hk, 2)
        Hk = H_next
        if not np.all(np.isfinite(Hk)):
            raise NoSolutionError("Riccati iteration diverged; (A, B) may not be stabilizable")
        if change <= rtol * max(np.linalg.norm(Hk, 2), 1e-300):
            break
    else:
        raise ConvergenceError("SDA did not converge", dare_residual(A, B, Q, R, Hk))

    res = dare_residual(A, B, Q, R, Hk)
    if res > residual_rtol * max(np.linalg.norm(Hk, 2), 1e-300):
        raise ConvergenceError("DARE residual above tolerance", res)
    K = lqr_gain(A, B, R, Hk)
    if spectral_radius(A + B @ K) >= 1.0:
        raise NoSolutionError("Riccati solution is not stabilizing")
    return Hk


def lqr_gain(A, B, R, P):
    """``K = -(R + B^T P B)^{-1} B^T P A`` so that ``u = K x``."""
    A = as_square(A, "A")
    B = as_matrix(B, "B")
    R = as_square(R, "R")
    P = as_square(P, "P")
    G = R + B.T @ P @ B
    return -np.linalg.solve(G, B.T @ P @ A)


def sqrtm_spd(P):
    w, U = np.linalg.eigh(0.5 * (P + P.T))
    if np.any(w <= 0):
        raise NotPositiveDefiniteError("matrix is not positive definite")
    return (U * np.sqrt(w)) @ U.T, (U / np.sqrt(w)) @ U.T


def sqrtm_psd(P):
    w, U = np.linalg.eigh(0.5 * (P + P.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def _check_weighted(M, P):
    M = as_square(M, "M")
    P = as_square(P, "P")
    if M.shape != P.shape:
        raise DimensionError(f"M is {M.shape} but P is {P.shape}")
    return M, P


def weighted_matrix_norm(M, P):
    """Induced norm ``||P^{1/2} M P^{-1/2}||``, compatible with ``weighted_vector_norm``."""
    M, P = _check_weighted(M, P)
    Ph, Pmh = sqrtm_spd(P)
    return float(np.linalg.norm(Ph @ M @ Pmh, 2))


def literal_pnorm(M, P):
    """``||P^{-1/2} M P^{-1/2}||``: for symmetric M, the best c with ``|v^T M v| <= c v^T P v``."""
    M, P = _check_weighted(M, P)
    _, Pmh = sqrtm_spd(P)
    return float(np.linalg.norm(Pmh @ M @ Pmh, 2))


def weighted_vector_norm(v, P):
    v = np.asarray(v, dtype=float).reshape(-1)
    P = as_square(P, "P")
    if P.shape[0] != v.shape[0]:
        raise DimensionError(f"vector has length {v.shape[0]} but P is {P.shape}")
    return float(np.sqrt(max(v @ P @ v, 0.0)))


def contraction_factor(A, P):
    """Smallest rho with ``A^T P A <= rho P``; equals ``weighted_matrix_norm(A, P)**2``."""
    A, P = _check_weighted(A, P)
    _, Pmh = sqrtm_spd(P)
    S = Pmh @ A.T @ P @ A @ Pmh
    return float(np.max(np.linalg.eigvalsh(0.5 * (S + S.T))))


def block_diag(*blocks):
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out
