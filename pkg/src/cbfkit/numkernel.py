"""Small dense linear algebra: symmetric eigenproblems, Cholesky, LU solves,
and the continuous Lyapunov equation.

Matrices are plain ``numpy`` arrays.  Symmetric inputs are symmetrized on
entry so that only the upper triangle is significant.
"""

from __future__ import annotations

import numpy as np


class NumericalError(ArithmeticError):
    pass


class SingularMatrixError(NumericalError):
    pass


class NoUniqueSolutionError(NumericalError):
    pass


def _as_sym(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    upper = np.triu(A)
    return upper + np.triu(A, 1).T


def eig_sym(A, max_sweeps: int = 100, tol: float = 1e-15):
    """Cyclic Jacobi eigendecomposition.

    Returns ``(w, V)`` with ``w`` ascending and ``A @ V[:, i] == w[i] * V[:, i]``.
    """
    A = _as_sym(A).copy()
    d = A.shape[0]
    if d == 0:
        raise ValueError("empty matrix")
    V = np.eye(d)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(d), V
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) Givens rotation
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise NumericalError("Jacobi iteration did not converge")
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def min_eig(A) -> float:
    return float(eig_sym(A)[0][0])


def cholesky(A, pivot_tol: float = 1e-12):
    """Lower-triangular ``L`` with ``L @ L.T == A``, or ``None`` if ``A`` is not
    positive definite (some pivot below ``pivot_tol * max(1, max|diag|)``)."""
    A = _as_sym(A)
    d = A.shape[0]
    L = np.zeros_like(A)
    floor = pivot_tol * max(1.0, float(np.max(np.abs(np.diag(A)))) if d else 1.0)
    for j in range(d):
        piv = A[j, j] - L[j, :j] @ L[j, :j]
        if not piv > floor:
            return None
        L[j, j] = np.sqrt(piv)
        if j + 1 < d:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_linear(A, b) -> np.ndarray:
    """Solve ``A x = b`` by LU with partial pivoting."""
    A = np.atleast_2d(np.array(A, dtype=float))
    b = np.array(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if b.shape[0] != n:
        raise ValueError(f"right-hand side has length {b.shape[0]}, expected {n}")
    norm = np.max(np.abs(A)) if A.size else 0.0
    if norm == 0.0:
        raise SingularMatrixError("zero matrix")
    M = A.copy()
    x = b.copy()
    for k in range(n):
        p = k + int(np.argmax(np.abs(M[k:, k])))
        if abs(M[p, k]) < 1e-12 * norm:
            raise SingularMatrixError(f"pivot {abs(M[p, k]):.3e} below threshold at column {k}")
        if p != k:
            M[[k, p]] = M[[p, k]]
            x[[k, p]] = x[[p, k]]
        factors = M[k + 1:, k] / M[k, k]
        M[k + 1:, k:] -= np.outer(factors, M[k, k:])
        x[k + 1:] -= np.outer(factors, x[k]).reshape(x[k + 1:].shape)
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - M[k, k + 1:] @ x[k + 1:]) / M[k, k]
    return x


def solve_lyapunov(Fbar, N) -> np.ndarray:
    """Solve ``Fbar^T P + P Fbar + N = 0`` for symmetric ``P``.

    Uses the Kronecker form on the vectorized unknown restricted to symmetric
    matrices (one unknown per upper-triangular entry).
    """
    F = np.atleast_2d(np.asarray(Fbar, dtype=float))
    n = F.shape[0]
    if F.shape != (n, n):
        raise ValueError("Fbar must be square")
    N = _as_sym(N)
    if N.shape != (n, n):
        raise ValueError("N must match Fbar")
    iu = np.triu_indices(n)
    k = len(iu[0])
    # lift: vec(P) = E @ p_upper
    E = np.zeros((n * n, k))
    for col, (i, j) in enumerate(zip(*iu)):
        E[i * n + j, col] = 1.0
        E[j * n + i, col] = 1.0
    I = np.eye(n)
    # row-major vec: vec(F^T P) = (F^T kron I) vec(P); vec(P F) = (I kron F^T) vec(P)
    K = np.kron(F.T, I) + np.kron(I, F.T)
    A = (K @ E)[np.ravel_multi_index(iu, (n, n))]
    rhs = -N[iu]
    try:
        p = solve_linear(A, rhs)
    except SingularMatrixError as exc:
        raise NoUniqueSolutionError(
            "Lyapunov equation has no unique solution (eigenvalues of Fbar pair across the imaginary axis)"
        ) from exc
    P = np.zeros((n, n))
    P[iu] = p
    P = P + np.triu(P, 1).T
    resid = F.T @ P + P @ F + N
    if np.max(np.abs(resid)) > 1e-6 * max(1.0, np.max(np.abs(N))) * max(1.0, np.max(np.abs(P))):
        raise NoUniqueSolutionError("Lyapunov solve is numerically unreliable")
    return P


def is_hurwitz(F) -> bool:
    return bool(np.all(np.linalg.eigvals(np.asarray(F, dtype=float)).real < 0))
