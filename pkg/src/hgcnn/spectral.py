"""
Spectral tools on symmetric matrices: a Jacobi eigensolver, the hypergraph
Fourier transform and polynomial (Chebyshev) filtering of vertex signals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as npcheb


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        P, Q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                P.append(min(a, b))
                Q.append(max(a, b))
        rounds.append((np.array(P, dtype=np.intp), np.array(Q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _fix_signs(V, rel=1e-10):
    # largest-magnitude entry of each column made positive; near-ties go to the first
    mag = np.abs(V)
    top = mag.max(axis=0)
    first = np.argmax(mag >= top * (1.0 - rel), axis=0)
    signs = np.sign(V[first, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def symmetric_eigendecomposition(m, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    Cyclic Jacobi rotations in round-robin order, so each round applies
    ``n // 2`` disjoint rotations at once.  Sweeps stop when the off-diagonal
    Frobenius norm drops below ``tol * ||m||_F``.

    Returns
    -------
    eigenvalues : (n,) ndarray
    eigenvectors : (n, n) ndarray
        Column ``i`` pairs with ``eigenvalues[i]``; the largest-magnitude
        entry of every column is positive.
    """
    A = np.array(m, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    norm = np.linalg.norm(A)
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * max(1.0, norm):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1 or norm == 0.0:
        return np.diag(A).copy(), V

    offdiag = ~np.eye(n, dtype=bool)

    def off(B):
        # summed directly: ||B||^2 - ||diag B||^2 cancels catastrophically
        return np.sqrt(np.sum(B[offdiag] ** 2))

    threshold = tol * norm
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        if off(A) <= threshold:
            break
        for P, Q in rounds:
            apq = A[P, Q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            theta = (A[Q, Q] - A[P, P]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.hypot(t, 1.0)
            s = t * c
            colP, colQ = A[:, P].copy(), A[:, Q].copy()
            A[:, P] = c * colP - s * colQ
            A[:, Q] = s * colP + c * colQ
            rowP, rowQ = A[P, :].copy(), A[Q, :].copy()
            A[P, :] = c[:, None] * rowP - s[:, None] * rowQ
            A[Q, :] = s[:, None] * rowP + c[:, None] * rowQ
            A[P, Q] = 0.0
            A[Q, P] = 0.0
            vP, vQ = V[:, P].copy(), V[:, Q].copy()
            V[:, P] = c * vP - s * vQ
            V[:, Q] = s * vP + c * vQ
    else:
        residual = off(A)
        if residual > threshold:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {residual:.3e})", residual)
    lam = np.diag(A).copy()
    order = np.argsort(lam, kind="stable")
    return lam[order], _fix_signs(V[:, order])


def _eigvecs(L):
    U = getattr(L, "eigenvectors", None)
    if U is None:
        raise ValueError("Laplacian has no eigendecomposition; call with_eigendecomposition()")
    return U


def hgft(L, x):
    """Spectral coefficients ``U^T x`` of a vertex signal."""
    U = _eigvecs(L)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != U.shape[0]:
        raise ValueError(f"signal has {x.shape[0]} rows, Laplacian has {U.shape[0]} vertices")
    return U.T @ x


def inverse_hgft(L, xhat):
    U = _eigvecs(L)
    xhat = np.asarray(xhat, dtype=np.float64)
    if xhat.shape[0] != U.shape[0]:
        raise ValueError(f"coefficients have {xhat.shape[0]} rows, expected {U.shape[0]}")
    return U @ xhat


@dataclass(frozen=True, eq=False)
class SpectralFilter:
    """``g(lam) = sum_k coefficients[k] * T_k(lam)``.

    With ``rescale_spectrum`` the polynomial is evaluated at
    ``2 * lam / lmax - 1`` instead; ``lmax`` defaults to a Gershgorin bound.
    """

    coefficients: np.ndarray
    rescale_spectrum: bool = False
    lmax: float | None = None

    def __post_init__(self):
        theta = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if theta.size < 1:
            raise ValueError("filter order K must be >= 1")
        if not np.all(np.isfinite(theta)):
            raise ValueError("filter coefficients must be finite")
        object.__setattr__(self, "coefficients", theta)

    @property
    def order(self) -> int:
        return self.coefficients.size


def spectrum_upper_bound(L) -> float:
    """Gershgorin bound on the largest eigenvalue (max over batch if stacked)."""
    L = np.asarray(L)
    return float(np.max(np.sum(np.abs(L), axis=-1)))


def _as_matrix(L):
    return np.asarray(getattr(L, "matrix", L), dtype=np.float64)


def chebyshev_basis(L, x, K: int, rescale: bool = False, lmax: float | None = None):
    """``[T_0(L') x, ..., T_{K-1}(L') x]`` by the three-term recurrence.

    ``L'`` is ``L`` itself, or ``2 L / lmax - I`` when ``rescale`` is set.  The
    polynomial matrices are never formed.  ``L`` may be ``(n, n)`` or a stack
    ``(B, n, n)`` matching ``x`` of shape ``(B, n, F)``.
    """
    if K < 1:
        raise ValueError("filter order K must be >= 1")
    L = _as_matrix(L)
    x = np.asarray(x, dtype=np.float64)
    rows = x.shape[0] if x.ndim <= 2 else x.shape[-2]
    if L.shape[-1] != rows:
        raise ValueError(f"signal shape {x.shape} does not match Laplacian {L.shape}")
    if rescale:
        scale = 2.0 / (lmax if lmax is not None else spectrum_upper_bound(L))

        def apply(v):
            return scale * (L @ v) - v
    else:
        def apply(v):
            return L @ v

    terms = [x]
    if K > 1:
        terms.append(apply(x))
    for _ in range(2, K):
        terms.append(2.0 * apply(terms[-1]) - terms[-2])
    return terms


def chebyshev_filter(L, x, f: SpectralFilter):
    """``sum_k theta_k T_k(L) x`` without an eigendecomposition."""
    terms = chebyshev_basis(L, x, f.order, f.rescale_spectrum, f.lmax)
    y = f.coefficients[0] * terms[0]
    for theta_k, t in zip(f.coefficients[1:], terms[1:]):
        y = y + theta_k * t
    return y


def spectral_filter_exact(L, x, f: SpectralFilter):
    """``U g(Lambda) U^T x`` using the eigendecomposition of ``L``."""
    U = _eigvecs(L)
    lam = np.asarray(L.eigenvalues)
    if f.rescale_spectrum:
        lmax = f.lmax if f.lmax is not None else spectrum_upper_bound(L.matrix)
        lam = 2.0 * lam / lmax - 1.0
    g = npcheb.chebval(lam, f.coefficients)
    xhat = hgft(L, x)
    gx = g[:, None] * xhat if xhat.ndim == 2 else g * xhat
    return U @ gx


def dump_eigendecomposition(L, path) -> None:
    """CSV with one row per eigenpair: ``eigenvalue, u_0, ..., u_{n-1}``."""
    U = _eigvecs(L)
    rows = np.column_stack([L.eigenvalues, U.T])
    np.savetxt(path, rows, delimiter=",", fmt="%.17g")
