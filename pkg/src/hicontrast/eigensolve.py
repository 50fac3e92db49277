"""Smallest eigenpairs of sparse Hermitian pencils ``A u = E B u``.

The sparse path is a restarted block Krylov method on the shift-inverted
operator ``(A - sigma B)^{-1} B``, with Rayleigh-Ritz on the original pencil.
A block (rather than a single start vector) is what lets exactly degenerate
clusters, common on symmetric cells, come out with their full multiplicity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class EigensolverError(RuntimeError):
    pass


class ConvergenceError(EigensolverError):
    def __init__(self, message: str, eigenvalues: np.ndarray, residuals: np.ndarray):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.residuals = residuals


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, B-orthonormal
    residuals: np.ndarray  # backward error of the diagonally equilibrated pencil
    iterations: int
    solves: int


def _hermitian_defect(M) -> float:
    diff = M - M.conj().T
    scale = abs(M).max() if M.nnz else 1.0
    return (abs(diff).max() / scale) if diff.nnz else 0.0


def _b_orthonormalize(W: np.ndarray, BW: np.ndarray, drop: float = 1e-10):
    """SVQB: returns a B-orthonormal basis of ``span(W)`` together with ``B`` times it."""
    G = W.conj().T @ BW
    G = 0.5 * (G + G.conj().T)
    d = np.real(np.diag(G))
    if np.any(d <= 0):
        raise EigensolverError("mass matrix is not positive definite")
    D = 1.0 / np.sqrt(d)
    s, U = la.eigh(D[:, None] * G * D[None, :])
    if s[0] < -1e-8 * s[-1]:
        raise EigensolverError("mass matrix is not positive definite")
    keep = s > drop * s[-1]
    T = (D[:, None] * U[:, keep]) / np.sqrt(s[keep])
    return W @ T, BW @ T


def _project_out(W, V, BV):
    # two passes of classical Gram-Schmidt in the B inner product
    for _ in range(2):
        W = W - V @ (BV.conj().T @ W)
    return W


def smallest_eigenpairs(
    A,
    B,
    k: int,
    tol: float = 1e-12,
    *,
    sigma: float = -1.0,
    block: Optional[int] = None,
    steps: int = 3,
    max_restarts: Optional[int] = None,
    seed: int = 0,
) -> EigenResult:
    """The ``k`` smallest eigenpairs of the Hermitian pencil ``(A, B)``.

    ``sigma`` must lie strictly below the spectrum so that ``A - sigma B`` is
    positive definite; the default suits positive semidefinite ``A``.
    Convergence is declared when every requested pair has relative backward
    error below ``tol``, measured on the pencil ``(DAD, DBD)`` with
    ``D = diag(B)^{-1/2}``.  Without this equilibration a lumped mass whose
    entries span many decades (conformal weights at large contrast) puts a
    rounding floor well above ``1e-12`` under the unscaled residual.
    """
    A = sp.csc_matrix(A)
    B = sp.csc_matrix(B)
    n = A.shape[0]
    if A.shape != (n, n) or B.shape != (n, n):
        raise EigensolverError(f"A and B must be square of equal size, got {A.shape} and {B.shape}")
    if not 1 <= k <= n - 1:
        raise EigensolverError(f"k must satisfy 1 <= k <= dim - 1 = {n - 1}, got {k}")
    if _hermitian_defect(A) > 1e-12 or _hermitian_defect(B) > 1e-12:
        raise EigensolverError("A and B must be Hermitian")
    diag = np.real(B.diagonal())
    if np.any(diag <= 0):
        raise EigensolverError("mass matrix is not positive definite")
    D = sp.diags(1.0 / np.sqrt(diag))
    A = sp.csc_matrix(D @ A @ D)
    B = sp.csc_matrix(D @ B @ D)

    is_complex = np.iscomplexobj(A.data) or np.iscomplexobj(B.data)
    dtype = complex if is_complex else float
    try:
        lu = spla.splu((A - sigma * B).tocsc().astype(dtype))
    except RuntimeError as exc:
        raise EigensolverError(f"shift sigma={sigma} is not below the spectrum: {exc}") from None

    b = min(block or (k + 3), n)
    max_restarts = max_restarts or 300 * k
    norm_a = spla.norm(A, 1)
    norm_b = spla.norm(B, 1)

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, b))
    if is_complex:
        X = X + 1j * rng.standard_normal((n, b))
    X, BX = _b_orthonormalize(X, B @ X)

    solves = 0
    best = None
    for it in range(1, max_restarts + 1):
        V, BV = [X], [BX]
        W = X
        for _ in range(steps):
            W = lu.solve(np.asarray(B @ W, dtype=dtype))
            solves += W.shape[1]
            W = _project_out(W, np.hstack(V), np.hstack(BV))
            W, BW = _b_orthonormalize(W, B @ W)
            if W.shape[1] == 0:
                break
            V.append(W)
            BV.append(BW)
        # one more SVQB over the whole basis: blockwise orthogonality degrades
        # when the mass matrix is badly scaled
        V = np.hstack(V)
        V, BV = _b_orthonormalize(V, B @ V)
        AV = A @ V
        H = V.conj().T @ AV
        H = 0.5 * (H + H.conj().T)
        theta, Y = la.eigh(H)
        keep = min(b, len(theta))
        Y = Y[:, :keep]
        X = V @ Y
        BX = BV @ Y
        vals = theta[:keep]

        AX = AV @ Y
        R = AX[:, :k] - BX[:, :k] * vals[:k]
        xnorm = np.linalg.norm(X[:, :k], axis=0)
        res = np.linalg.norm(R, axis=0) / ((norm_a + np.abs(vals[:k]) * norm_b) * xnorm)
        if best is None or res.max() < best[1].max():
            best = (vals[:k].copy(), res.copy())
        if np.all(res <= tol):
            return EigenResult(vals[:k].copy(), D @ X[:, :k], res, it, solves)
        if V.shape[1] >= n:
            # the basis spans the whole space: Ritz pairs are exact up to rounding
            return EigenResult(vals[:k].copy(), D @ X[:, :k], res, it, solves)
    raise ConvergenceError(
        f"no convergence to tol={tol:g} after {max_restarts} restarts (best residual {best[1].max():.3g})",
        best[0], best[1])


def dense_oracle(A, B, cap: int = 2000) -> np.ndarray:
    """Full ascending spectrum via Cholesky reduction of the mass matrix."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    n = A.shape[0]
    if n > cap:
        raise EigensolverError(f"dense oracle capped at dim {cap}, got {n}")
    try:
        L = la.cholesky(B, lower=True)
    except la.LinAlgError:
        raise EigensolverError("mass matrix is not positive definite") from None
    C = la.solve_triangular(L, A, lower=True)
    C = la.solve_triangular(L, C.conj().T, lower=True).conj().T
    C = 0.5 * (C + C.conj().T)
    return la.eigvalsh(C)
