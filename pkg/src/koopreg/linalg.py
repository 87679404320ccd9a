"""Dense solvers backing the estimators.

Thin, contract-checked wrappers around LAPACK via numpy/scipy: symmetric
eigendecomposition, PSD square root / pseudo-inverse, the symmetric-definite
generalized eigenproblem, small nonsymmetric eigendecomposition with
biorthonormalized left/right vectors, and truncated SVD. Everything is dense
and double precision; eigenvalues are returned descending with stable ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

DEFAULT_RTOL = 1e-12
_DEFECT_COND = 1e10


class NotSPDError(np.linalg.LinAlgError):
    """The B matrix of a generalized eigenproblem failed its Cholesky."""


class DefectiveSpectrumError(np.linalg.LinAlgError):
    """Left/right eigenvector pairing is too ill-conditioned to biorthonormalize."""


@dataclass(frozen=True)
class EigPairList:
    values: np.ndarray   # real, descending
    vectors: np.ndarray  # columns aligned to values


@dataclass(frozen=True)
class ComplexEig:
    values: np.ndarray  # complex
    right: np.ndarray   # columns v_i with A v_i = w_i v_i
    left: np.ndarray    # columns u_i with u_i^* A = w_i u_i^*, u_j^* v_i = delta_ij


def _require_finite(A, name="matrix"):
    if not np.isfinite(A).all():
        raise ValueError(f"{name} has non-finite entries")


def sym_eig(S: np.ndarray) -> EigPairList:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending."""
    S = np.asarray(S, dtype=np.float64)
    _require_finite(S, "sym_eig input")
    asym = np.max(np.abs(S - S.T)) if S.size else 0.0
    if asym > 1e-10 * max(1.0, np.max(np.abs(S))):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    vals, vecs = np.linalg.eigh((S + S.T) / 2.0)
    order = np.argsort(-vals, kind="stable")
    return EigPairList(values=vals[order], vectors=vecs[:, order])


def psd_sqrt_pinv(S: np.ndarray, rtol: float = DEFAULT_RTOL):
    """Square root and pseudo-inverse square root of a PSD matrix.

    Eigenvalues below rtol * lambda_max are treated as zero: they contribute
    nothing to inv_sqrt and do not count toward the returned rank. Roundoff
    negativity is clamped rather than raised.
    """
    eig = sym_eig(S)
    vals = np.clip(eig.values, 0.0, None)
    lmax = vals[0] if vals.size else 0.0
    thr = rtol * lmax
    keep = vals > thr
    rank = int(np.count_nonzero(keep))
    V = eig.vectors
    sq = np.sqrt(vals)
    inv = np.where(keep, 1.0 / np.where(keep, sq, 1.0), 0.0)
    sqrt = (V * sq) @ V.T
    inv_sqrt = (V * inv) @ V.T
    return (sqrt + sqrt.T) / 2.0, (inv_sqrt + inv_sqrt.T) / 2.0, rank


def gep_symdef(A: np.ndarray, B: np.ndarray, r: int) -> EigPairList:
    """Top-r eigenpairs of A u = lambda B u for symmetric A and SPD B.

    Solved by Cholesky whitening of B (LAPACK sygvd); returned vectors are
    B-orthonormal (u_i^T B u_j = delta_ij), eigenvalues descending.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    _require_finite(A, "gep A")
    _require_finite(B, "gep B")
    n = A.shape[0]
    if not 1 <= r <= n:
        raise ValueError(f"rank r={r} out of range [1, {n}]")
    try:
        vals, vecs = sla.eigh((A + A.T) / 2.0, (B + B.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(
            "B is not positive definite; increase the regularization gamma"
        ) from exc
    order = np.argsort(-vals, kind="stable")[:r]
    return EigPairList(values=vals[order], vectors=vecs[:, order])


def eig_small_nonsym(A: np.ndarray) -> ComplexEig:
    """Eigendecomposition of a small real matrix with biorthonormal left/right pairs.

    The raw LAPACK left/right vectors are re-paired by solving the full
    left-right Gram (a diagonal rescaling when eigenvalues are simple) so that
    u_j^* v_i = delta_ij, which the spectral-decomposition formulas require.
    """
    A = np.asarray(A, dtype=np.float64)
    _require_finite(A, "eig input")
    w, vl, vr = sla.eig(A, left=True, right=True)
    vl = vl.astype(np.complex128)
    vr = vr.astype(np.complex128)
    G = vl.conj().T @ vr
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > _DEFECT_COND:
        raise DefectiveSpectrumError("defective spectrum; lower rank or change gamma")
    left = vl @ np.linalg.inv(G).conj().T
    scale = np.max(np.abs(A)) if A.size else 0.0
    resid = np.max(np.abs(A @ vr - vr * w)) if A.size else 0.0
    if resid > 1e-8 * max(scale, 1e-300):
        raise np.linalg.LinAlgError(f"eigen residual {resid:.3e} exceeds tolerance")
    return ComplexEig(values=w, right=vr, left=left)


def trunc_svd(A: np.ndarray, r: int):
    """Rank-r truncated SVD (U, s, Vt); the Frobenius-best rank-r approximation."""
    A = np.asarray(A, dtype=np.float64)
    if not 1 <= r <= min(A.shape):
        raise ValueError(f"rank r={r} out of range [1, {min(A.shape)}]")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return U[:, :r], s[:r], Vt[:r, :]
