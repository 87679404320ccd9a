"""Spectral decomposition of a fitted estimator, eigenfunctions, modes, forecasts.

For G_hat = S*.U V^T.Z the whole decomposition reduces to the r x r matrix
A = V^T M U with M the (scaled) output/input cross-Gram: if A v_i = lambda_i v_i
and u_j^* A = lambda_j u_j^* with u_j^* v_i = delta_ij, then

    psi_i  = S* (U v_i)            eigenfunction,  psi_i(x) = (U v_i)^T kappa_x / sqrt(n)
    xi_i   = Z* (V u_i) / conj(lambda_i)
    gamma_i^f = u_i^* V^T f_n / (lambda_i sqrt(n)) = xi-coefficients^H f_n / sqrt(n)

and the action of the estimator expands as G_hat^t f = sum_i lambda_i^t
gamma_i^f psi_i, which at t = 1 must agree with direct prediction; that
identity is the module's primary correctness oracle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .estimators import FittedEstimator, as_observable, predict_observable
from .kernels import GramCache, KernelSpec, kernel_matrix, kernel_vector
from .linalg import eig_small_nonsym

_DROP_TOL = 1e-10


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray   # complex, modulus descending
    psi_coeffs: np.ndarray    # (n, r) complex: column i = U v_i
    xi_coeffs: np.ndarray     # (n, r) complex: column i = V u_i / conj(lambda_i)
    n: int
    r: int
    n_dropped: int            # near-zero eigenvalues discarded
    kind: str
    kernel: KernelSpec
    X: np.ndarray             # training inputs (for eigenfunction evaluation)


@dataclass(frozen=True)
class ModeSet:
    gammas: np.ndarray        # (r, m) complex: dynamic mode of each observable component


def _eig_order(values: np.ndarray) -> np.ndarray:
    # modulus descending, ties by real part descending, then original index
    return np.lexsort((np.arange(values.size), -values.real, -np.abs(values)))


def decompose(est: FittedEstimator, gram: GramCache = None) -> SpectralDecomposition:
    """Spectral decomposition of the fitted operator via the r x r matrix V^T M U.

    Near-zero eigenvalues (|lambda| < 1e-10 max|lambda|) are dropped with a
    warning since the xi normalization divides by lambda. The eigenvector
    phase is fixed by rotating each pair so the largest-modulus psi
    coefficient is real positive, making the output deterministic.
    """
    if gram is not None:
        if gram.n != est.n:
            raise ValueError("gram does not match the estimator's training set")
        M = gram.GYX
    else:
        M = kernel_matrix(est.kernel, est.Y, est.X) / est.n
    A = est.V.T @ (M @ est.U)
    dec = eig_small_nonsym(A)

    mags = np.abs(dec.values)
    keep = mags > _DROP_TOL * mags.max()
    n_dropped = int(np.count_nonzero(~keep))
    if n_dropped == dec.values.size:
        raise np.linalg.LinAlgError("all eigenvalues are numerically zero")
    if n_dropped:
        warnings.warn(f"dropping {n_dropped} near-zero eigenvalues", stacklevel=2)
    w = dec.values[keep]
    vr = dec.right[:, keep]
    vl = dec.left[:, keep]

    order = _eig_order(w)
    w, vr, vl = w[order], vr[:, order], vl[:, order]

    psi = est.U.astype(complex) @ vr
    # phase gauge: largest-modulus psi coefficient real positive
    for i in range(w.size):
        j = int(np.argmax(np.abs(psi[:, i])))
        a = psi[j, i]
        if np.abs(a) > 0:
            phase = a / np.abs(a)
            psi[:, i] /= phase
            vl[:, i] /= phase
    xi = (est.V.astype(complex) @ vl) / np.conj(w)[None, :]
    return SpectralDecomposition(
        eigenvalues=w, psi_coeffs=psi, xi_coeffs=xi, n=est.n, r=int(w.size),
        n_dropped=n_dropped, kind=est.kind, kernel=est.kernel, X=est.X,
    )


def eval_eigenfunctions(dec: SpectralDecomposition, x) -> np.ndarray:
    """psi_i(x) for all retained i."""
    kappa = kernel_vector(dec.kernel, dec.X, x)
    return (kappa @ dec.psi_coeffs) / math.sqrt(dec.n)


def eval_eigenfunctions_grid(dec: SpectralDecomposition, points: np.ndarray) -> np.ndarray:
    """psi values on many points at once; returns (len(points), r)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    K = kernel_matrix(dec.kernel, dec.X, pts)           # (n, m)
    return (K.T @ dec.psi_coeffs) / math.sqrt(dec.n)


def modes(dec: SpectralDecomposition, obs_values) -> ModeSet:
    """Dynamic modes gamma_i^f of an observable sampled at the training outputs."""
    F = as_observable(obs_values, dec.n)
    gammas = dec.xi_coeffs.conj().T @ F / math.sqrt(dec.n)
    return ModeSet(gammas=gammas)


def forecast(dec: SpectralDecomposition, obs_values, x, t: int):
    """Modal forecast Re[sum_i lambda_i^t gamma_i^f psi_i(x)] at horizon t.

    Returns (real part, imag residual); the residual is the maximum absolute
    imaginary component, which should vanish for real observables since
    complex eigenvalues occur in conjugate pairs.
    """
    if t < 1 or int(t) != t:
        raise ValueError("forecast horizon t must be a positive integer")
    G = modes(dec, obs_values).gammas
    psi_x = eval_eigenfunctions(dec, x)
    out = (dec.eigenvalues**int(t) * psi_x) @ G
    return out.real, float(np.max(np.abs(out.imag))) if out.size else 0.0


def forecast_direct(est: FittedEstimator, obs_values, x) -> np.ndarray:
    """One-step reference for the t=1 modal identity."""
    return predict_observable(est, obs_values, x)
