"""The three transfer-operator estimators in kernelized factor form.

Every estimator is represented as G_hat = S*.W.Z with W = U V^T, where S and Z
are the n^(-1/2)-scaled sampling operators of inputs and outputs. Fitting
produces the (U, V) factors:

  KRR  (ridge):               U = I,  V = (G_X + gamma I)^-1
  PCR  (principal subspace):  V = top-r eigenvectors of G_X,  U = V diag(1/s)
  RRR  (rank-r risk minimum): generalized eigenproblem
                              G_Y G_X u = s^2 (G_X + gamma I) u,
                              normalized u^T G_X (G_X + gamma I) u = 1,
                              V = G_X U

with all Gram matrices carrying the 1/n scaling of `kernels.build_gram`.
Predictions, empirical/test risks and Hilbert-Schmidt norms are evaluated from
the factors alone, identically for the three kinds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .kernels import GramCache, KernelSpec, kernel_matrix, kernel_vector
from .linalg import DEFAULT_RTOL, gep_symdef, psd_sqrt_pinv, sym_eig, trunc_svd

MODEL_FORMAT_VERSION = 1
_KINDS = ("krr", "pcr", "rrr")


@dataclass(frozen=True)
class FittedEstimator:
    kind: str
    kernel: KernelSpec
    X: np.ndarray           # (n, d) training inputs
    Y: np.ndarray           # (n, d) training outputs
    U: np.ndarray           # (n, r)
    V: np.ndarray           # (n, r)
    gamma: float
    rank: int
    sigma_sq: Optional[np.ndarray] = None  # GEP/eigen values, RRR and PCR only

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def _prep_xy(X, Y, gram: GramCache):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape != Y.shape:
        raise ValueError("X and Y must have the same shape")
    if gram.n != X.shape[0]:
        raise ValueError(f"gram has n={gram.n} but X has {X.shape[0]} rows")
    return X, Y


def fit_krr(gram: GramCache, kernel: KernelSpec, X, Y, gamma: float) -> FittedEstimator:
    """Kernel ridge estimator; V is the (symmetrized) inverse of G_X + gamma I."""
    if not gamma > 0:
        raise ValueError("KRR requires gamma > 0")
    X, Y = _prep_xy(X, Y, gram)
    n = gram.n
    G = gram.GX + gamma * np.eye(n)
    try:
        c, low = sla.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"Cholesky of G_X + gamma I failed at gamma={gamma}; increase gamma"
        ) from exc
    V = sla.cho_solve((c, low), np.eye(n))
    V = (V + V.T) / 2.0
    return FittedEstimator(kind="krr", kernel=kernel, X=X, Y=Y,
                           U=np.eye(n), V=V, gamma=float(gamma), rank=n)


def fit_pcr(gram: GramCache, kernel: KernelSpec, X, Y, r: int) -> FittedEstimator:
    """Principal-subspace estimator (kernel DMD): least squares on the top-r modes of G_X."""
    X, Y = _prep_xy(X, Y, gram)
    n = gram.n
    if not 1 <= r <= n:
        raise ValueError(f"rank r={r} out of range [1, {n}]")
    eig = sym_eig(gram.GX)
    vals = np.clip(eig.values, 0.0, None)
    num_rank = int(np.count_nonzero(vals > DEFAULT_RTOL * vals[0])) if vals.size else 0
    if r > num_rank:
        raise ValueError(f"rank r={r} exceeds numerical rank {num_rank} of G_X")
    V = eig.vectors[:, :r]
    sig = vals[:r]
    U = V / sig
    return FittedEstimator(kind="pcr", kernel=kernel, X=X, Y=Y, U=U, V=V,
                           gamma=0.0, rank=int(r), sigma_sq=sig)


def fit_rrr(gram: GramCache, kernel: KernelSpec, X, Y, r: int, gamma: float) -> FittedEstimator:
    """Reduced-rank estimator: the rank-r minimizer of the regularized empirical risk.

    The generalized eigenproblem G_Y G_X u = s^2 (G_X + gamma I) u is solved
    through its symmetric-definite reformulation
    (G_X^1/2 G_Y G_X^1/2) w = s^2 (G_X + gamma I) w, u = G_X^(-1/2) w, which is
    valid because G_X and G_X + gamma I commute; rank-deficient G_X passes
    through the pseudo-inverse square root. Columns are renormalized post hoc
    to u^T G_X (G_X + gamma I) u = 1.
    """
    if not gamma > 0:
        raise ValueError("RRR requires gamma > 0")
    X, Y = _prep_xy(X, Y, gram)
    n = gram.n
    if not 1 <= r <= n:
        raise ValueError(f"rank r={r} out of range [1, {n}]")
    sqrt, inv_sqrt, _ = psd_sqrt_pinv(gram.GX)
    A = sqrt @ gram.GY @ sqrt
    B = gram.GX + gamma * np.eye(n)
    pairs = gep_symdef((A + A.T) / 2.0, B, r)
    sig = pairs.values
    if sig.size < r or sig[0] <= 0 or sig[r - 1] <= DEFAULT_RTOL * sig[0]:
        raise np.linalg.LinAlgError(
            f"effective rank too low: only {int(np.sum(sig > DEFAULT_RTOL * max(sig[0], 0)))} "
            f"positive squared singular values for requested rank {r}"
        )
    U = inv_sqrt @ pairs.vectors
    Ggam_U = gram.GX @ U + gamma * U
    norms = np.einsum("ij,ij->j", U, gram.GX @ Ggam_U)
    if np.any(norms <= 0):
        raise np.linalg.LinAlgError("degenerate eigenvector normalization in RRR fit")
    U = U / np.sqrt(norms)
    V = gram.GX @ U
    return FittedEstimator(kind="rrr", kernel=kernel, X=X, Y=Y, U=U, V=V,
                           gamma=float(gamma), rank=int(r), sigma_sq=sig)


def fit_rrr_featurespace(PhiX: np.ndarray, PhiY: np.ndarray, r: int, gamma: float) -> np.ndarray:
    """Reduced-rank regression with an explicit feature map: the D x D operator.

    Returns B minimizing (1/n)||PhiY - PhiX B||_F^2 + gamma ||B||_F^2 over
    rank(B) <= r, i.e. B = C_gamma^(-1/2) [[C_gamma^(-1/2) C_xy]]_r. This is
    the brute-force dual of `fit_rrr` for finite-dimensional kernels.
    """
    PhiX = np.atleast_2d(np.asarray(PhiX, dtype=np.float64))
    PhiY = np.atleast_2d(np.asarray(PhiY, dtype=np.float64))
    if PhiX.shape != PhiY.shape:
        raise ValueError("PhiX and PhiY must have the same shape")
    n, D = PhiX.shape
    if D > 1000:
        raise ValueError(f"explicit-feature path is for small D (got {D} > 1000)")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not 1 <= r <= D:
        raise ValueError(f"rank r={r} out of range [1, {D}]")
    Cx = PhiX.T @ PhiX / n
    Cxy = PhiX.T @ PhiY / n
    eig = sym_eig(Cx + gamma * np.eye(D))
    inv_sqrt = (eig.vectors / np.sqrt(eig.values)) @ eig.vectors.T
    T = inv_sqrt @ Cxy
    Ur, s, Vt = trunc_svd(T, r)
    return inv_sqrt @ (Ur * s) @ Vt


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def as_observable(values, n: int) -> np.ndarray:
    """Validate f(y_i) sample values: (n,) or (n, m) -> (n, m) float array."""
    F = np.asarray(values, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2 or F.shape[0] != n:
        raise ValueError(f"observable must have {n} rows, got shape {F.shape}")
    return F


def predict_observable(est: FittedEstimator, obs_values, x) -> np.ndarray:
    """One-step-ahead conditional expectation of the observable at state x.

    Implements (1/n) kappa_x^T U (V^T F) with kappa_x[i] = k(x_i, x) and
    F[i] = f(y_i); identical formula for all estimator kinds.
    """
    F = as_observable(obs_values, est.n)
    kappa = kernel_vector(est.kernel, est.X, x)
    return (kappa @ est.U) @ (est.V.T @ F) / est.n


def predict_state(est: FittedEstimator, x) -> np.ndarray:
    """Expected next state: the prediction of the identity observable."""
    return predict_observable(est, est.Y, x)


def empirical_risk(est: FittedEstimator, gram: GramCache) -> float:
    """Training risk (1/n) sum_i ||phi(y_i) - G_hat* phi(x_i)||^2, in closed form.

    Kind-dispatched: KRR uses gamma^2 tr(G_gamma^-2 G_Y); PCR uses
    tr((I - G_X U V^T) G_Y); RRR carries the extra -gamma G_X (U V^T)^2 term
    of the regularized minimizer.
    """
    if gram.n != est.n:
        raise ValueError("gram does not match the estimator's training set")
    GX, GY = gram.GX, gram.GY
    if est.kind == "krr":
        W2 = est.V @ est.V
        return float(est.gamma**2 * np.sum(W2 * GY))
    GXU = GX @ est.U
    GYV = GY @ est.V
    risk = float(np.trace(GY)) - float(np.sum(GXU * GYV))
    if est.kind == "rrr":
        M1 = est.V.T @ (GY @ GXU)
        M2 = est.V.T @ est.U
        risk -= est.gamma * float(np.sum(M1 * M2.T))
    return risk


def regularized_empirical_risk(est: FittedEstimator, gram: GramCache) -> float:
    """Empirical risk plus gamma times the squared Hilbert-Schmidt norm."""
    return empirical_risk(est, gram) + est.gamma * hs_norm(est, gram) ** 2


def test_risk(est: FittedEstimator, X_test, Y_test, gram: GramCache = None) -> float:
    """Out-of-sample risk (1/m) sum_j ||phi(y'_j) - G_hat* phi(x'_j)||^2.

    Expanded through the kernel trick:
      k(y', y') - (2/n) kappa_x'^T U V^T kappa^Y_y'
      + (1/n^2) kappa_x'^T U [V^T K(Y,Y) V] U^T kappa_x'
    with kappa^Y_y[i] = k(y_i, y). Passing the training `gram` avoids
    re-evaluating K(Y, Y).
    """
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    Y_test = np.atleast_2d(np.asarray(Y_test, dtype=np.float64))
    if X_test.shape[0] == 0:
        raise ValueError("test set is empty")
    if X_test.shape[1] != est.dim or Y_test.shape != X_test.shape:
        raise ValueError("test pairs must match the training dimension")
    KxT = kernel_matrix(est.kernel, est.X, X_test)      # (n, m)
    KyT = kernel_matrix(est.kernel, est.Y, Y_test)      # (n, m)
    kyy = _kernel_diag(est.kernel, Y_test)
    if gram is not None:
        if gram.n != est.n:
            raise ValueError("gram does not match the estimator's training set")
        KYY = gram.GY * est.n
    else:
        KYY = kernel_matrix(est.kernel, est.Y, est.Y)
    A = est.U.T @ KxT                                   # (r, m)
    Bm = est.V.T @ KyT                                  # (r, m)
    S = est.V.T @ KYY @ est.V                           # (r, r)
    n = est.n
    vals = kyy - (2.0 / n) * np.einsum("rj,rj->j", A, Bm) \
        + np.einsum("rj,rs,sj->j", A, S, A) / n**2
    return float(np.mean(vals))


def _kernel_diag(spec: KernelSpec, Z: np.ndarray) -> np.ndarray:
    if spec.family == "gaussian":
        return np.ones(Z.shape[0])
    sq = np.einsum("ij,ij->i", Z, Z) / spec.scale
    if spec.family == "linear":
        return sq
    return (sq + spec.offset) ** spec.degree


def hs_norm(est: FittedEstimator, gram: GramCache = None) -> float:
    """Hilbert-Schmidt norm sqrt(tr((U^T G_X U)(V^T G_Y V))) of the fitted operator."""
    if gram is not None:
        GX, GY = gram.GX, gram.GY
    else:
        GX = kernel_matrix(est.kernel, est.X, est.X) / est.n
        GY = kernel_matrix(est.kernel, est.Y, est.Y) / est.n
    P = est.U.T @ GX @ est.U
    Q = est.V.T @ GY @ est.V
    return float(np.sqrt(max(0.0, np.sum(P * Q.T))))


# ---------------------------------------------------------------------------
# model (de)serialization
# ---------------------------------------------------------------------------

def model_to_dict(est: FittedEstimator) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "kind": est.kind,
        "kernel": est.kernel.to_dict(),
        "gamma": est.gamma,
        "rank": est.rank,
        "X": est.X.tolist(),
        "Y": est.Y.tolist(),
        "U": est.U.tolist(),
        "V": est.V.tolist(),
        "sigma_sq": None if est.sigma_sq is None else np.asarray(est.sigma_sq).tolist(),
    }


def model_from_dict(doc: dict) -> FittedEstimator:
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    kind = doc["kind"]
    if kind not in _KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    sig = doc.get("sigma_sq")
    return FittedEstimator(
        kind=kind,
        kernel=KernelSpec.from_dict(doc["kernel"]),
        X=np.asarray(doc["X"], dtype=np.float64),
        Y=np.asarray(doc["Y"], dtype=np.float64),
        U=np.asarray(doc["U"], dtype=np.float64),
        V=np.asarray(doc["V"], dtype=np.float64),
        gamma=float(doc["gamma"]),
        rank=int(doc["rank"]),
        sigma_sq=None if sig is None else np.asarray(sig, dtype=np.float64),
    )


def save_model(est: FittedEstimator, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(est), fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> FittedEstimator:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
