"""Positive-definite kernels and the 1/n-scaled Gram matrices estimators consume.

Scaling convention used throughout the package: the sampling of a function at
the n training inputs carries a n^(-1/2) factor, so every Gram matrix entry is
k(., .)/n. Evaluation vectors k(x_i, x) are kept unscaled; the 1/n reappears
explicitly in the prediction formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np

from ._accel import njit, numba_enabled

_FAMILIES = ("gaussian", "linear", "polynomial")


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus its hyperparameters.

    gaussian:   k(x, y) = exp(-||x-y||^2 / (2 lengthscale^2)), k(x, x) = 1
    linear:     k(x, y) = <x, y> / scale
    polynomial: k(x, y) = (<x, y> / scale + offset)^degree
    """

    family: str
    lengthscale: Optional[float] = None
    scale: Optional[float] = None
    degree: Optional[int] = None
    offset: Optional[float] = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {_FAMILIES}")
        if self.family == "gaussian":
            if self.lengthscale is None or not self.lengthscale > 0:
                raise ValueError("gaussian kernel requires lengthscale > 0")
        if self.family in ("linear", "polynomial"):
            if self.scale is None or not self.scale > 0:
                raise ValueError(f"{self.family} kernel requires scale > 0")
        if self.family == "polynomial":
            if self.degree is None or int(self.degree) < 1 or int(self.degree) != self.degree:
                raise ValueError("polynomial kernel requires integer degree >= 1")
            if self.offset is None or self.offset < 0:
                raise ValueError("polynomial kernel requires offset >= 0")

    def to_dict(self) -> dict:
        if self.family == "gaussian":
            return {"family": "gaussian", "lengthscale": float(self.lengthscale)}
        if self.family == "linear":
            return {"family": "linear", "scale": float(self.scale)}
        return {
            "family": "polynomial",
            "degree": int(self.degree),
            "offset": float(self.offset),
            "scale": float(self.scale),
        }

    @staticmethod
    def from_dict(d: dict) -> "KernelSpec":
        family = d.get("family")
        if family == "gaussian":
            return gaussian(d["lengthscale"])
        if family == "linear":
            return linear(d.get("scale", 1.0))
        if family == "polynomial":
            return polynomial(d["degree"], d.get("offset", 1.0), d.get("scale", 1.0))
        raise ValueError(f"unknown kernel family in {d!r}")


def gaussian(lengthscale: float) -> KernelSpec:
    return KernelSpec("gaussian", lengthscale=float(lengthscale))


def linear(scale: float = 1.0) -> KernelSpec:
    return KernelSpec("linear", scale=float(scale))


def polynomial(degree: int, offset: float = 1.0, scale: float = 1.0) -> KernelSpec:
    return KernelSpec("polynomial", degree=int(degree), offset=float(offset), scale=float(scale))


@dataclass(frozen=True)
class GramCache:
    """The three 1/n-scaled Gram matrices of a training pair set.

    GX[i, j] = k(x_i, x_j)/n and GY[i, j] = k(y_i, y_j)/n (exactly symmetric);
    GYX[i, j] = k(y_i, x_j)/n row-indexes the outputs. Arrays are marked
    read-only, so a cache can be shared freely across threads.
    """

    GX: np.ndarray
    GY: np.ndarray
    GYX: np.ndarray
    n: int


# ---------------------------------------------------------------------------
# pairwise kernel evaluation: numba kernels + numpy fallbacks
# ---------------------------------------------------------------------------

@njit(cache=True)
def _gauss_matrix_nb(X, Z, inv_two_ell2):
    n, d = X.shape
    m = Z.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                diff = X[i, k] - Z[j, k]
                s += diff * diff
            out[i, j] = math.exp(-s * inv_two_ell2)
    return out


@njit(cache=True)
def _dot_matrix_nb(X, Z, inv_scale):
    n, d = X.shape
    m = Z.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                s += X[i, k] * Z[j, k]
            out[i, j] = s * inv_scale
    return out


def _gauss_matrix_np(X, Z, inv_two_ell2):
    # Chunked direct differences: O(block * m * d) memory, and the same
    # per-pair summation order as the compiled loop for small d.
    n = X.shape[0]
    out = np.empty((n, Z.shape[0]))
    block = max(1, int(4e6 // max(1, Z.shape[0] * X.shape[1])))
    for a in range(0, n, block):
        b = min(n, a + block)
        d2 = ((X[a:b, None, :] - Z[None, :, :]) ** 2).sum(axis=-1)
        np.exp(-d2 * inv_two_ell2, out=out[a:b])
    return out


def _dot_matrix_np(X, Z, inv_scale):
    return (X @ Z.T) * inv_scale


def kernel_matrix(spec: KernelSpec, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Unscaled matrix of kernel values k(X[i], Z[j])."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    Z = np.ascontiguousarray(np.atleast_2d(np.asarray(Z, dtype=np.float64)))
    if X.shape[1] != Z.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    use_nb = numba_enabled()
    if spec.family == "gaussian":
        c = 0.5 / spec.lengthscale**2
        return _gauss_matrix_nb(X, Z, c) if use_nb else _gauss_matrix_np(X, Z, c)
    dots = _dot_matrix_nb(X, Z, 1.0 / spec.scale) if use_nb else _dot_matrix_np(X, Z, 1.0 / spec.scale)
    if spec.family == "linear":
        return dots
    return (dots + spec.offset) ** spec.degree


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Single kernel value k(x, y)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.family == "gaussian":
        d2 = float(np.sum((x - y) ** 2))
        return math.exp(-d2 / (2.0 * spec.lengthscale**2))
    dot = float(np.dot(x, y)) / spec.scale
    if spec.family == "linear":
        return dot
    return (dot + spec.offset) ** spec.degree


def kernel_vector(spec: KernelSpec, X: np.ndarray, x) -> np.ndarray:
    """Evaluation vector (k(x_i, x))_i against the rows of X, unscaled."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1:
        raise ValueError("x must be a single point")
    return kernel_matrix(spec, X, x[None, :])[:, 0]


def _check_finite(K: np.ndarray, name: str, rows, cols):
    if np.isfinite(K).all():
        return
    i, j = np.argwhere(~np.isfinite(K))[0]
    raise FloatingPointError(
        f"non-finite kernel value in {name} at pair ({rows}[{i}], {cols}[{j}])"
    )


def build_gram(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> GramCache:
    """Assemble the scaled Gram matrices for training pairs (x_i, y_i)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape != Y.shape:
        raise ValueError(f"X and Y must have the same shape, got {X.shape} vs {Y.shape}")
    n = X.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 training pairs, got {n}")
    KX = kernel_matrix(spec, X, X)
    KY = kernel_matrix(spec, Y, Y)
    KYX = kernel_matrix(spec, Y, X)
    _check_finite(KX, "k(X, X)", "x", "x")
    _check_finite(KY, "k(Y, Y)", "y", "y")
    _check_finite(KYX, "k(Y, X)", "y", "x")
    GX = (KX + KX.T) / (2.0 * n)
    GY = (KY + KY.T) / (2.0 * n)
    GYX = KYX / n
    for a in (GX, GY, GYX):
        a.setflags(write=False)
    return GramCache(GX=GX, GY=GY, GYX=GYX, n=n)


def build_gram_trajectory(spec: KernelSpec, states: np.ndarray) -> GramCache:
    """Gram cache for the pairs (states[i], states[i+1]) of one trajectory.

    Equivalent to ``build_gram(spec, states[:-1], states[1:])`` but evaluates
    the kernel once on the full state set and slices the pair blocks out.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] < 3:
        raise ValueError("need at least 3 states (2 pairs)")
    n = states.shape[0] - 1
    K = kernel_matrix(spec, states, states)
    _check_finite(K, "k(states, states)", "s", "s")
    KX = K[:n, :n]
    KY = K[1:, 1:]
    GX = (KX + KX.T) / (2.0 * n)
    GY = (KY + KY.T) / (2.0 * n)
    GYX = K[1:, :n] / n
    for a in (GX, GY, GYX):
        a.setflags(write=False)
    return GramCache(GX=GX, GY=GY, GYX=GYX, n=n)


# ---------------------------------------------------------------------------
# explicit finite-dimensional feature maps (oracle path for linear/polynomial)
# ---------------------------------------------------------------------------

def explicit_features(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    """Feature matrix Phi with Phi Phi^T equal to the unscaled kernel matrix.

    Exists only for the finite-dimensional families: linear (D = d) and
    polynomial (D = C(d + degree, degree)). Used as the brute-force dual of
    the kernel formulations in tests and in the feature-space RRR solver.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d = X.shape[1]
    if spec.family == "linear":
        return X / math.sqrt(spec.scale)
    if spec.family != "polynomial":
        raise ValueError(f"no finite-dimensional feature map for {spec.family!r} kernel")
    deg = spec.degree
    cols = []
    # (sum_k x_k y_k / s + c)^deg expanded over monomial multi-indices.
    for total in range(deg + 1):
        for combo in combinations_with_replacement(range(d), total):
            alpha = np.bincount(np.array(combo, dtype=int), minlength=d) if total else np.zeros(d, int)
            mult = math.factorial(deg) / (
                math.factorial(deg - total) * np.prod([math.factorial(a) for a in alpha])
            )
            coef = math.sqrt(mult * spec.offset ** (deg - total) / spec.scale**total)
            cols.append(coef * np.prod(X**alpha, axis=1))
    return np.column_stack(cols)
