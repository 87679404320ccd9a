"""Synthetic dynamical systems with analytic ground truth, plus trajectory utilities.

Three generators are provided:

* the noisy logistic map x' = (4x(1-x) + xi) mod 1 with trigonometric noise
  (density proportional to cos^N(pi xi) on [-1/2, 1/2], N even), whose
  transition kernel is separable of rank N+1 so the exact Koopman eigenvalues,
  eigenfunctions and invariant density follow from an (N+1)x(N+1) matrix;
* the Lorenz-63 system (sigma=10, mu=28, beta=8/3) integrated by fixed-step
  RK4 and sampled every dt after a burn-in period;
* an AR(1) / discretized Ornstein-Uhlenbeck process x' = F x + w with diagonal
  F and standard Gaussian noise, whose invariant law is N(0, (I - F^2)^-1).

All stochastic generators are deterministic functions of (parameters, seed),
using the counter-based Philox generator for cross-platform reproducibility.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import beta as beta_fn

from ._accel import njit, numba_enabled
from .linalg import eig_small_nonsym


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox generator; `seed` is an int or a short tuple of ints.

    Tuples are packed into the 128-bit Philox key so hierarchies like
    (master, cell, repeat) give independent, collision-free streams.
    """
    if np.isscalar(seed):
        key = int(seed)
    else:
        parts = [int(v) for v in seed]
        key = 0
        for v in parts:
            key = (key << 32) ^ (v & 0xFFFFFFFF) ^ ((v >> 32) << 1)
        key &= (1 << 128) - 1
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class Trajectory:
    """An ordered state sequence; training pairs are (states[i], states[i+1])."""

    states: np.ndarray            # (n+1, d)
    dt: Optional[float] = None    # physical sampling interval, if any
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if self.states.shape[0] < 3:
            raise ValueError("a trajectory needs at least 3 states (2 pairs)")

    @property
    def n_pairs(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def pairs(self):
        """(X, Y) with x_i = states[i], y_i = states[i+1]."""
        return self.states[:-1], self.states[1:]


# ---------------------------------------------------------------------------
# noisy logistic map
# ---------------------------------------------------------------------------

def trig_noise_normalizer(N: int) -> float:
    """C_N = pi / B((N+1)/2, 1/2), the height of the trigonometric density."""
    return math.pi / beta_fn((N + 1) / 2.0, 0.5)


def sample_trig_noise(rng: np.random.Generator, count: int, N: int) -> np.ndarray:
    """Draw `count` samples of the cos^N(pi xi) noise by rejection.

    Uniform proposal on [-1/2, 1/2] under the constant envelope C_N, so a
    proposal xi is accepted when u < cos^N(pi xi); the acceptance rate is
    exactly 1/C_N. Draws are consumed in a fixed order, so results depend
    only on (rng state, count, N).
    """
    if N < 2 or N % 2 != 0:
        raise ValueError("N must be an even integer >= 2")
    rate = 1.0 / trig_noise_normalizer(N)
    out = np.empty(count)
    have = 0
    while have < count:
        todo = count - have
        chunk = max(64, int(1.2 * todo / rate))
        xi = rng.uniform(-0.5, 0.5, size=chunk)
        u = rng.uniform(0.0, 1.0, size=chunk)
        acc = xi[u < np.cos(np.pi * xi) ** N]
        take = min(todo, acc.size)
        out[have : have + take] = acc[:take]
        have += take
    return out


@njit(cache=True)
def _logistic_scan_nb(x0, noise):
    steps = noise.shape[0]
    states = np.empty(steps + 1)
    x = x0
    states[0] = x
    for t in range(steps):
        x = (4.0 * x * (1.0 - x) + noise[t]) % 1.0
        states[t + 1] = x
    return states


def _logistic_scan_np(x0, noise):
    steps = noise.shape[0]
    states = np.empty(steps + 1)
    x = x0
    states[0] = x
    for t in range(steps):
        x = (4.0 * x * (1.0 - x) + noise[t]) % 1.0
        states[t + 1] = x
    return states


def simulate_logistic(N: int, n: int, burn_in: int = 100, seed=0, x0: float = 0.33) -> Trajectory:
    """Simulate the noisy logistic map; returns n+1 states after burn-in."""
    if n < 2:
        raise ValueError("need n >= 2 pairs")
    rng = make_rng(seed)
    noise = sample_trig_noise(rng, burn_in + n, N)
    scan = _logistic_scan_nb if numba_enabled() else _logistic_scan_np
    states = scan(float(x0), noise)[burn_in:]
    meta = {"generator": "logistic", "params": {"N": int(N), "burn_in": int(burn_in), "x0": float(x0)},
            "seed": seed, "dt": None, "rng": "philox"}
    return Trajectory(states=states[:, None], dt=None, meta=meta)


@dataclass
class LogisticOracle:
    """Analytic Koopman ground truth of the trigonometric-noise logistic map.

    The transition kernel p(x, y) = C_N cos^N(pi(y - F(x))) separates as
    sum_i alpha_i(x) beta_i(y) with F(x) = 4x(1-x),
    beta_i(x) = sqrt(C_N binom(N, i)) cos^i(pi x) sin^(N-i)(pi x) and
    alpha_i = beta_i o F. Koopman eigenvalues are the eigenvalues of the
    (N+1)x(N+1) matrix P with P_ij = int_0^1 beta_i(x) alpha_j(x) dx;
    right eigenvectors c give eigenfunctions h(x) = sum_i alpha_i(x) c_i and
    the left eigenvector d at the unit eigenvalue gives the invariant density
    pi(x) = sum_i beta_i(x) d_i (normalized to integrate to one).
    """

    N: int
    P: np.ndarray
    eigenvalues: np.ndarray        # descending modulus
    invariant_coeffs: np.ndarray   # d, scaled so the density integrates to 1
    eigfun_coeffs: np.ndarray      # column k: right eigenvector for eigenvalues[k]
    quad_order: int
    quad_nodes: np.ndarray
    quad_weights: np.ndarray

    def beta_basis(self, x) -> np.ndarray:
        """beta_i(x) for i = 0..N; shape (N+1, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        C = trig_noise_normalizer(self.N)
        i = np.arange(self.N + 1)[:, None]
        binom = np.array([math.comb(self.N, k) for k in range(self.N + 1)])[:, None]
        return np.sqrt(C * binom) * np.cos(np.pi * x) ** i * np.sin(np.pi * x) ** (self.N - i)

    def alpha_basis(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.beta_basis(4.0 * x * (1.0 - x))

    def invariant_density(self, x) -> np.ndarray:
        return self.invariant_coeffs @ self.beta_basis(x)

    def eigenfunction(self, k: int, x) -> np.ndarray:
        """The Koopman eigenfunction paired with eigenvalues[k]."""
        return self.eigfun_coeffs[:, k] @ self.alpha_basis(x).astype(complex)

    def invariant_moment(self, f) -> float:
        """Quadrature of f against the invariant density."""
        dens = self.invariant_density(self.quad_nodes)
        return float(np.sum(self.quad_weights * dens * f(self.quad_nodes)))


def _logistic_transfer_matrix(N: int, quad_order: int):
    nodes, weights = np.polynomial.legendre.leggauss(quad_order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    C = trig_noise_normalizer(N)
    i = np.arange(N + 1)[:, None]
    binom = np.array([math.comb(N, k) for k in range(N + 1)])[:, None]
    coef = np.sqrt(C * binom)
    B = coef * np.cos(np.pi * nodes) ** i * np.sin(np.pi * nodes) ** (N - i)
    Fx = 4.0 * nodes * (1.0 - nodes)
    A = coef * np.cos(np.pi * Fx) ** i * np.sin(np.pi * Fx) ** (N - i)
    P = (B * weights) @ A.T
    return P, nodes, weights


def _sorted_eig_order(values: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(values.size), -values.imag, -values.real, -np.abs(values)))


def build_logistic_oracle(N: int, quad_order: int = 256) -> LogisticOracle:
    """Assemble the analytic oracle, certifying quadrature by node doubling."""
    if N < 2 or N % 2 != 0:
        raise ValueError("N must be an even integer >= 2")
    if quad_order < 64:
        raise ValueError("quad_order must be >= 64")
    P, nodes, weights = _logistic_transfer_matrix(N, quad_order)
    P2, _, _ = _logistic_transfer_matrix(N, 2 * quad_order)

    dec = eig_small_nonsym(P)
    order = _sorted_eig_order(dec.values)
    values = dec.values[order]
    right = dec.right[:, order]
    left = dec.left[:, order]

    vals2 = np.linalg.eigvals(P2)
    drift = np.max(np.abs(values - vals2[_sorted_eig_order(vals2)]))
    if drift > 1e-8:
        raise RuntimeError(
            f"quadrature not converged: doubling nodes moves an eigenvalue by {drift:.3e}"
        )

    unit = np.where(np.abs(values - 1.0) <= 1e-8)[0]
    if unit.size != 1:
        raise RuntimeError(
            f"expected exactly one unit eigenvalue, found {unit.size} (kernel not stochastic?)"
        )
    d = left[:, unit[0]]
    if np.max(np.abs(d.imag)) > 1e-10:
        raise RuntimeError("invariant-density coefficients are not real")
    d = d.real

    C = trig_noise_normalizer(N)
    i = np.arange(N + 1)[:, None]
    binom = np.array([math.comb(N, k) for k in range(N + 1)])[:, None]
    Bq = np.sqrt(C * binom) * np.cos(np.pi * nodes) ** i * np.sin(np.pi * nodes) ** (N - i)
    mass = float(np.sum(weights * (d @ Bq)))
    if abs(mass) < 1e-12:
        raise RuntimeError("degenerate invariant density")
    d = d / mass

    oracle = LogisticOracle(
        N=int(N), P=P, eigenvalues=values, invariant_coeffs=d,
        eigfun_coeffs=right, quad_order=int(quad_order),
        quad_nodes=nodes, quad_weights=weights,
    )
    grid = np.linspace(0.0, 1.0, 1000)
    dens = oracle.invariant_density(grid)
    if dens.min() < -1e-8:
        raise RuntimeError(f"invariant density negative ({dens.min():.3e}) on the check grid")
    total = oracle.invariant_moment(lambda x: np.ones_like(x))
    if abs(total - 1.0) > 1e-6:
        raise RuntimeError(f"invariant density integrates to {total!r}, expected 1")
    return oracle


# ---------------------------------------------------------------------------
# Lorenz-63
# ---------------------------------------------------------------------------

_LORENZ_SIGMA = 10.0
_LORENZ_MU = 28.0
_LORENZ_BETA = 8.0 / 3.0


@njit(cache=True)
def _lorenz_rk4_nb(x0, h, burn_steps, n_record, steps_per_sample):
    out = np.empty((n_record + 1, 3))
    x, y, z = x0[0], x0[1], x0[2]
    total = burn_steps + n_record * steps_per_sample
    rec = 0
    if burn_steps == 0:
        out[0, 0], out[0, 1], out[0, 2] = x, y, z
        rec = 1
    for step in range(total):
        k1x = _LORENZ_SIGMA * (y - x)
        k1y = x * (_LORENZ_MU - z) - y
        k1z = x * y - _LORENZ_BETA * z
        ax, ay, az = x + 0.5 * h * k1x, y + 0.5 * h * k1y, z + 0.5 * h * k1z
        k2x = _LORENZ_SIGMA * (ay - ax)
        k2y = ax * (_LORENZ_MU - az) - ay
        k2z = ax * ay - _LORENZ_BETA * az
        bx, by, bz = x + 0.5 * h * k2x, y + 0.5 * h * k2y, z + 0.5 * h * k2z
        k3x = _LORENZ_SIGMA * (by - bx)
        k3y = bx * (_LORENZ_MU - bz) - by
        k3z = bx * by - _LORENZ_BETA * bz
        cx, cy, cz = x + h * k3x, y + h * k3y, z + h * k3z
        k4x = _LORENZ_SIGMA * (cy - cx)
        k4y = cx * (_LORENZ_MU - cz) - cy
        k4z = cx * cy - _LORENZ_BETA * cz
        x += h * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
        y += h * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
        z += h * (k1z + 2.0 * k2z + 2.0 * k3z + k4z) / 6.0
        done = step + 1
        if done >= burn_steps and (done - burn_steps) % steps_per_sample == 0:
            if rec <= n_record:
                out[rec, 0], out[rec, 1], out[rec, 2] = x, y, z
                rec += 1
    return out


def _lorenz_rhs(v):
    x, y, z = v
    return np.array([
        _LORENZ_SIGMA * (y - x),
        x * (_LORENZ_MU - z) - y,
        x * y - _LORENZ_BETA * z,
    ])


def _lorenz_rk4_np(x0, h, burn_steps, n_record, steps_per_sample):
    out = np.empty((n_record + 1, 3))
    v = np.asarray(x0, dtype=np.float64).copy()
    total = burn_steps + n_record * steps_per_sample
    rec = 0
    if burn_steps == 0:
        out[0] = v
        rec = 1
    for step in range(total):
        k1 = _lorenz_rhs(v)
        k2 = _lorenz_rhs(v + 0.5 * h * k1)
        k3 = _lorenz_rhs(v + 0.5 * h * k2)
        k4 = _lorenz_rhs(v + h * k3)
        v = v + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        done = step + 1
        if done >= burn_steps and (done - burn_steps) % steps_per_sample == 0:
            if rec <= n_record:
                out[rec] = v
                rec += 1
    return out


def simulate_lorenz63(
    n: int,
    dt: float = 0.1,
    burn_time: float = 100.0,
    x0=(1.0, 1.0, 1.0),
    h: float = 1e-3,
) -> Trajectory:
    """Deterministic Lorenz-63 trajectory: RK4 with internal step h, sampled every dt.

    The first recorded state is the one reached after `burn_time`; n further
    samples follow, spaced dt apart. dt must be an integer multiple of h.
    """
    if n < 2:
        raise ValueError("need n >= 2 pairs")
    if dt <= 0 or h <= 0:
        raise ValueError("dt and h must be positive")
    steps_per = int(round(dt / h))
    if steps_per < 1 or abs(steps_per * h - dt) > 1e-9 * dt:
        raise ValueError(f"dt={dt} is not an integer multiple of the internal step h={h}")
    burn_steps = int(round(burn_time / h))
    scan = _lorenz_rk4_nb if numba_enabled() else _lorenz_rk4_np
    states = scan(np.asarray(x0, dtype=np.float64), float(h), burn_steps, int(n), steps_per)
    if not np.isfinite(states).all():
        bad = int(np.argwhere(~np.isfinite(states).all(axis=1))[0, 0])
        raise FloatingPointError(f"integration diverged at recorded step {bad}")
    meta = {"generator": "lorenz63",
            "params": {"dt": float(dt), "burn_time": float(burn_time),
                       "x0": [float(v) for v in np.asarray(x0).ravel()], "h": float(h),
                       "sigma": _LORENZ_SIGMA, "mu": _LORENZ_MU, "beta": _LORENZ_BETA},
            "seed": None, "dt": float(dt), "rng": None}
    return Trajectory(states=states, dt=float(dt), meta=meta)


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck / AR(1)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ou_scan_nb(x0, f, noise):
    n, d = noise.shape
    states = np.empty((n + 1, d))
    states[0] = x0
    for t in range(n):
        for k in range(d):
            states[t + 1, k] = f[k] * states[t, k] + noise[t, k]
    return states


def _ou_scan_np(x0, f, noise):
    n, d = noise.shape
    states = np.empty((n + 1, d))
    states[0] = x0
    for t in range(n):
        states[t + 1] = f * states[t] + noise[t]
    return states


def simulate_ou(F_eigs, n: int, seed=0) -> Trajectory:
    """AR(1) chain x' = F x + w, F = diag(F_eigs), w ~ N(0, I), started at stationarity."""
    f = np.atleast_1d(np.asarray(F_eigs, dtype=np.float64))
    if np.any(f <= 0.0) or np.any(f >= 1.0):
        raise ValueError("all F eigenvalues must lie strictly in (0, 1)")
    if n < 2:
        raise ValueError("need n >= 2 pairs")
    rng = make_rng(seed)
    x0 = rng.standard_normal(f.size) / np.sqrt(1.0 - f**2)
    noise = rng.standard_normal((n, f.size))
    scan = _ou_scan_nb if numba_enabled() else _ou_scan_np
    states = scan(x0, f, noise)
    meta = {"generator": "ou", "params": {"F_eigs": [float(v) for v in f]},
            "seed": seed, "dt": None, "rng": "philox"}
    return Trajectory(states=states, dt=None, meta=meta)


# ---------------------------------------------------------------------------
# trajectory utilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSplit:
    """Interlaced tau-blocks of pair indices, plus a thinned quasi-independent subsample."""

    odd_blocks: list       # Y_j: pair-index arrays of length tau
    even_blocks: list      # Y'_j
    thinned: np.ndarray    # every 2*tau-th pair index
    n_dropped: int         # trailing pairs that fit no complete block pair


def block_subsample(traj: Trajectory, tau: int) -> BlockSplit:
    n = traj.n_pairs
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if tau >= n / 2:
        raise ValueError(f"tau={tau} too large for n={n} pairs (need tau < n/2)")
    m = n // (2 * tau)
    dropped = n - 2 * tau * m
    if dropped:
        warnings.warn(f"dropping {dropped} trailing pairs not filling a block pair", stacklevel=2)
    idx = np.arange(2 * tau * m)
    odd = [idx[2 * j * tau : (2 * j + 1) * tau] for j in range(m)]
    even = [idx[(2 * j + 1) * tau : (2 * j + 2) * tau] for j in range(m)]
    thinned = idx[:: 2 * tau]
    return BlockSplit(odd_blocks=odd, even_blocks=even, thinned=thinned, n_dropped=dropped)


def split_time(traj: Trajectory, train_fraction: float):
    """Contiguous prefix/suffix split of the training pairs, preserving order.

    Returns ((X_train, Y_train), (X_test, Y_test)).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    X, Y = traj.pairs()
    n = X.shape[0]
    k = int(math.floor(train_fraction * n))
    if k < 2 or n - k < 2:
        raise ValueError(f"split {k}/{n - k} leaves fewer than 2 pairs on one side")
    return (X[:k], Y[:k]), (X[k:], Y[k:])


# ---------------------------------------------------------------------------
# trajectory file I/O
# ---------------------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path: str) -> None:
    """Write states as CSV (header t,x0,...) plus a .meta.json sidecar."""
    d = traj.dim
    header = "t," + ",".join(f"x{k}" for k in range(d))
    t = np.arange(traj.states.shape[0], dtype=np.float64)
    if traj.dt is not None:
        t = t * traj.dt
    body = np.column_stack([t, traj.states])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in body:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    meta = {"generator": traj.meta.get("generator"), "params": traj.meta.get("params"),
            "seed": traj.meta.get("seed"), "dt": traj.dt}
    with open(_meta_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _meta_path(path: str) -> str:
    return (path[:-4] if path.endswith(".csv") else path) + ".meta.json"


def read_trajectory_csv(path: str) -> Trajectory:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ValueError(f"cannot parse trajectory CSV {path}: {exc}") from exc
    if data.shape[1] < 2:
        raise ValueError(f"trajectory CSV {path} needs a t column plus at least one state column")
    meta, dt = {}, None
    try:
        with open(_meta_path(path)) as fh:
            meta = json.load(fh)
        dt = meta.get("dt")
    except FileNotFoundError:
        pass
    return Trajectory(states=data[:, 1:], dt=dt, meta=meta)
