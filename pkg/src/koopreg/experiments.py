"""Benchmark experiments: the eigenvalue/risk comparison table and the
Ivanov-constrained train/test-deviation study, emitting machine-readable reports.

Protocol of the eigenvalue benchmark, per repeat: simulate the noisy logistic
map, hold out `test_size` trailing pairs, select gamma for KRR and RRR on a
20-point log grid by validation risk on the last 20% of the training pairs
(models are fit on the first 80%), decompose each estimator, match the top
three eigenvalues to the analytic oracle by greedy nearest assignment on
descending oracle modulus, and record relative errors plus train/test risks.

The Ivanov study fits PCR at rank r for each n, bisects the RRR Tikhonov
parameter until its Hilbert-Schmidt norm matches PCR's (relative tolerance
1e-4), and tracks |train risk - test risk| across n, whose log-log slope is
reported.

Repeated fits on one training set share a `TrainCache`: one eigendecomposition
of G_X and one of G_Y serve every gamma on the grid, every bisection step, and
the KRR spectral solve, exactly (up to a certified 1e-12 spectral truncation).
The cache is validated against the reference estimator path in the test suite.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datagen import (Trajectory, build_logistic_oracle, make_rng,
                      simulate_logistic, simulate_lorenz63, simulate_ou)
from .estimators import FittedEstimator, empirical_risk, fit_rrr, hs_norm, test_risk
from .kernels import GramCache, KernelSpec, gaussian, kernel_matrix
from .linalg import DEFAULT_RTOL
from .spectral import decompose

# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

EIGBENCH_DEFAULTS = {
    "N": 20,
    "n": 4000,
    "repeats": 10,
    "rank": 3,
    "gamma_grid": {"lo": 1e-7, "hi": 1.0, "num": 20},
    "lengthscale": 0.2,
    "test_size": 500,
    "val_fraction": 0.2,
    "burn_in": 100,
    "x0": 0.33,
    "quad_order": 256,
    "seed": 0,
    "threads": 1,
}

BOUND_DEFAULTS = {
    "system": "logistic",
    "params": {"N": 20, "burn_in": 100, "x0": 0.33},
    "kernel": {"family": "gaussian", "lengthscale": 0.2},
    "n_grid": [250, 500, 1000, 2000, 4000],
    "r": 3,
    "repeats": 10,
    "test_size": 500,
    "hs_tol": 1e-4,
    "gamma_lo": 1e-12,
    "gamma_hi": 100.0,
    "seed": 0,
    "threads": 1,
}


def resolve_config(defaults: dict, *layers: Optional[dict]) -> dict:
    """Merge config layers over defaults, rejecting unknown keys exhaustively."""
    cfg = json.loads(json.dumps(defaults))  # deep copy via JSON
    for layer in layers:
        if not layer:
            continue
        unknown = sorted(set(layer) - set(defaults))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in layer.items():
            if isinstance(defaults[k], dict) and isinstance(v, dict):
                cfg[k] = {**cfg[k], **v}
            else:
                cfg[k] = v
    return cfg


def config_hash(cfg: dict) -> str:
    """Short content hash of a config, ignoring execution-only keys."""
    clean = {k: v for k, v in cfg.items() if k not in ("threads",)}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _gamma_grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.geomspace(float(spec["lo"]), float(spec["hi"]), int(spec["num"]))
    return np.asarray(spec, dtype=np.float64)


# ---------------------------------------------------------------------------
# shared spectral cache for repeated fits on one training set
# ---------------------------------------------------------------------------

@dataclass
class _Fit:
    """Estimator factors in both ambient and eigenbasis coordinates."""

    kind: str
    U: np.ndarray          # (n, r)
    V: np.ndarray          # (n, r)
    Uc: np.ndarray         # Q^T U
    Vc: np.ndarray         # Q^T V
    gamma: float
    rank: int
    sigma_sq: np.ndarray


class TrainCache:
    """Eigendecomposition-sharing fitter for one training pair set.

    All quantities reproduce the reference path (`fit_rrr`, `fit_pcr`,
    `fit_krr`, `empirical_risk`, `test_risk`, `decompose`) exactly, except
    that directions whose Gram eigenvalue falls below 1e-12 of the largest
    are truncated, the same threshold the reference path uses for rank
    decisions.
    """

    def __init__(self, kernel: KernelSpec, X: np.ndarray, Y: np.ndarray,
                 KX: np.ndarray, KY: np.ndarray, KYX: np.ndarray):
        self.kernel = kernel
        self.X = X
        self.Y = Y
        n = X.shape[0]
        self.n = n
        GX = (KX + KX.T) / (2.0 * n)
        GY = (KY + KY.T) / (2.0 * n)
        self.gram = GramCache(GX=GX, GY=GY, GYX=KYX / n, n=n)
        self.KY = KY

        lam, Q = np.linalg.eigh(GX)
        lam, Q = np.clip(lam[::-1], 0.0, None), Q[:, ::-1]
        mu, Qy = np.linalg.eigh(GY)
        mu, Qy = np.clip(mu[::-1], 0.0, None), Qy[:, ::-1]
        self.lam, self.Q = lam, Q
        self.mu = mu
        self.trace_GY = float(np.sum(mu))
        p = max(1, int(np.count_nonzero(mu > DEFAULT_RTOL * mu[0]))) if mu[0] > 0 else 1
        self.p = p
        self.mu_p = mu[:p]
        self.Wp = Qy[:, :p].T @ Q          # (p, n)
        with np.errstate(divide="ignore"):
            inv = 1.0 / np.sqrt(lam)
        self.inv_sqrt_lam = np.where(lam > DEFAULT_RTOL * (lam[0] if lam[0] > 0 else 1.0), inv, 0.0)
        self._Ky_tilde = None              # Q^T KY Q, built lazily for the KRR paths
        self._M_tilde = None               # Q^T (KYX/n) Q

    @classmethod
    def from_states(cls, kernel: KernelSpec, states: np.ndarray, lo: int, hi: int,
                    Kfull: np.ndarray) -> "TrainCache":
        """Cache for the pairs (states[i], states[i+1]), lo <= i < hi."""
        return cls(
            kernel,
            states[lo:hi], states[lo + 1 : hi + 1],
            Kfull[lo:hi, lo:hi], Kfull[lo + 1 : hi + 1, lo + 1 : hi + 1],
            Kfull[lo + 1 : hi + 1, lo:hi],
        )

    # -- fitting ------------------------------------------------------------

    def fit_pcr(self, r: int) -> _Fit:
        lam = self.lam
        num_rank = int(np.count_nonzero(lam > DEFAULT_RTOL * lam[0])) if lam[0] > 0 else 0
        if r > num_rank:
            raise ValueError(f"rank r={r} exceeds numerical rank {num_rank} of G_X")
        V = self.Q[:, :r]
        sig = lam[:r]
        U = V / sig
        Vc = np.zeros((self.n, r)); Vc[np.arange(r), np.arange(r)] = 1.0
        Uc = np.zeros((self.n, r)); Uc[np.arange(r), np.arange(r)] = 1.0 / sig
        return _Fit(kind="pcr", U=U, V=V, Uc=Uc, Vc=Vc, gamma=0.0, rank=r, sigma_sq=sig)

    def fit_rrr(self, r: int, gamma: float) -> _Fit:
        """Reduced-rank fit through the shared eigenbases.

        In G_X eigencoordinates the pencil becomes D_c Ky~ D_c v = s^2 v with
        D_c = sqrt(lam/(lam+gamma)); with Ky~ = W^T diag(mu) W its nonzero
        spectrum is that of the p x p matrix R^T R, R = D_c W_p^T diag(sqrt mu).
        """
        if not gamma > 0:
            raise ValueError("RRR requires gamma > 0")
        lam = self.lam
        dc = np.sqrt(lam / (lam + gamma))
        Z = self.Wp * dc[None, :]                        # (p, n)
        smu = np.sqrt(self.mu_p)
        S = (Z @ Z.T) * np.outer(smu, smu)               # (p, p)
        vals, vecs = np.linalg.eigh((S + S.T) / 2.0)
        vals, vecs = vals[::-1], vecs[:, ::-1]
        if r > self.p or vals[min(r, vals.size) - 1] <= DEFAULT_RTOL * max(vals[0], 0.0):
            raise np.linalg.LinAlgError(
                f"effective rank too low for requested rank {r}"
            )
        sig = vals[:r]
        Zt = Z.T @ (vecs[:, :r] * smu[:, None])          # columns R z_i in eigencoords
        v = Zt / np.sqrt(sig)[None, :]
        c = v * (self.inv_sqrt_lam / np.sqrt(lam + gamma))[:, None]
        norms = np.einsum("ij,ij->j", c, c * (lam * (lam + gamma))[:, None])
        if np.any(norms <= 0):
            raise np.linalg.LinAlgError("degenerate eigenvector normalization in RRR fit")
        Uc = c / np.sqrt(norms)
        Vc = Uc * lam[:, None]
        U = self.Q @ Uc
        V = self.Q @ Vc
        return _Fit(kind="rrr", U=U, V=V, Uc=Uc, Vc=Vc, gamma=float(gamma), rank=r, sigma_sq=sig)

    def to_estimator(self, fit: _Fit) -> FittedEstimator:
        return FittedEstimator(kind=fit.kind, kernel=self.kernel, X=self.X, Y=self.Y,
                               U=fit.U, V=fit.V, gamma=fit.gamma, rank=fit.rank,
                               sigma_sq=fit.sigma_sq)

    # -- low-rank risk and norm evaluation ----------------------------------

    def project_cols(self, Kx_cols: np.ndarray, Ky_cols: np.ndarray):
        """Eigenbasis projections of evaluation columns for repeated risk calls."""
        return self.Q.T @ Kx_cols, self.Q.T @ Ky_cols

    def lowrank_test_risk(self, fit: _Fit, Ax: np.ndarray, By: np.ndarray,
                          kyy: np.ndarray) -> float:
        """Held-out risk of a low-rank fit from projected columns (O(n r m))."""
        n = self.n
        A = fit.Uc.T @ Ax                                # (r, m)
        B = fit.Vc.T @ By
        WV = self.Wp @ fit.Vc                            # (p, r)
        S = n * (WV * self.mu_p[:, None]).T @ WV         # V^T KY V
        vals = kyy - (2.0 / n) * np.einsum("rj,rj->j", A, B) \
            + np.einsum("rj,rs,sj->j", A, S, A) / n**2
        return float(np.mean(vals))

    def lowrank_train_risk(self, fit: _Fit) -> float:
        lam = self.lam
        a = fit.Uc * lam[:, None]                        # G_X U in coords
        b = (self.Wp @ fit.Vc) * self.mu_p[:, None]      # diag(mu) W V
        risk = self.trace_GY - float(np.sum((self.Wp @ a) * b))
        if fit.kind == "rrr":
            M1 = b.T @ (self.Wp @ a)                     # V^T G_Y G_X U
            M2 = fit.Vc.T @ fit.Uc
            risk -= fit.gamma * float(np.sum(M1 * M2.T))
        return risk

    def lowrank_hs_norm(self, fit: _Fit) -> float:
        P = fit.Uc.T @ (fit.Uc * self.lam[:, None])      # U^T G_X U
        WV = self.Wp @ fit.Vc
        Qm = (WV * self.mu_p[:, None]).T @ WV            # V^T G_Y V
        return float(np.sqrt(max(0.0, np.sum(P * Qm.T))))

    # -- KRR paths -----------------------------------------------------------

    def _ky_tilde(self) -> np.ndarray:
        if self._Ky_tilde is None:
            self._Ky_tilde = self.Q.T @ self.KY @ self.Q
        return self._Ky_tilde

    def krr_precompute_risk(self, Kx_cols: np.ndarray, Ky_cols: np.ndarray,
                            kyy: np.ndarray) -> dict:
        """Aggregates making the KRR held-out risk O(n^2) per gamma, exactly.

        Risk(gamma) = mean(kyy) - (2/(n m)) s.d + (1/(n^2 m)) s^T H s with
        s_i = 1/(lam_i + gamma), d = rowsum(A o B), H = Ky~ o (A A^T), where
        A, B are the eigenbasis projections of the evaluation columns.
        """
        A = self.Q.T @ Kx_cols
        B = self.Q.T @ Ky_cols
        d = np.einsum("ij,ij->i", A, B)
        H = self._ky_tilde() * (A @ A.T)
        return {"d": d, "H": H, "kyy_mean": float(np.mean(kyy)), "m": Kx_cols.shape[1]}

    def krr_risk(self, gamma: float, pre: dict) -> float:
        s = 1.0 / (self.lam + gamma)
        n, m = self.n, pre["m"]
        return pre["kyy_mean"] - 2.0 / (n * m) * float(s @ pre["d"]) \
            + float(s @ pre["H"] @ s) / (n**2 * m)

    def krr_train_risk(self, gamma: float) -> float:
        s = 1.0 / (self.lam + gamma)
        return float(gamma**2 / self.n * np.sum(s**2 * np.diag(self._ky_tilde())))

    def krr_top_eigenvalues(self, gamma: float, k: int = 3):
        """Top-k eigenvalues (by modulus) of the KRR transfer matrix G_gamma^-1 M.

        Works on the similar matrix B = D^-1/2 (Q^T M Q) D^-1/2 with
        D = diag(lam + gamma) and truncates it to its leading block when the
        discarded Frobenius mass certifies the eigenvalues to 1e-7; otherwise
        falls back to the full dense solve.
        """
        if self._M_tilde is None:
            self._M_tilde = self.Q.T @ self.gram.GYX @ self.Q
        isg = 1.0 / np.sqrt(self.lam + gamma)
        B = self._M_tilde * np.outer(isg, isg)
        n = self.n
        sq = np.cumsum(np.cumsum(B**2, axis=0), axis=1)
        total = sq[-1, -1]
        vals = None
        tail = 0.0
        for p in (256, 512, 1024, 2048, 4096):
            if p >= n:
                break
            tail = math.sqrt(max(0.0, total - sq[p - 1, p - 1]))
            if tail <= 1e-7:
                vals = np.linalg.eigvals(B[:p, :p])
                break
        if vals is None:
            vals = np.linalg.eigvals(B)
            tail = 0.0
        order = np.lexsort((np.arange(vals.size), -vals.real, -np.abs(vals)))
        return vals[order][:k], tail


# ---------------------------------------------------------------------------
# eigenvalue matching
# ---------------------------------------------------------------------------

def match_eigenvalues(oracle_vals: np.ndarray, est_vals: np.ndarray) -> np.ndarray:
    """Greedy bijection: per oracle eigenvalue (descending modulus), the nearest
    unused estimate. Returns relative errors aligned to the oracle order."""
    oracle_vals = np.asarray(oracle_vals, dtype=complex)
    est_vals = np.asarray(est_vals, dtype=complex)
    if oracle_vals.size != est_vals.size:
        raise ValueError("oracle and estimated eigenvalue sets must have equal size")
    unused = list(range(est_vals.size))
    errs = np.empty(oracle_vals.size)
    for i, lam in enumerate(oracle_vals):
        j_best = min(unused, key=lambda j: abs(est_vals[j] - lam))
        unused.remove(j_best)
        errs[i] = abs(est_vals[j_best] - lam) / abs(lam)
    return errs


# ---------------------------------------------------------------------------
# eigenvalue benchmark (the estimator-comparison table)
# ---------------------------------------------------------------------------

def _eigbench_repeat(cfg: dict, oracle_pairs: list, rep: int) -> dict:
    spec = gaussian(cfg["lengthscale"])
    n, ts = int(cfg["n"]), int(cfg["test_size"])
    r = int(cfg["rank"])
    traj = simulate_logistic(cfg["N"], n + ts, burn_in=cfg["burn_in"],
                             seed=(cfg["seed"], 1, rep), x0=cfg["x0"])
    states = traj.states
    Kfull = kernel_matrix(spec, states, states)
    kdiag = np.diag(Kfull)

    n_fit = n - int(math.floor(cfg["val_fraction"] * n))
    cache = TrainCache.from_states(spec, states, 0, n_fit, Kfull)

    Kxv = Kfull[0:n_fit, n_fit:n]
    Kyv = Kfull[1 : n_fit + 1, n_fit + 1 : n + 1]
    kyy_v = kdiag[n_fit + 1 : n + 1]
    Kxt = Kfull[0:n_fit, n : n + ts]
    Kyt = Kfull[1 : n_fit + 1, n + 1 : n + ts + 1]
    kyy_t = kdiag[n + 1 : n + ts + 1]

    gammas = _gamma_grid(cfg["gamma_grid"])
    oracle_top = np.array([complex(a, b) for a, b in oracle_pairs])

    # KRR: validation curve, then risks and certified top eigenvalues
    pre_val = cache.krr_precompute_risk(Kxv, Kyv, kyy_v)
    krr_curve = np.array([cache.krr_risk(g, pre_val) for g in gammas])
    g_krr = float(gammas[int(np.argmin(krr_curve))])
    pre_test = cache.krr_precompute_risk(Kxt, Kyt, kyy_t)
    krr_eigs, _ = cache.krr_top_eigenvalues(g_krr, k=3)
    krr_row = {
        "gamma": g_krr,
        "train_risk": cache.krr_train_risk(g_krr),
        "test_risk": cache.krr_risk(g_krr, pre_test),
        "eigs": krr_eigs,
    }

    # RRR: validation over the same grid with shared projections
    Axv, Byv = cache.project_cols(Kxv, Kyv)
    Axt, Byt = cache.project_cols(Kxt, Kyt)
    best = None
    for g in gammas:
        fit = cache.fit_rrr(r, float(g))
        risk = cache.lowrank_test_risk(fit, Axv, Byv, kyy_v)
        if best is None or risk < best[0]:
            best = (risk, float(g), fit)
    _, g_rrr, fit_rrr_final = best
    pcr_fit = cache.fit_pcr(r)

    rows = {"krr": krr_row}
    for name, fit in (("rrr", fit_rrr_final), ("pcr", pcr_fit)):
        est = cache.to_estimator(fit)
        dec = decompose(est, gram=cache.gram)
        if dec.r < 3:
            raise np.linalg.LinAlgError(f"{name} decomposition kept fewer than 3 eigenvalues")
        rows[name] = {
            "gamma": fit.gamma,
            "train_risk": cache.lowrank_train_risk(fit),
            "test_risk": cache.lowrank_test_risk(fit, Axt, Byt, kyy_t),
            "eigs": dec.eigenvalues[:3],
        }

    out = {}
    for name, row in rows.items():
        errs = match_eigenvalues(oracle_top, row["eigs"])
        out[name] = {
            "train_risk": row["train_risk"],
            "test_risk": row["test_risk"],
            "rel_err_lambda1": float(errs[0]),
            "rel_err_lambda23": float(np.mean(errs[1:3])),
            "gamma": row["gamma"],
        }
    return out


def _eigbench_repeat_packed(args):
    cfg_json, oracle_pairs, rep = args
    return _eigbench_repeat(json.loads(cfg_json), oracle_pairs, rep)


_STATS = ("train_risk", "test_risk", "rel_err_lambda1", "rel_err_lambda23", "gamma")


def eigenvalue_benchmark(cfg: Optional[dict] = None, **overrides) -> dict:
    """Compare KRR/PCR/RRR on the noisy logistic map against the analytic spectrum."""
    cfg = resolve_config(EIGBENCH_DEFAULTS, cfg, overrides)
    oracle = build_logistic_oracle(cfg["N"], cfg["quad_order"])
    oracle_pairs = [[float(v.real), float(v.imag)] for v in oracle.eigenvalues[:3]]

    repeats = int(cfg["repeats"])
    jobs = [(json.dumps(cfg, sort_keys=True), oracle_pairs, rep) for rep in range(repeats)]
    threads = int(cfg.get("threads") or 1)
    results, failures = [], []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_eigbench_repeat_packed, jobs))
        results = [(rep, row) for rep, row in enumerate(raw)]
    else:
        for rep in range(repeats):
            try:
                results.append((rep, _eigbench_repeat(cfg, oracle_pairs, rep)))
            except np.linalg.LinAlgError as exc:
                warnings.warn(f"repeat {rep} failed: {exc}", stacklevel=2)
                failures.append(rep)

    per_est = {}
    for name in ("pcr", "rrr", "krr"):
        stats = {}
        for key in _STATS:
            vals = np.array([row[name][key] for _, row in results])
            stats[key] = {
                "mean": float(np.mean(vals)) if vals.size else None,
                "sd": float(np.std(vals, ddof=1)) if vals.size > 1 else None,
                "median": float(np.median(vals)) if vals.size else None,
            }
        per_est[name] = stats

    return {
        "experiment": "eigenvalue_benchmark",
        "config": cfg,
        "config_hash": config_hash(cfg),
        "oracle_eigenvalues": oracle_pairs,
        "estimators": per_est,
        "repeats": repeats,
        "completed_repeats": len(results),
        "failed_repeats": sorted(failures),
        "seeds": [[cfg["seed"], 1, rep] for rep in range(repeats)],
    }


# ---------------------------------------------------------------------------
# HS-norm matching and the Ivanov bound experiment
# ---------------------------------------------------------------------------

def match_hs_norm(gram: GramCache, kernel: KernelSpec, X, Y, r: int, target: float,
                  gamma_lo: float, gamma_hi: float, tol: float = 1e-4,
                  max_iter: int = 200, _fit_norm=None):
    """Bisection on log gamma until the rank-r RRR HS norm hits `target`.

    Relies on the empirical monotone decrease of the HS norm in gamma; the
    bracket is validated first and violations abort with both endpoint norms.
    Returns (gamma, fitted estimator or cache fit).
    """
    if not target > 0:
        raise ValueError(f"target HS norm must be positive, got {target}")
    if _fit_norm is None:
        def _fit_norm(g):
            est = fit_rrr(gram, kernel, X, Y, r, g)
            return est, hs_norm(est, gram)
    fit_lo, h_lo = _fit_norm(gamma_lo)
    fit_hi, h_hi = _fit_norm(gamma_hi)
    if not (h_hi <= target * (1 + tol) and target <= h_lo * (1 + tol)):
        raise ValueError(
            f"target {target:.6e} outside bracket: hs({gamma_lo:g})={h_lo:.6e}, "
            f"hs({gamma_hi:g})={h_hi:.6e}"
        )
    for cand, h, g in ((fit_lo, h_lo, gamma_lo), (fit_hi, h_hi, gamma_hi)):
        if abs(h - target) / target < tol:
            return g, cand
    lo, hi = gamma_lo, gamma_hi
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        fit, h = _fit_norm(mid)
        if abs(h - target) / target < tol:
            return mid, fit
        if h > target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(
        f"HS-norm bisection did not reach relative tolerance {tol} in {max_iter} steps"
    )


def _simulate_system(cfg: dict, n_pairs: int, seed) -> Trajectory:
    system = cfg["system"]
    params = cfg["params"]
    if system == "logistic":
        return simulate_logistic(params.get("N", 20), n_pairs,
                                 burn_in=params.get("burn_in", 100), seed=seed,
                                 x0=params.get("x0", 0.33))
    if system == "ou":
        return simulate_ou(params.get("F_eigs", [0.9, 0.5]), n_pairs, seed=seed)
    if system == "lorenz63":
        jitter = 0.5 * make_rng(seed).standard_normal(3)
        x0 = np.asarray(params.get("x0", (1.0, 1.0, 1.0)), dtype=np.float64) + jitter
        return simulate_lorenz63(n_pairs, dt=params.get("dt", 0.1),
                                 burn_time=params.get("burn_time", 100.0), x0=x0,
                                 h=params.get("h", 1e-3))
    raise ValueError(f"unknown system {system!r}")


def _bound_cell(cfg: dict, n: int, cell: int, rep: int) -> dict:
    spec = KernelSpec.from_dict(cfg["kernel"])
    ts = int(cfg["test_size"])
    r = int(cfg["r"])
    traj = _simulate_system(cfg, n + ts, seed=(cfg["seed"], 2, cell, rep))
    states = traj.states
    Kfull = kernel_matrix(spec, states, states)
    kdiag = np.diag(Kfull)
    cache = TrainCache.from_states(spec, states, 0, n, Kfull)
    Axt, Byt = cache.project_cols(Kfull[0:n, n : n + ts],
                                  Kfull[1 : n + 1, n + 1 : n + ts + 1])
    kyy_t = kdiag[n + 1 : n + ts + 1]

    pcr = cache.fit_pcr(r)
    pcr_hs = cache.lowrank_hs_norm(pcr)

    def fit_norm(g):
        fit = cache.fit_rrr(r, g)
        return fit, cache.lowrank_hs_norm(fit)

    gamma, rrr = match_hs_norm(cache.gram, spec, cache.X, cache.Y, r, pcr_hs,
                               cfg["gamma_lo"], cfg["gamma_hi"], tol=cfg["hs_tol"],
                               _fit_norm=fit_norm)
    rrr_hs = cache.lowrank_hs_norm(rrr)
    row = {
        "pcr_train": cache.lowrank_train_risk(pcr),
        "pcr_test": cache.lowrank_test_risk(pcr, Axt, Byt, kyy_t),
        "rrr_train": cache.lowrank_train_risk(rrr),
        "rrr_test": cache.lowrank_test_risk(rrr, Axt, Byt, kyy_t),
        "pcr_hs": pcr_hs,
        "rrr_hs": rrr_hs,
        "gamma": gamma,
    }
    row["pcr_dev"] = abs(row["pcr_train"] - row["pcr_test"])
    row["rrr_dev"] = abs(row["rrr_train"] - row["rrr_test"])
    if abs(pcr_hs - rrr_hs) / pcr_hs >= 1e-3:
        raise RuntimeError(f"HS norms not matched: pcr={pcr_hs}, rrr={rrr_hs}")
    return row


def _bound_cell_packed(args):
    cfg_json, n, cell, rep = args
    return _bound_cell(json.loads(cfg_json), n, cell, rep)


def ivanov_bound_experiment(cfg: Optional[dict] = None, **overrides) -> dict:
    """PCR-vs-RRR comparison at matched HS norm across n, with deviation slopes."""
    cfg = resolve_config(BOUND_DEFAULTS, cfg, overrides)
    n_grid = [int(v) for v in cfg["n_grid"]]
    if len(n_grid) < 4 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be ascending with at least 4 values")
    repeats = int(cfg["repeats"])

    jobs = [(json.dumps(cfg, sort_keys=True), n, ci, rep)
            for ci, n in enumerate(n_grid) for rep in range(repeats)]
    threads = int(cfg.get("threads") or 1)
    rows, failures = {}, []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_bound_cell_packed, jobs))
        for (_, n, ci, rep), row in zip(jobs, raw):
            rows.setdefault(n, []).append(row)
    else:
        for _, n, ci, rep in jobs:
            try:
                rows.setdefault(n, []).append(_bound_cell(cfg, n, ci, rep))
            except (np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
                warnings.warn(f"cell n={n} repeat {rep} failed: {exc}", stacklevel=2)
                failures.append([n, rep])

    per_n = []
    for n in n_grid:
        cells = rows.get(n, [])
        if not cells:
            continue
        agg = {"n": n, "repeats_completed": len(cells)}
        for key in ("pcr_train", "pcr_test", "rrr_train", "rrr_test",
                    "pcr_dev", "rrr_dev", "pcr_hs", "rrr_hs", "gamma"):
            vals = np.array([c[key] for c in cells])
            agg[key] = float(np.mean(vals))
            agg[key + "_sd"] = float(np.std(vals, ddof=1)) if vals.size > 1 else None
        agg["matched_hs_norm"] = agg["rrr_hs"]
        agg["matched_gamma"] = agg["gamma"]
        per_n.append(agg)

    def _slope(key) -> Optional[float]:
        pts = [(row["n"], row[key]) for row in per_n if row[key] > 0]
        if len(pts) < 2:
            return None
        lx = np.log([p[0] for p in pts])
        ly = np.log([p[1] for p in pts])
        return float(np.polyfit(lx, ly, 1)[0])

    slope_pcr = _slope("pcr_dev")
    slope_rrr = _slope("rrr_dev")
    mean_devs = [(row["n"], 0.5 * (row["pcr_dev"] + row["rrr_dev"])) for row in per_n]
    slope = None
    if len(mean_devs) >= 2:
        lx = np.log([p[0] for p in mean_devs])
        ly = np.log([p[1] for p in mean_devs])
        slope = float(np.polyfit(lx, ly, 1)[0])

    return {
        "experiment": "ivanov_bound",
        "config": cfg,
        "config_hash": config_hash(cfg),
        "per_n": per_n,
        "slope": slope,
        "slope_pcr": slope_pcr,
        "slope_rrr": slope_rrr,
        "failed_cells": failures,
    }


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def write_report(report: dict, out_dir: str) -> dict:
    """Write a report as deterministic JSON plus a flat CSV; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{report['experiment']}_{report['config_hash']}"
    json_path = os.path.join(out_dir, stem + ".json")
    csv_path = os.path.join(out_dir, stem + ".csv")
    with open(json_path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(csv_path, "w") as fh:
        if report["experiment"] == "eigenvalue_benchmark":
            fh.write("estimator,statistic,mean,sd,median\n")
            for name, stats in sorted(report["estimators"].items()):
                for key, st in sorted(stats.items()):
                    fh.write(f"{name},{key},{_fmt(st['mean'])},{_fmt(st['sd'])},{_fmt(st['median'])}\n")
        else:
            cols = ["n", "pcr_train", "pcr_test", "rrr_train", "rrr_test",
                    "pcr_dev", "rrr_dev", "matched_hs_norm", "matched_gamma"]
            fh.write(",".join(cols) + "\n")
            for row in report["per_n"]:
                fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")
    return {"json": json_path, "csv": csv_path}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)
