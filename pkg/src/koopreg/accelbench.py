"""Side-by-side timing of the numba kernels against their pure-NumPy fallbacks."""

from __future__ import annotations

import os
import time

import numpy as np

from . import _accel
from .datagen import make_rng, simulate_logistic, simulate_lorenz63, simulate_ou
from .kernels import gaussian, kernel_matrix


def _timed(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _tasks(n_gram: int, n_traj: int):
    rng = make_rng(0)
    X = rng.uniform(-1, 1, size=(n_gram, 2))
    spec = gaussian(0.5)
    return {
        "gram_gaussian": lambda: kernel_matrix(spec, X, X),
        "simulate_logistic": lambda: simulate_logistic(20, n_traj, seed=1),
        "simulate_lorenz63": lambda: simulate_lorenz63(200, burn_time=5.0),
        "simulate_ou": lambda: simulate_ou([0.9, 0.5], n_traj, seed=1),
    }


def run_accel_bench(n_gram: int = 1500, n_traj: int = 20000, repeats: int = 3) -> dict:
    """Time each hot kernel under both backends; returns seconds per task."""
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    results = {}
    saved = os.environ.get(_accel._ENV_VAR)
    try:
        for backend in backends:
            os.environ[_accel._ENV_VAR] = "1" if backend == "numba" else "0"
            tasks = _tasks(n_gram, n_traj)
            if backend == "numba":
                for fn in tasks.values():
                    fn()  # warm up: exclude JIT compilation from timings
            results[backend] = {name: _timed(fn, repeats) for name, fn in tasks.items()}
    finally:
        if saved is None:
            os.environ.pop(_accel._ENV_VAR, None)
        else:
            os.environ[_accel._ENV_VAR] = saved
    return results


def format_table(results: dict) -> str:
    names = sorted(next(iter(results.values())).keys())
    backends = list(results.keys())
    lines = ["task" + "".join(f"  {b:>12}" for b in backends) + "     speedup"]
    for name in names:
        row = f"{name:<20}"
        for b in backends:
            row += f"  {results[b][name]:>10.4f}s"
        if len(backends) == 2:
            a, b = results[backends[0]][name], results[backends[1]][name]
            row += f"  {a / b:>9.2f}x" if b > 0 else "        n/a"
        lines.append(row)
    return "\n".join(lines)
