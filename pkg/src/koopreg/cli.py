"""Command-line surface: simulate, fit, eigs, forecast, modes, bench, accel-bench.

Every command is a pure function of its input files, flags and seed: re-running
writes byte-identical outputs. Numeric CSV fields carry 17 significant digits
so round-trips are lossless. Exit codes: 0 success, 1 runtime/numeric failure,
2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import accelbench, datagen, estimators, experiments, kernels, spectral
from .linalg import DefectiveSpectrumError


class UsageError(Exception):
    """Bad flags, unreadable files, malformed configs: exit code 2."""


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _echo_path(out: str) -> str:
    stem, _ = os.path.splitext(out)
    return stem + ".config.json"


def _write_config_echo(out: str, resolved: dict) -> None:
    with open(_echo_path(out), "w") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v != ""])
    except ValueError as exc:
        raise UsageError(f"cannot parse vector {text!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    try:
        if args.system == "logistic":
            traj = datagen.simulate_logistic(args.N, args.n, burn_in=args.burn_in,
                                             seed=args.seed, x0=args.x0)
        elif args.system == "lorenz63":
            x0 = _parse_vector(args.x0_vec)
            if x0.size != 3:
                raise UsageError("lorenz63 needs --x0 with three components")
            traj = datagen.simulate_lorenz63(args.n, dt=args.dt, burn_time=args.burn_time,
                                             x0=x0, h=args.h)
        else:
            eigs = _parse_vector(args.eigs)
            traj = datagen.simulate_ou(eigs, args.n, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    datagen.write_trajectory_csv(traj, args.out)
    _write_config_echo(args.out, {"command": "simulate", "system": args.system,
                                  **{k: v for k, v in vars(args).items()
                                     if k not in ("func", "system")}})
    print(f"wrote {args.out} ({traj.n_pairs} pairs, dim {traj.dim})")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _kernel_from_args(args) -> kernels.KernelSpec:
    try:
        if args.kernel == "gaussian":
            return kernels.gaussian(args.lengthscale)
        if args.kernel == "linear":
            return kernels.linear(args.scale)
        return kernels.polynomial(args.degree, args.offset, args.scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _cmd_fit(args) -> int:
    try:
        traj = datagen.read_trajectory_csv(args.trajectory)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    spec = _kernel_from_args(args)
    gram = kernels.build_gram_trajectory(spec, traj.states)
    X, Y = traj.pairs()
    if args.estimator == "krr":
        if args.gamma is None or args.gamma <= 0:
            raise UsageError("krr requires --gamma > 0")
        est = estimators.fit_krr(gram, spec, X, Y, args.gamma)
    elif args.estimator == "pcr":
        if args.rank is None:
            raise UsageError("pcr requires --rank")
        est = estimators.fit_pcr(gram, spec, X, Y, args.rank)
    else:
        if args.rank is None or args.gamma is None or args.gamma <= 0:
            raise UsageError("rrr requires --rank and --gamma > 0")
        est = estimators.fit_rrr(gram, spec, X, Y, args.rank, args.gamma)
    estimators.save_model(est, args.out)
    _write_config_echo(args.out, {"command": "fit",
                                  **{k: v for k, v in vars(args).items() if k != "func"}})
    risk = estimators.empirical_risk(est, gram)
    print(f"empirical risk: {_fmt(risk)}")
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# spectral commands
# ---------------------------------------------------------------------------

def _load_model(path: str) -> estimators.FittedEstimator:
    try:
        return estimators.load_model(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}") from exc


def _parse_observable(text: str, est: estimators.FittedEstimator) -> np.ndarray:
    if text == "state":
        return est.Y
    if all(part.startswith("x") for part in text.split(",") if part):
        try:
            idx = [int(part[1:]) for part in text.split(",") if part]
            return est.Y[:, idx]
        except (ValueError, IndexError):
            pass
    try:
        vals = np.loadtxt(text, delimiter=",", ndmin=2)
    except OSError as exc:
        raise UsageError(f"observable {text!r} is neither 'state', columns, nor a readable CSV") from exc
    except ValueError:
        vals = np.loadtxt(text, delimiter=",", skiprows=1, ndmin=2)
    if vals.shape[0] != est.n:
        raise UsageError(f"observable CSV has {vals.shape[0]} rows, expected {est.n}")
    return vals


def _cmd_eigs(args) -> int:
    est = _load_model(args.model)
    dec = spectral.decompose(est)
    with open(args.out, "w") as fh:
        fh.write("index,re_lambda,im_lambda,modulus\n")
        for i, lam in enumerate(dec.eigenvalues):
            fh.write(f"{i},{_fmt(lam.real)},{_fmt(lam.imag)},{_fmt(abs(lam))}\n")
    if args.grid is not None:
        if est.dim != 1:
            raise UsageError("--grid eigenfunction output requires a 1-d state space")
        try:
            a, b, num = args.grid.split(":")
            pts = np.linspace(float(a), float(b), int(num))
        except ValueError as exc:
            raise UsageError(f"--grid must be start:stop:num, got {args.grid!r}") from exc
        vals = spectral.eval_eigenfunctions_grid(dec, pts[:, None])
        out = args.grid_out or (os.path.splitext(args.out)[0] + "_eigenfunctions.csv")
        with open(out, "w") as fh:
            header = "x," + ",".join(f"re_psi{i},im_psi{i}" for i in range(dec.r))
            fh.write(header + "\n")
            for x, row in zip(pts, vals):
                cells = [_fmt(x)]
                for v in row:
                    cells += [_fmt(v.real), _fmt(v.imag)]
                fh.write(",".join(cells) + "\n")
        print(f"wrote {out}")
    _write_config_echo(args.out, {"command": "eigs",
                                  **{k: v for k, v in vars(args).items() if k != "func"}})
    print(f"wrote {args.out} ({dec.r} eigenvalues, {dec.n_dropped} dropped)")
    return 0


def _cmd_forecast(args) -> int:
    est = _load_model(args.model)
    x = _parse_vector(args.x)
    if x.size != est.dim:
        raise UsageError(f"--x has dimension {x.size}, model expects {est.dim}")
    obs = _parse_observable(args.observable, est)
    dec = spectral.decompose(est)
    with open(args.out, "w") as fh:
        m = obs.shape[1] if obs.ndim == 2 else 1
        fh.write("t," + ",".join(f"f{k}" for k in range(m)) + ",imag_residual\n")
        for t in range(1, args.t + 1):
            vals, resid = spectral.forecast(dec, obs, x, t)
            fh.write(f"{t}," + ",".join(_fmt(v) for v in np.atleast_1d(vals))
                     + f",{_fmt(resid)}\n")
    _write_config_echo(args.out, {"command": "forecast",
                                  **{k: v for k, v in vars(args).items() if k != "func"}})
    print(f"wrote {args.out}")
    return 0


def _cmd_modes(args) -> int:
    est = _load_model(args.model)
    obs = _parse_observable(args.observable, est)
    dec = spectral.decompose(est)
    ms = spectral.modes(dec, obs)
    with open(args.out, "w") as fh:
        m = ms.gammas.shape[1]
        header = "index,re_lambda,im_lambda," + ",".join(
            f"re_gamma{k},im_gamma{k}" for k in range(m))
        fh.write(header + "\n")
        for i, lam in enumerate(dec.eigenvalues):
            cells = [str(i), _fmt(lam.real), _fmt(lam.imag)]
            for v in ms.gammas[i]:
                cells += [_fmt(v.real), _fmt(v.imag)]
            fh.write(",".join(cells) + "\n")
    _write_config_echo(args.out, {"command": "modes",
                                  **{k: v for k, v in vars(args).items() if k != "func"}})
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _parse_set_overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _cmd_bench(args) -> int:
    file_cfg = None
    if args.config is not None:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
    overrides = _parse_set_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    try:
        if args.kind == "eigs":
            report = experiments.eigenvalue_benchmark(file_cfg, **overrides)
        else:
            report = experiments.ivanov_bound_experiment(file_cfg, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    paths = experiments.write_report(report, args.out)
    _write_config_echo(paths["json"], report["config"])
    _print_bench_summary(report)
    print(f"wrote {paths['json']}\nwrote {paths['csv']}")
    return 0


def _print_bench_summary(report: dict) -> None:
    if report["experiment"] == "eigenvalue_benchmark":
        print(f"{'estimator':<10} {'train':>12} {'test':>12} {'err(l1)':>12} {'err(l23)':>12}")
        for name in ("pcr", "rrr", "krr"):
            st = report["estimators"][name]
            print(f"{name:<10} {st['train_risk']['mean']:>12.5g} {st['test_risk']['mean']:>12.5g}"
                  f" {st['rel_err_lambda1']['mean']:>12.5g} {st['rel_err_lambda23']['mean']:>12.5g}")
        print(f"repeats completed: {report['completed_repeats']}/{report['repeats']}")
    else:
        print(f"{'n':>6} {'pcr_train':>12} {'pcr_test':>12} {'rrr_train':>12} {'rrr_test':>12}")
        for row in report["per_n"]:
            print(f"{row['n']:>6} {row['pcr_train']:>12.5g} {row['pcr_test']:>12.5g}"
                  f" {row['rrr_train']:>12.5g} {row['rrr_test']:>12.5g}")
        print(f"deviation slope: {report['slope']:.3f} "
              f"(pcr {report['slope_pcr']:.3f}, rrr {report['slope_rrr']:.3f})")


def _cmd_accel_bench(args) -> int:
    results = accelbench.run_accel_bench(n_gram=args.n_gram, n_traj=args.n_traj,
                                         repeats=args.repeats)
    print(accelbench.format_table(results))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, sort_keys=True, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="koopreg",
                                 description="Kernel transfer-operator regression toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic trajectory CSV")
    sim_sub = sim.add_subparsers(dest="system", required=True)
    p = sim_sub.add_parser("logistic")
    p.add_argument("--N", type=int, default=20, help="even noise exponent")
    p.add_argument("--n", type=int, required=True, help="number of training pairs")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=100)
    p.add_argument("--x0", type=float, default=0.33)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)
    p = sim_sub.add_parser("lorenz63")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--burn-time", dest="burn_time", type=float, default=100.0)
    p.add_argument("--x0", dest="x0_vec", default="1,1,1")
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0, help="unused; kept for interface symmetry")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)
    p = sim_sub.add_parser("ou")
    p.add_argument("--eigs", required=True, help="comma-separated diagonal of F, in (0,1)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit an estimator to a trajectory CSV")
    fit.add_argument("trajectory")
    fit.add_argument("--estimator", choices=("krr", "pcr", "rrr"), required=True)
    fit.add_argument("--kernel", choices=("gaussian", "linear", "polynomial"),
                     default="gaussian")
    fit.add_argument("--lengthscale", type=float, default=0.2)
    fit.add_argument("--scale", type=float, default=1.0)
    fit.add_argument("--degree", type=int, default=2)
    fit.add_argument("--offset", type=float, default=1.0)
    fit.add_argument("--gamma", type=float, default=None)
    fit.add_argument("--rank", type=int, default=None)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=_cmd_fit)

    eig = sub.add_parser("eigs", help="eigenvalues (and optional eigenfunction grid) of a model")
    eig.add_argument("model")
    eig.add_argument("--out", required=True)
    eig.add_argument("--grid", default=None, help="start:stop:num for 1-d eigenfunction output")
    eig.add_argument("--grid-out", dest="grid_out", default=None)
    eig.set_defaults(func=_cmd_eigs)

    fc = sub.add_parser("forecast", help="modal forecast of an observable from a state")
    fc.add_argument("model")
    fc.add_argument("--x", required=True, help="comma-separated start state")
    fc.add_argument("--t", type=int, required=True, help="forecast horizon (rows 1..t)")
    fc.add_argument("--observable", default="state",
                    help="'state', columns like x0,x1, or a CSV of f(y_i) values")
    fc.add_argument("--out", required=True)
    fc.set_defaults(func=_cmd_forecast)

    md = sub.add_parser("modes", help="dynamic modes of an observable")
    md.add_argument("model")
    md.add_argument("--observable", default="state")
    md.add_argument("--out", required=True)
    md.set_defaults(func=_cmd_modes)

    bn = sub.add_parser("bench", help="run a benchmark experiment and write reports")
    bn.add_argument("kind", choices=("eigs", "bound"))
    bn.add_argument("--config", default=None, help="JSON config; defaults used if omitted")
    bn.add_argument("--out", required=True, help="output directory")
    bn.add_argument("--seed", type=int, default=None)
    bn.add_argument("--threads", type=int, default=None,
                    help="parallel repeat workers (default 1)")
    bn.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key (value parsed as JSON)")
    bn.set_defaults(func=_cmd_bench)

    ab = sub.add_parser("accel-bench", help="compare numba and numpy backends")
    ab.add_argument("--n-gram", dest="n_gram", type=int, default=1500)
    ab.add_argument("--n-traj", dest="n_traj", type=int, default=20000)
    ab.add_argument("--repeats", type=int, default=3)
    ab.add_argument("--out", default=None)
    ab.set_defaults(func=_cmd_accel_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DefectiveSpectrumError as exc:
        print(f"error: {exc} (try a lower rank or a larger gamma)", file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
