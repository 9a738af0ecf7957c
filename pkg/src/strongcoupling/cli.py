"""Command-line front end: samplers, verification experiments, Stein checks.

Commands are deterministic given --seed and the full flag set; reports are
JSON (schema_version 1) or CSV with shortest round-trip float formatting.
Exit codes: 0 success, 1 assertion failure, 2 input validation, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import stein, verify
from .core import DomainError, EstimationError, RandomSource
from .onestep import exp_moment_estimate
from .recursion import (
    DEFAULT_CONFIG,
    infinite_paths_batch,
    pinned_paths_batch,
    sample_pinned_coupling,
    walk_paths_batch,
)

DEFAULT_SEED = 20250809
SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


def _comma_ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def _comma_floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}") from exc


def _emit(payload, fmt: str, out_path: str | None) -> None:
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        rows = payload.get("csv_rows", [])
        header = payload.get("csv_header", [])
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row))
        text = "\n".join(lines) + "\n"
    if out_path is None or out_path == "-":
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _floats(seq) -> list:
    return [float(v) for v in seq]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    n = args.n[0]
    src = RandomSource(args.seed).split("simulate")
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "mode": args.mode,
        "n": n,
        "seed": args.seed,
    }
    if args.mode == "bridge":
        coupling = sample_pinned_coupling(n, args.endpoint, DEFAULT_CONFIG, src)
        payload["endpoint"] = args.endpoint
        payload["summary"] = {
            "max_abs_w_minus_y": float(np.max(np.abs(coupling.w - coupling.y))),
            "diag_tl": coupling.diag_tl,
            "diag_tr": coupling.diag_tr,
            "diag_t": coupling.diag_t,
        }
        if args.emit_paths:
            payload["paths"] = {"w": _floats(coupling.w), "y": _floats(coupling.y)}
            payload["csv_header"] = ["i", "w", "y"]
            payload["csv_rows"] = [
                (i, float(w), float(y))
                for i, (w, y) in enumerate(zip(coupling.w, coupling.y))
            ]
    else:
        if args.mode == "walk":
            S, Y = walk_paths_batch(n, DEFAULT_CONFIG, src, 1)
        else:
            S, Y = infinite_paths_batch(n, DEFAULT_CONFIG, src, 1)
        s, y = S[0], Y[0]
        payload["summary"] = {
            "max_deviation": float(np.max(np.abs(s - y))),
            "walk_end": int(s[-1]),
            "gauss_end": float(y[-1]),
        }
        if args.emit_paths:
            payload["paths"] = {"walk": [int(v) for v in s], "gauss": _floats(y)}
            payload["csv_header"] = ["i", "walk", "gauss"]
            payload["csv_rows"] = [(i, int(a), float(b))
                                   for i, (a, b) in enumerate(zip(s, y))]
    if not args.emit_paths:
        payload["csv_header"] = ["key", "value"]
        payload["csv_rows"] = sorted((k, v) for k, v in payload["summary"].items())
    _emit(payload, args.format, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _experiment_marginals(args, src):
    results, failures = {}, []
    for n in args.n:
        sub = src.split(f"n{n}")
        S, _ = walk_paths_batch(n, DEFAULT_CONFIG, sub.split("walk"), args.reps)
        p_walk = verify.signs_chi_square(np.diff(S, axis=1))
        entry = {"walk_signs_p": p_walk}
        if p_walk <= 0.001:
            failures.append(f"walk signs chi-square at n={n}")
        if n <= 12 and (n - args.endpoint) % 2 == 0 and abs(args.endpoint) <= n:
            Sp, _, _ = pinned_paths_batch(n, args.endpoint, DEFAULT_CONFIG,
                                          sub.split("pinned"), args.reps)
            p_pin = verify.pinned_uniformity_chi_square(Sp, args.endpoint)
            entry["pinned_uniformity_p"] = p_pin
            if p_pin <= 0.001:
                failures.append(f"pinned uniformity chi-square at n={n}")
        results[str(n)] = entry
    return results, failures


def _experiment_covariance(args, src):
    results, failures = {}, []
    for n in args.n:
        sub = src.split(f"n{n}")
        if args.mode == "bridge":
            S, Y, _ = pinned_paths_batch(n, args.endpoint, DEFAULT_CONFIG, sub,
                                         args.reps)
            i = np.arange(n + 1, dtype=np.float64)
            target = np.minimum.outer(i, i) * (n - np.maximum.outer(i, i)) / n
        else:
            S, Y = walk_paths_batch(n, DEFAULT_CONFIG, sub, args.reps)
            i = np.arange(n + 1, dtype=np.float64)
            target = np.minimum.outer(i, i)
        emp = (Y.T @ Y) / args.reps
        second = (Y ** 2).mean(axis=0)
        se = np.sqrt(np.maximum(np.outer(second, second) + target ** 2, 1e-300)
                     / args.reps)
        zmax = float(np.max(np.abs(emp - target) / np.maximum(se, 1e-12)))
        results[str(n)] = {"max_z": zmax}
        if zmax > 3.0:
            failures.append(f"covariance z-score {zmax:.2f} at n={n}")
    return results, failures


def _experiment_growth(args, src):
    plan = verify.ExperimentPlan(
        n_values=tuple(args.n), replicates=args.reps, seed=args.seed,
        scheme=args.scheme, dt=args.dt,
    )
    fit = verify.run_deviation_experiment(plan, threads=args.threads)
    failures = []
    if plan.scheme == "skorokhod":
        lo, hi = fit.trend["exponent_ci"]
        if not (0.2 <= fit.trend["exponent"] <= 0.3):
            failures.append("power-law exponent outside [0.2, 0.3]")
    else:
        lo, hi = fit.trend["ratio_slope_ci"]
        if lo > 0.0:
            failures.append("median/log n ratio trends upward")
    results = {
        "model": fit.model,
        "coefficients": list(fit.coefficients),
        "residual_rms": fit.residual_rms,
        "table": fit.table(),
        "trend": fit.trend,
        "tail": fit.tail,
    }
    rows = []
    for n in args.n:
        sub = src.split(f"n{n}")
        devs = verify.scheme_max_deviations(plan.scheme, n, args.reps, sub,
                                            dt=args.dt, threads=args.threads)
        rows.extend(
            (plan.scheme, n, r, float(d), sub.label())
            for r, d in enumerate(devs)
        )
    results["csv"] = {"header": ["scheme", "n", "replicate", "max_dev", "seed_path"]}
    return results, failures, rows


def _experiment_tails(args, src):
    n = args.n[-1]
    report = verify.tail_linearity(n, args.reps, src.split(f"n{n}"))
    failures = []
    if not report["within_bands"]:
        failures.append("log-tail leaves its bootstrap band")
    if not report["slope_negative"]:
        failures.append("log-tail slope is not negative")
    return {"tail": report}, failures


def _experiment_moments(args, src):
    thetas = args.theta_grid or [0.2]
    lambdas = args.lambda_grid or [0.1]
    results, failures = {"onestep": {}, "pinned": {}}, []
    ests, ses = [], []
    for n in args.n:
        rep = exp_moment_estimate("binomial", n, None, None, thetas, args.reps,
                                  src.split(f"onestep{n}"))
        results["onestep"][str(n)] = {
            "thetas": rep.params.tolist(),
            "estimates": rep.estimates.tolist(),
            "std_errors": rep.std_errors.tolist(),
            "failed": rep.failed.tolist(),
        }
        if np.any(rep.failed):
            failures.append(f"one-step moment overflow at n={n}")
        else:
            ests.append(rep.estimates[0])
            ses.append(rep.std_errors[0])
    for i in range(len(ests)):
        for j in range(i + 1, len(ests)):
            gap = abs(ests[i] - ests[j])
            tol = 5.0 * math.hypot(ses[i], ses[j])
            if gap >= tol:
                failures.append(
                    f"one-step moments at n={args.n[i]} and n={args.n[j]} "
                    f"differ by {gap:.4g} (> 5 SE)"
                )
    if ests:
        # smallest uniform-in-n bound consistent with the data
        results["onestep"]["kappa_hat"] = {
            "theta": thetas[0], "value": max(ests),
        }
    n = args.n[-1]
    a = args.endpoint if (n - args.endpoint) % 2 == 0 else args.endpoint + 1
    rep = verify.estimate_exp_max_moment(n, a, lambdas, args.reps,
                                         src.split("pinned"))
    results["pinned"] = {
        "n": n, "a": a,
        "lambdas": rep.params.tolist(),
        "estimates": rep.estimates.tolist(),
        "std_errors": rep.std_errors.tolist(),
        "failed": rep.failed.tolist(),
        "log_estimate_over_log_n": rep.derived["log_estimate_over_log_n"],
    }
    if np.any(rep.failed):
        failures.append("pinned max-moment overflow")
    step = max(2, (n // 4) & ~1)
    sweep = verify.exp_max_moment_endpoint_sweep(
        n, [0, step, 2 * step], lambdas[0], args.reps, src.split("sweep"))
    results["endpoint_sweep"] = sweep
    if sweep["slope"] < 0.0:
        failures.append("pinned max-moment decreases in the endpoint")
    return results, failures


def _experiment_stein(args, src):
    report = _stein_battery(max_n=min(args.n[-1], 10) if args.n else 10)
    failures = report.pop("failures")
    return report, failures


def cmd_verify(args) -> int:
    src = RandomSource(args.seed).split("verify").split(args.experiment)
    rows = None
    if args.experiment == "marginals":
        results, failures = _experiment_marginals(args, src)
    elif args.experiment == "covariance":
        results, failures = _experiment_covariance(args, src)
    elif args.experiment == "growth":
        results, failures, rows = _experiment_growth(args, src)
    elif args.experiment == "tails":
        results, failures = _experiment_tails(args, src)
    elif args.experiment == "moments":
        results, failures = _experiment_moments(args, src)
    elif args.experiment == "stein":
        results, failures = _experiment_stein(args, src)
    else:
        raise DomainError(f"unknown experiment {args.experiment!r}")

    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "verify",
        "experiment": args.experiment,
        "seed": args.seed,
        "params": {
            "n": args.n, "reps": args.reps, "scheme": args.scheme,
            "endpoint": args.endpoint,
            "lambda_grid": args.lambda_grid, "theta_grid": args.theta_grid,
        },
        "results": results,
        "pass": not failures,
        "failures": failures,
    }
    if rows is not None:
        payload["csv_header"] = ["scheme", "n", "replicate", "max_dev", "seed_path"]
        payload["csv_rows"] = rows
        if args.format == "json":
            payload.pop("csv_rows")
            payload.pop("csv_header")
    elif args.format == "csv":
        payload["csv_header"] = ["key", "value"]
        payload["csv_rows"] = [("pass", int(not failures))] + [
            ("failure", f) for f in failures
        ]
    _emit(payload, args.format, args.out)
    return EXIT_OK if not failures else EXIT_ASSERTION


# ---------------------------------------------------------------------------
# stein-check
# ---------------------------------------------------------------------------


def _stein_battery(max_n: int = 10, negative_control: bool = False) -> dict:
    densities = {
        "uniform": stein.uniform_density(),
        "triangular": stein.triangular_density(),
        "truncated-normal": stein.truncated_normal_density(),
    }
    battery = [
        ("x", lambda x: x, lambda x: 1.0, None),
        ("x^2", lambda x: x * x, lambda x: 2.0 * x, None),
        ("x^3", lambda x: x ** 3, lambda x: 3.0 * x * x, None),
        ("sin", math.sin, math.cos, None),
        ("clipped-linear", lambda x: min(1.0, max(-1.0, x)),
         lambda x: 1.0 if -1.0 < x < 1.0 else 0.0, (-1.0, 1.0)),
    ]
    failures = []
    continuous = {}
    for dname, dens in densities.items():
        h = stein.stein_h(dens)
        rows = {}
        for pname, phi, dphi, points in battery:
            res = stein.stein_identity_residual(dens, h.exact, phi, dphi,
                                                points=points)
            rows[pname] = res
            if res >= 1e-7:
                failures.append(f"identity residual {res:.3g} for {dname}/{pname}")
        continuous[dname] = rows

    discrete = {}
    for n in range(1, max_n + 1):
        worst = 0.0
        for coeffs in ([0.0, 1.0], [0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 1.0],
                       [0.0, 1.0, 0.0, 0.0, 1.0]):
            worst = max(worst, stein.discrete_identity_check(n, coeffs))
        discrete[str(n)] = worst
        if worst >= 1e-9:
            failures.append(f"discrete identity residual {worst:.3g} at n={n}")

    out = {
        "continuous_residuals": continuous,
        "discrete_residuals": discrete,
        "failures": failures,
    }
    if negative_control:
        dens = densities["uniform"]
        res = stein.stein_identity_residual(
            dens, lambda x: 1.0, lambda x: x ** 3, lambda x: 3.0 * x * x)
        out["negative_control_residual"] = res
        if res <= 1e-2:
            failures.append("negative control residual unexpectedly small")
        else:
            failures.append(
                f"negative control: wrong coefficient leaves residual {res:.3g}")
    return out


def cmd_stein_check(args) -> int:
    max_n = args.n[0] if args.n else 10
    if max_n > 12:
        raise DomainError("discrete enumeration supports n <= 12 only")
    report = _stein_battery(max_n=max_n, negative_control=args.negative_control)
    failures = report.pop("failures")
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "stein-check",
        "params": {"n": max_n, "negative_control": args.negative_control},
        "results": report,
        "pass": not failures,
        "failures": failures,
    }
    if args.format == "csv":
        rows = [("continuous", d, p, float(r))
                for d, byphi in report["continuous_residuals"].items()
                for p, r in byphi.items()]
        rows += [("discrete", n, "poly<=4", float(r))
                 for n, r in report["discrete_residuals"].items()]
        payload["csv_header"] = ["kind", "case", "phi", "residual"]
        payload["csv_rows"] = rows
    _emit(payload, args.format, args.out)
    return EXIT_OK if not failures else EXIT_ASSERTION


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strongcoupling",
        description="Samplers and verification harness for strong walk/Gaussian couplings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--threads", type=int, default=1)

    sim = sub.add_parser("simulate", help="draw one coupling and emit it")
    common(sim)
    sim.add_argument("--n", type=_comma_ints, required=True)
    sim.add_argument("--endpoint", type=int, default=0)
    sim.add_argument("--mode", choices=("bridge", "walk", "infinite"),
                     default="walk")
    sim.add_argument("--emit-paths", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run a named verification experiment")
    common(ver)
    ver.add_argument("--experiment", required=True,
                     choices=("marginals", "covariance", "growth", "tails",
                              "moments", "stein"))
    ver.add_argument("--n", type=_comma_ints, default=[64])
    ver.add_argument("--endpoint", type=int, default=0)
    ver.add_argument("--reps", type=int, default=1000)
    ver.add_argument("--scheme", default="kmt-recursive")
    ver.add_argument("--mode", choices=("bridge", "walk"), default="bridge")
    ver.add_argument("--lambda-grid", type=_comma_floats, default=None)
    ver.add_argument("--theta-grid", type=_comma_floats, default=None)
    ver.add_argument("--dt", type=float, default=1e-4)
    ver.set_defaults(func=cmd_verify)

    stc = sub.add_parser("stein-check", help="run the Stein identity battery")
    common(stc)
    stc.add_argument("--n", type=_comma_ints, default=None,
                     help="largest discrete enumeration size (<= 12)")
    stc.add_argument("--negative-control", action="store_true")
    stc.set_defaults(func=cmd_stein_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
