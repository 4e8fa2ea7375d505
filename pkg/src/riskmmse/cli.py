"""Command-line front end.

Exit codes: 0 on success; 2 on usage errors, including unreadable or
invalid model files; 1 on runtime failures (quadrature breakdown,
infeasible tolerance), printing the error class name to stderr. Every
command that samples requires an explicit --seed, so identical argv
reproduces identical output bytes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .dual import OuterIntegrator, solve_mu
from .errors import InvalidParameter, RiskMmseError, UnknownKind
from .estimator import risk_aware_estimate, risk_aware_solution, stein_diagnostic
from .experiments import default_mu_grid, posterior_profile, sweep_mu, write_csv
from .models import DiscreteModel, load_model
from .oracle import OracleConfig, desk_fixtures, discrete_dual_oracle, lagrangian_bruteforce
from .posterior import QuadratureConfig, conditional_median, posterior_moments

__all__ = ["run_cli", "main"]


class _Usage(Exception):
    pass


def _load(path: str):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise _Usage(f"model file not found: {path}") from None
    except IsADirectoryError:
        raise _Usage(f"model path is a directory, not a file: {path}") from None
    except json.JSONDecodeError as exc:
        raise _Usage(f"model file {path} is not valid JSON: {exc}") from None
    except (UnknownKind, InvalidParameter) as exc:
        raise _Usage(f"model file {path} is invalid: {exc}") from None


def _quad(args) -> QuadratureConfig | None:
    if getattr(args, "nodes", None) is None:
        return None
    try:
        return QuadratureConfig(nodes_per_dim=args.nodes)
    except InvalidParameter as exc:
        raise _Usage(str(exc)) from None


def _threads(args) -> int | None:
    val = getattr(args, "threads", None)
    if val is None:
        env = os.environ.get("RISKMMSE_THREADS")
        if env is None:
            return None
        try:
            val = int(env)
        except ValueError:
            raise _Usage(f"RISKMMSE_THREADS must be an integer, got {env!r}") from None
    if val < 1:
        raise _Usage(f"--threads must be >= 1, got {val}")
    return val


def _integ_for(model, args) -> OuterIntegrator:
    mode = getattr(args, "mode", None)
    if mode is None:
        mode = "discrete_exact" if isinstance(model, DiscreteModel) else "monte_carlo"
    try:
        if mode == "monte_carlo":
            if args.seed is None:
                raise _Usage("--seed is required when sampling (monte_carlo mode)")
            return OuterIntegrator(mode=mode, n_outer=args.samples, seed=args.seed)
        return OuterIntegrator(mode=mode, n_outer=args.samples)
    except InvalidParameter as exc:
        raise _Usage(str(exc)) from None


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)


# -- subcommands -------------------------------------------------------------


def _cmd_estimate(args) -> int:
    model = _load(args.model)
    quad = _quad(args)
    if args.mu is not None and args.mu < 0.0:
        raise _Usage(f"--mu must be nonnegative, got {args.mu}")
    report = None
    if args.epsilon is not None:
        integ = _integ_for(model, args)
        report = solve_mu(model, args.epsilon, tol=args.tol, mu_cap=args.mu_cap,
                          integ=integ, quad=quad, threads=_threads(args))
        mu = report.mu_star
    else:
        mu = args.mu
    moments = posterior_moments(model, args.y, quad)
    sol = risk_aware_solution(moments, mu)
    medians = [conditional_median(model, args.y, c, quad)
               for c in range(model.state_dim)]
    out = {
        "y": [float(v) for v in args.y],
        "mu": float(mu),
        "xhat": [float(v) for v in sol.xhat],
        "cond_mse": sol.cond_mse,
        "cond_risk": sol.cond_risk,
        "mmse": [float(v) for v in moments.m1],
        "mmae": [float(v) for v in medians],
    }
    if report is not None:
        out["kkt"] = report.as_dict()
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def _cmd_profile(args) -> int:
    model = _load(args.model)
    if args.mu < 0.0:
        raise _Usage(f"--mu must be nonnegative, got {args.mu}")
    points, markers, stats = posterior_profile(
        model, args.y, args.mu, grid_points=args.grid_points,
        quad=_quad(args), component=args.component)
    doc = {
        "grid": [{"x": p.x, "density": p.density} for p in points],
        "markers": markers,
        "stats": stats,
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def _cmd_sweep(args) -> int:
    model = _load(args.model)
    if args.grid_log is not None:
        lo, hi, k = args.grid_log
        k = int(k)
        if not (0.0 < lo < hi) or k < 1:
            raise _Usage("--grid-log expects 0 < LO < HI and K >= 1")
        grid = [0.0] + [float(v) for v in
                        np.logspace(math.log10(lo), math.log10(hi), k)]
    elif args.grid is not None:
        grid = [float(v) for v in args.grid]
        if any(v < 0.0 for v in grid) or any(b < a for a, b in zip(grid, grid[1:])):
            raise _Usage("--grid values must be nonnegative and sorted ascending")
    else:
        grid = default_mu_grid()
    integ = _integ_for(model, args)
    rows = sweep_mu(model, grid, integ, _quad(args), _threads(args))
    write_csv(rows, args.out)
    return 0


def _cmd_solve_dual(args) -> int:
    model = _load(args.model)
    if args.epsilon <= 0.0:
        raise _Usage(f"--epsilon must be positive, got {args.epsilon}")
    integ = _integ_for(model, args)
    report = solve_mu(model, args.epsilon, tol=args.tol, mu_cap=args.mu_cap,
                      integ=integ, quad=_quad(args), threads=_threads(args))
    _emit(json.dumps(report.as_dict(), indent=2) + "\n", args.out)
    return 0


def _cmd_oracle_check(args) -> int:
    cfg = OracleConfig()
    mu_set = (0.0, 0.1, 1.0, 10.0)
    lines = [f"{'fixture':<20} {'max|dx|':>12} {'|gap|':>12} {'|dmu|':>12} {'status':>8}"]
    all_ok = True
    for name, model, eps in desk_fixtures():
        marginal = model.marginal_y()
        max_dx = 0.0
        for j in np.nonzero(marginal > 0.0)[0]:
            mom = posterior_moments(model, model.y[j])
            for mu in mu_set:
                diff = lagrangian_bruteforce(mom, mu, cfg) - risk_aware_estimate(mom, mu)
                max_dx = max(max_dx, float(np.max(np.abs(diff))))
        mu_o, primal, dual_v = discrete_dual_oracle(model, eps, cfg)
        report = solve_mu(model, eps)
        gap = abs(primal - dual_v)
        dmu = abs(report.mu_star - mu_o)
        ok = max_dx <= 1e-5 and gap <= 1e-4 and dmu <= 1e-4
        all_ok = all_ok and ok
        lines.append(f"{name:<20} {max_dx:>12.3e} {gap:>12.3e} {dmu:>12.3e} "
                     f"{'PASS' if ok else 'FAIL':>8}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if all_ok else 1


def _cmd_moments(args) -> int:
    model = _load(args.model)
    mom = posterior_moments(model, args.y, _quad(args))
    diag = stein_diagnostic(mom)
    out = {
        "y": [float(v) for v in args.y],
        "m1": [float(v) for v in mom.m1],
        "sigma": [[float(v) for v in row] for row in mom.sigma],
        "s2": mom.s2,
        "m3": [float(v) for v in mom.m3],
        "v4": mom.v4,
        "mass": mom.mass,
        "b": [float(v) for v in diag.b],
        "stein_gap_norm": diag.gap_norm,
    }
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


# -- parser ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="riskmmse",
        description="Risk-aware estimation: closed-form estimates, multiplier "
                    "solves, trade-off sweeps, and brute-force cross-checks.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap (falls back to RISKMMSE_THREADS)")
    common.add_argument("--nodes", type=int, default=None,
                        help="quadrature nodes per dimension")
    common.add_argument("--out", default=None,
                        help="write output to this file instead of stdout")

    outer = argparse.ArgumentParser(add_help=False)
    outer.add_argument("--samples", type=int, default=2000,
                       help="observations for the outer expectation")
    outer.add_argument("--seed", type=int, default=None,
                       help="sampling seed (required for monte_carlo)")
    outer.add_argument("--mode", default=None,
                       choices=["monte_carlo", "y_quadrature", "discrete_exact"],
                       help="outer integrator (default: discrete_exact for "
                            "discrete models, monte_carlo otherwise)")

    p = sub.add_parser("estimate", parents=[common, outer],
                       help="estimate the state at one observation")
    p.add_argument("--model", required=True)
    p.add_argument("--y", type=float, nargs="+", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--mu", type=float, help="multiplier value")
    group.add_argument("--epsilon", type=float,
                       help="risk tolerance; solves for the multiplier first")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--mu-cap", type=float, default=1e8)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("profile", parents=[common],
                       help="posterior density profile with estimator markers")
    p.add_argument("--model", required=True)
    p.add_argument("--y", type=float, nargs="+", required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--component", type=int, default=0)
    p.add_argument("--grid-points", type=int, default=1024)
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("sweep", parents=[common, outer],
                       help="MSE/risk trade-off over a multiplier grid, as CSV")
    p.add_argument("--model", required=True)
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--grid-log", type=float, nargs=3, metavar=("LO", "HI", "K"),
                      help="K log-spaced multipliers in [LO, HI], plus mu = 0")
    grid.add_argument("--grid", type=float, nargs="+",
                      help="explicit sorted multiplier grid")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("solve-dual", parents=[common, outer],
                       help="solve for the optimal multiplier; print the KKT report")
    p.add_argument("--model", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--mu-cap", type=float, default=1e8)
    p.set_defaults(func=_cmd_solve_dual)

    p = sub.add_parser("oracle-check", parents=[common],
                       help="brute-force validation table on built-in fixtures")
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("moments", parents=[common],
                       help="posterior moments at one observation")
    p.add_argument("--model", required=True)
    p.add_argument("--y", type=float, nargs="+", required=True)
    p.set_defaults(func=_cmd_moments)

    return ap


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RiskMmseError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))
