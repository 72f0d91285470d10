"""Command-line front end.

Subcommands: run (execute a config file), quadratic-report (per-curvature
regime table as CSV), align (gradient-Gram coverage curves), dynamics-check
(flow-discretization consistency suite), version.

Exit statuses: 0 success, 2 usage, 3 config, 4 numerical error,
10 diverged-by-design.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .dynamics import (AdemamixFlowConfig, DynamicsState, FlowParams,
                       ademamix_ode_residual, nesterov_forms_trace, rk4_flow,
                       semi_implicit_step)
from .harness import ConfigError, build_landscape, parse_config, run_experiment
from .landscapes import alignment_experiment, quadratic_landscape
from .quadratic import QuadraticSpec, analyze_mode

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4
EXIT_DIVERGED = 10


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flatopt",
                                     description="flat-direction optimizer experiments")
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("--config", required=True, help="path to a config file")

    p_q = sub.add_parser("quadratic-report",
                         help="per-curvature damping-regime table as CSV")
    p_q.add_argument("--alpha", type=float, required=True)
    p_q.add_argument("--beta", type=float, required=True)
    p_q.add_argument("--eta", type=float, required=True)
    p_q.add_argument("--lambda-min", type=float, required=True)
    p_q.add_argument("--lambda-max", type=float, required=True)
    p_q.add_argument("--points", type=int, required=True)

    p_a = sub.add_parser("align", help="gradient-Gram coverage curves for an MLP config")
    p_a.add_argument("--config", required=True)
    p_a.add_argument("--train-steps", type=int, default=100)
    p_a.add_argument("--d-s", type=int, default=4)
    p_a.add_argument("--k-grid", default="4,8,16",
                     help="comma-separated subspace sizes")

    sub.add_parser("dynamics-check", help="flow and discretization consistency suite")
    sub.add_parser("version", help="print the version")
    return parser


def _cmd_run(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = parse_config(text)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _, summary = run_experiment(config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    if summary["status"] == "diverged":
        print(summary["message"])
        return EXIT_DIVERGED
    print(f"ok steps={summary['steps_completed']} final_loss={summary['final_loss']:.17g}")
    return EXIT_OK


def _cmd_quadratic_report(args) -> int:
    if args.points < 1:
        print("error: --points must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    print("lambda,T,D,discriminant,regime,dominant_modulus")
    try:
        for lam in np.linspace(args.lambda_min, args.lambda_max, args.points):
            r = analyze_mode(float(lam), args.alpha, args.beta, args.eta)
            print(f"{r.lam:.17g},{r.T:.17g},{r.D:.17g},{r.discriminant:.17g},"
                  f"{r.regime},{r.dominant_modulus:.17g}")
    except (ValueError, ArithmeticError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_align(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as f:
            config = parse_config(f.read())
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if config.landscape_kind != "mlp":
        print("config error: align requires landscape.kind = mlp", file=sys.stderr)
        return EXIT_CONFIG
    try:
        k_grid = [int(part) for part in args.k_grid.split(",") if part.strip()]
    except ValueError:
        print(f"error: malformed --k-grid '{args.k_grid}'", file=sys.stderr)
        return EXIT_USAGE
    land = build_landscape(config)
    try:
        curves = alignment_experiment(land.spec, config.seed, args.train_steps,
                                      args.d_s, k_grid)
    except (ValueError, ArithmeticError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    print("block,side,k,coverage")
    for block in sorted(curves):
        for side in ("row", "col"):
            for k, cov in curves[block][side]:
                print(f"{block},{side},{k},{cov:.17g}")
    return EXIT_OK


def _cmd_dynamics_check() -> int:
    checks = []

    quad = QuadraticSpec(np.array([4.0, 1.0]), np.zeros(2))
    _, _, gap = nesterov_forms_trace(quad, 0.1, 0.01, 100)
    checks.append(("nesterov_forms_gap", gap, 1e-10))

    residual = ademamix_ode_residual(QuadraticSpec(np.array([1.0]), np.array([0.0])),
                                     AdemamixFlowConfig(0.1, 1e-3, 2.0, 0.05),
                                     np.linspace(0.0, 10.0, 101))
    checks.append(("ademamix_ode_residual", residual, 1e-8))

    land = quadratic_landscape(quad)
    params = FlowParams(alpha=0.2, beta=0.0, eta_of_t=0.05)
    state = DynamicsState(np.array([1.0, -1.0]), np.zeros(2))
    w = state.w.copy()
    m = state.m.copy()
    s = state
    for _ in range(25):
        s = semi_implicit_step(s, land, params, 1.0)
        g = land.grad(w)
        m = (1.0 - 0.2) * m + g
        w = w - 0.05 * (m + 0.0 * g)
    exact = float(np.abs(s.w - w).max() + np.abs(s.m - m).max())
    checks.append(("semi_implicit_h1_gap", exact, 0.0))

    ref = rk4_flow(state, land, params, 1.0)
    errs, hs = [], []
    for k in range(3, 7):
        h = 1.0 / 2 ** k
        cur = DynamicsState(state.w.copy(), state.m.copy())
        for _ in range(2 ** k):
            cur = semi_implicit_step(cur, land, params, h)
        errs.append(float(np.abs(cur.w - ref.w).max() + np.abs(cur.m - ref.m).max()))
        hs.append(h)
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    checks.append(("discretization_order_slope", slope, (0.8, 1.2)))

    ok = True
    print("check,value,bound,status")
    for name, value, bound in checks:
        if isinstance(bound, tuple):
            passed = bound[0] <= value <= bound[1]
            bound_text = f"[{bound[0]};{bound[1]}]"
        else:
            passed = value <= bound
            bound_text = f"{bound:.17g}"
        ok = ok and passed
        print(f"{name},{value:.17g},{bound_text},{'pass' if passed else 'fail'}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "quadratic-report":
        return _cmd_quadratic_report(args)
    if args.command == "align":
        return _cmd_align(args)
    if args.command == "dynamics-check":
        return _cmd_dynamics_check()
    print(__version__)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
