"""Command-line front end.

Subcommands: solve (Gauss-Newton on the shooting residual), check-ssc
(coercivity plus necessary-structure and Legendre reports), sweep
(multistart basin study), validate (derivative checks), plot (trajectory
dump for gnuplot).  Reports are JSON, sweeps are CSV; schemas are
documented in docs/schemas.md.

Exit codes: 0 success, 1 failed check, 2 no convergence, 3 singular
normal matrix, 64 usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .errors import (
    InsufficientData,
    NoConvergence,
    ParshootError,
    SingularNormalMatrix,
)
from .integrate import DEFAULT_GRID_N
from .model import get_setup, negate_setup, validate_problem
from .shooting import convergence_order, gauss_newton, make_shooting_map
from .ssc import coercivity_check

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_NO_CONVERGENCE = 2
EXIT_SINGULAR = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_solver_flags(sub):
    sub.add_argument("--problem", required=True, help="registered problem name")
    sub.add_argument("--grid", type=int, default=DEFAULT_GRID_N,
                     help="number of integration steps")
    sub.add_argument("--scheme", choices=("implicit-euler", "rk4"),
                     default="implicit-euler")
    sub.add_argument("--tol", type=float, default=1e-10,
                     help="Gauss-Newton stopping tolerance on the residual sup norm")
    sub.add_argument("--max-iter", type=int, default=30)
    sub.add_argument("--out", default=None, help="output file (default stdout)")


def build_parser():
    parser = _Parser(prog="parshoot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)

    solve = subs.add_parser("solve", help="Gauss-Newton on the shooting residual")
    _common_solver_flags(solve)
    solve.add_argument("--nu0", default=None,
                       help="comma-separated initial guess (default zeros); "
                            "write --nu0=-0.5,0.7 for a leading minus")

    ssc = subs.add_parser("check-ssc", help="second-order sufficiency check")
    _common_solver_flags(ssc)
    ssc.set_defaults(grid=200)
    ssc.add_argument("--nu0", default=None,
                     help="comma-separated initial guess (default zeros); "
                          "write --nu0=-0.5,0.7 for a leading minus")
    ssc.add_argument("--negate-cost", action="store_true",
                     help="flip the cost sign (diagnostic)")

    sweep = subs.add_parser("sweep", help="multistart basin study")
    _common_solver_flags(sweep)
    sweep.add_argument("--multistart", type=int, required=True, metavar="K")
    sweep.add_argument("--box", default="-1,1",
                       help="lo,hi bounds of the uniform start box")
    sweep.add_argument("--seed", type=int, default=0)

    val = subs.add_parser("validate", help="finite-difference derivative checks")
    val.add_argument("--problem", required=True)
    val.add_argument("--samples", type=int, default=20)
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--out", default=None)

    plot = subs.add_parser("plot", help="gnuplot-ready trajectory dump")
    plot.add_argument("--problem", default=None)
    plot.add_argument("--nu0", default=None)
    plot.add_argument("--grid", type=int, default=DEFAULT_GRID_N)
    plot.add_argument("--scheme", choices=("implicit-euler", "rk4"),
                      default="implicit-euler")
    plot.add_argument("--traj", default=None,
                      help="dump a previously exported trajectory JSON instead")
    plot.add_argument("--out", default=None)
    return parser


def _fail_usage(parser, message):
    parser.exit(EXIT_USAGE, f"parshoot: error: {message}\n")


def _resolve_setup(parser, name):
    try:
        return get_setup(name)
    except KeyError as exc:
        _fail_usage(parser, str(exc))


def _parse_nu0(parser, text, dim):
    if text is None:
        return np.zeros(dim)
    try:
        values = np.array([float(tok) for tok in text.replace(",", " ").split()])
    except ValueError:
        _fail_usage(parser, f"could not parse --nu0 {text!r}")
    if values.size != dim:
        _fail_usage(parser, f"--nu0 has {values.size} entries, expected {dim}")
    return values


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(out, "w") as handle:
            handle.write(text)


def _meta(args, seed=None):
    return {
        "problem": args.problem,
        "grid_n": args.grid,
        "scheme": args.scheme,
        "tol": args.tol,
        "seed": seed,
        "version": __version__,
    }


def cmd_solve(parser, args):
    setup = _resolve_setup(parser, args.problem)
    smap = make_shooting_map(setup)
    nu0 = _parse_nu0(parser, args.nu0, smap.dim)
    report = gauss_newton(smap, nu0, args.grid, args.scheme, tol=args.tol,
                          max_iter=args.max_iter, raise_on_failure=False)
    payload = report.to_dict()
    payload.update(_meta(args))
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.out)
    if report.status == "singular-normal-matrix":
        return EXIT_SINGULAR
    if report.status != "converged":
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_check_ssc(parser, args):
    setup = _resolve_setup(parser, args.problem)
    if args.negate_cost:
        setup = negate_setup(setup)
    smap = make_shooting_map(setup)
    nu0 = _parse_nu0(parser, args.nu0, smap.dim)
    solve_report = gauss_newton(smap, nu0, args.grid, args.scheme, tol=args.tol,
                                max_iter=args.max_iter, raise_on_failure=False)
    if solve_report.status == "singular-normal-matrix":
        _emit(json.dumps({"error": "singular normal matrix",
                          **_meta(args)}, indent=2, sort_keys=True), args.out)
        return EXIT_SINGULAR
    if not solve_report.converged:
        _emit(json.dumps({"error": "base solution did not converge",
                          "residual_norm": solve_report.residual_norms[-1],
                          **_meta(args)}, indent=2, sort_keys=True), args.out)
        return EXIT_NO_CONVERGENCE

    traj = smap.propagate(solve_report.nu, args.grid, args.scheme)
    lam = smap.multiplier(solve_report.nu, traj)
    report = coercivity_check(setup.problem, traj, lam)
    payload = report.to_dict()
    payload.update(_meta(args))
    payload["solve"] = {
        "status": solve_report.status,
        "iterations": solve_report.iterations,
        "residual_norm": solve_report.residual_norms[-1],
        "nu": np.asarray(solve_report.nu).tolist(),
    }
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.out)
    return EXIT_OK if report.coercive else EXIT_FAILED_CHECK


def _sweep_worker(task):
    smap, nu0, grid, scheme, tol, max_iter = task
    try:
        report = gauss_newton(smap, nu0, grid, scheme, tol=tol,
                              max_iter=max_iter, raise_on_failure=False)
    except ParshootError:
        # a start the solver could not even evaluate counts as a miss
        return False, 0, None
    try:
        order = convergence_order(report, report.nu) if report.converged else None
    except InsufficientData:
        order = None
    return report.converged, report.iterations, order


def cmd_sweep(parser, args):
    setup = _resolve_setup(parser, args.problem)
    smap = make_shooting_map(setup)
    try:
        lo, hi = (float(tok) for tok in args.box.split(","))
    except ValueError:
        _fail_usage(parser, f"could not parse --box {args.box!r} (expected lo,hi)")
    rng = np.random.default_rng(args.seed)
    starts = rng.uniform(lo, hi, size=(args.multistart, smap.dim))

    workers = int(os.environ.get("PARSHOOT_THREADS", 0)) or os.cpu_count() or 1
    tasks = [(smap, starts[i], args.grid, args.scheme, args.tol, args.max_iter)
             for i in range(args.multistart)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_sweep_worker, tasks))

    lines = [
        f"# problem={args.problem} grid={args.grid} scheme={args.scheme} "
        f"tol={args.tol:g} seed={args.seed} version={__version__}",
        ",".join([f"nu0_{j}" for j in range(smap.dim)]
                 + ["converged", "iterations", "order"]),
    ]
    n_ok = 0
    orders = []
    for i, (converged, iterations, order) in enumerate(results):
        n_ok += converged
        if order is not None:
            orders.append(order)
        row = [f"{starts[i, j]:.17g}" for j in range(smap.dim)]
        row += ["1" if converged else "0", str(iterations),
                f"{order:.6g}" if order is not None else ""]
        lines.append(",".join(row))
    median = f"{np.median(orders):.6g}" if orders else "nan"
    lines.append(f"# success {n_ok}/{args.multistart} median_order {median}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_validate(parser, args):
    setup = _resolve_setup(parser, args.problem)
    report = validate_problem(setup.problem, samples=args.samples, seed=args.seed)
    payload = report.to_dict()
    payload.update({"schema": "parshoot/validation-report/v1",
                    "grid_n": None, "scheme": None, "version": __version__})
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.out)
    return EXIT_OK if report.passed else EXIT_FAILED_CHECK


def cmd_plot(parser, args):
    from .model import TrajectoryGrid

    if args.traj is not None:
        with open(args.traj) as handle:
            traj = TrajectoryGrid.from_json(handle.read())
        name = args.traj
    else:
        if args.problem is None:
            _fail_usage(parser, "plot needs --problem or --traj")
        setup = _resolve_setup(parser, args.problem)
        smap = make_shooting_map(setup)
        nu0 = _parse_nu0(parser, args.nu0, smap.dim)
        traj = smap.propagate(nu0, args.grid, args.scheme)
        name = args.problem
    n, l, m = traj.x.shape[1], traj.u.shape[1], traj.v.shape[1]
    header = ["t"] + [f"x{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)]
    header += [f"u{i+1}" for i in range(l)] + [f"v{i+1}" for i in range(m)]
    lines = [f"# {name}", "# " + " ".join(header)]
    for k in range(len(traj.times)):
        row = np.concatenate([[traj.times[k]], traj.x[k], traj.p[k],
                              traj.u[k], traj.v[k]])
        lines.append(" ".join(f"{val:.17g}" for val in row))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


_COMMANDS = {
    "solve": cmd_solve,
    "check-ssc": cmd_check_ssc,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "plot": cmd_plot,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](parser, args)
    except ParshootError as exc:
        sys.stderr.write(f"parshoot: {exc}\n")
        if isinstance(exc, SingularNormalMatrix):
            return EXIT_SINGULAR
        if isinstance(exc, NoConvergence):
            return EXIT_NO_CONVERGENCE
        return EXIT_FAILED_CHECK


if __name__ == "__main__":
    sys.exit(main())
