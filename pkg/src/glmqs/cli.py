"""Command line entry point (``glmqs``).

Exit status: 0 success, 1 a verification or tolerance check failed, 2 usage
error (bad flags, unreadable input files).
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import tableau_io
from ._accel import backend_name
from .construct import (
    ConstructionFailure, FREE_V_ENTRY, InfeasibleBox, SearchBox, certify_published,
    optimize_error_constant,
)
from .harness import ReferenceFailure, StudySpec, run_study
from .integrator import integrate
from .problems import make_problem, problem_defaults
from .solver import StageFailure
from .linear import FactorizationError
from .stability import check_l_stability, check_quadratic_form, scan_a_stability
from .tableau import (
    BUILTIN_NAMES, PRINTED_ERROR_CONSTANTS, DegenerateTableauError, TableauError, UnknownMethodError,
    builtin_tableau, error_constant, iqs_tolerance, order_condition_residual, order_tolerance,
    verify_iqs,
)

OK, FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _g(x):
    return "%.17g" % x


def _emit(pairs, out):
    for key, val in pairs:
        out.write(f"{key} = {val}\n")


def _load_tableau(target):
    if target.upper() in BUILTIN_NAMES:
        return builtin_tableau(target)
    path = Path(target)
    if not path.exists():
        raise UsageError(f"{target!r} is neither a built-in method ({', '.join(BUILTIN_NAMES)}) nor a file")
    return tableau_io.load(path)


def _status(ok):
    return "pass" if ok else "FAIL"


def cmd_verify(args, out):
    try:
        tab = _load_tableau(args.target)
    except TableauError as exc:
        out.write(f"invalid tableau: {exc}\n")
        return FAILED
    d = tab.coeff_digits
    orders = order_condition_residual(tab)
    iqs = verify_iqs(tab)
    order_ok = orders.max <= order_tolerance(d)
    iqs_ok = iqs.residual <= iqs_tolerance(d)
    pairs = [
        ("method", tab.name), ("p", tab.p), ("coeff_digits", d),
        ("order.stage_residual", _g(orders.stage)), ("order.output_residual", _g(orders.output)),
        ("order.tolerance", _g(order_tolerance(d))), ("order.status", _status(order_ok)),
        ("iqs.residual_BA", _g(iqs.residual_BA)), ("iqs.residual_BU", _g(iqs.residual_BU)),
        ("iqs.x_last_column", " ".join(_g(x) for x in iqs.X[2:, -1])),
        ("iqs.tolerance", _g(iqs_tolerance(d))), ("iqs.status", _status(iqs_ok)),
    ]
    try:
        ec = error_constant(tab)
        pairs.append(("error_constant", _g(ec.E)))
    except DegenerateTableauError as exc:
        pairs.append(("error_constant", f"undefined ({exc})"))
    if tab.name in PRINTED_ERROR_CONSTANTS:
        pairs.append(("error_constant.printed", _g(PRINTED_ERROR_CONSTANTS[tab.name])))
    _emit(pairs, out)
    return OK if order_ok and iqs_ok else FAILED


def cmd_stability(args, out):
    tab = _load_tableau(args.target)
    scan = scan_a_stability(tab, n_points=args.grid_points, y_max=args.y_max)
    linf = check_l_stability(tab)
    qf = check_quadratic_form(tab)
    _emit([
        ("method", tab.name), ("grid_points", len(scan.ys)), ("y_max", _g(args.y_max)),
        ("a_stability.worst_radius", _g(scan.worst_radius)),
        ("a_stability.worst_omega", f"{_g(scan.worst_omega.real)}{scan.worst_omega.imag:+.17g}j"),
        ("a_stability.radius_inf", _g(scan.radius_inf)), ("a_stability.status", _status(scan.stable)),
        ("l_stability.radius_inf", _g(linf.radius_inf)), ("l_stability.radius_tol", _g(linf.radius_tol)),
        ("l_stability.p1r", _g(linf.p1r)), ("l_stability.p0r", _g(linf.p0r)),
        ("l_stability.coeff_tol", _g(linf.coeff_tol)), ("l_stability.status", _status(linf.passed)),
        ("quadratic_form.max_spurious", _g(qf.max_spurious_eigenvalue)),
        ("quadratic_form.status", _status(qf.passed)),
    ], out)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("y,spectral_radius\n")
            for y, rho in zip(scan.ys, scan.radii):
                fh.write(f"{_g(y)},{_g(rho)}\n")
    return OK if scan.stable and linf.passed and qf.passed else FAILED


def _parse_params(items):
    params = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        params[key.strip()] = yaml.safe_load(val)
    return params


def cmd_integrate(args, out):
    tab = _load_tableau(args.method)
    try:
        sys_ = make_problem(args.problem, **_parse_params(args.param))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t0 = sys_.t0 if args.t0 is None else args.t0
    T = sys_.t_end if args.tend is None else args.tend
    try:
        res = integrate(tab, sys_, t0, T, args.steps, store=bool(args.store_trajectory))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    except (StageFailure, FactorizationError) as exc:
        out.write(f"integration failed: {exc}\n")
        return FAILED
    _emit([
        ("method", tab.name), ("problem", sys_.name), ("t0", _g(t0)), ("T", _g(res.t_end)),
        ("steps", res.stats.steps), ("newton_iters", res.stats.newton_iters),
        ("jacobian_evals", res.stats.jacobian_evals), ("rhs_evals", res.stats.rhs_evals),
        ("backend", backend_name()), ("y_end.norm2", _g(np.linalg.norm(res.y_end))),
    ], out)
    if sys_.dim <= 8:
        out.write("y_end = " + " ".join(_g(v) for v in res.y_end) + "\n")
    if args.store_trajectory:
        with open(args.store_trajectory, "w") as fh:
            fh.write("t," + ",".join(f"y{i}" for i in range(sys_.dim)) + "\n")
            for st in res.states:
                fh.write(_g(st.t) + "," + ",".join(_g(v) for v in st.blocks[0]) + "\n")
    return OK


def cmd_convergence(args, out):
    try:
        spec = StudySpec.from_file(args.spec)
    except FileNotFoundError:
        raise UsageError(f"study file {args.spec!r} not found") from None
    except (ValueError, TypeError, yaml.YAMLError) as exc:
        raise UsageError(f"{args.spec}: {exc}") from None
    if args.output_dir:
        spec.output_dir = args.output_dir
    try:
        rows, ref = run_study(spec)
    except ReferenceFailure as exc:
        out.write(f"reference failed: {exc}\n")
        return FAILED
    out.write("method,N,h,error,observed_p\n")
    for r in rows:
        obs = "" if r.observed_p is None else _g(r.observed_p)
        out.write(f"{r.method},{r.N},{_g(r.h)},{_g(r.error)},{obs}\n")
    out.write(f"# outputs in {spec.output_dir}\n")
    return FAILED if any(r.failure for r in rows) else OK


def cmd_construct(args, out):
    try:
        with open(args.bounds) as fh:
            data = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise UsageError(f"bounds file {args.bounds!r} not found") from None
    vname = FREE_V_ENTRY[args.order][0]
    try:
        box = SearchBox(tuple(map(float, data["lambda"])), tuple(map(float, data[vname])))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.bounds}: need 'lambda' and '{vname}' intervals ({exc})") from None
    opts = {k: int(data[k]) for k in ("grid_points", "scan_points", "max_evals") if k in data}
    try:
        result = optimize_error_constant(args.order, box, **opts)
    except (InfeasibleBox, ConstructionFailure) as exc:
        out.write(f"construction failed: {exc}\n")
        return FAILED
    target = Path(args.output or f"constructed_p{args.order}.yaml")
    tableau_io.save(result.tableau, target)
    for line in result.summary_lines():
        out.write(line + "\n")
    out.write(f"evaluations = {len(result.optimizer_trace)}\n")
    out.write(f"tableau_file = {target}\n")
    return OK if result.feasible else FAILED


def cmd_certify(args, out):
    try:
        result = certify_published(args.method)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for line in result.summary_lines():
        out.write(line + "\n")
    passed = result.optimizer_trace[0]["passed"]
    return OK if all(passed.values()) else FAILED


def cmd_list_problems(args, out):
    for name, defaults in problem_defaults().items():
        out.write(f"{name}:\n")
        for key, val in defaults.items():
            out.write(f"  {key} = {val!r}\n")
    out.write("synthetic: dahlquist(zeta), polynomial(degree), prothero_robinson(zeta)\n")
    return OK


def build_parser():
    parser = argparse.ArgumentParser(prog="glmqs", description="GLM with inherent quadratic stability toolkit")
    parser.add_argument("--list-problems", action="store_true", help="print benchmark problems and defaults")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("verify", help="order conditions, IQS certificate and error constant")
    p.add_argument("target", help="built-in name or tableau file")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stability", help="A-, L- and quadratic-form stability checks")
    p.add_argument("target")
    p.add_argument("--grid-points", type=int, default=2048)
    p.add_argument("--y-max", type=float, default=1e9)
    p.add_argument("--csv", help="write (y, spectral_radius) samples")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("integrate", help="fixed-step integration of a benchmark problem")
    p.add_argument("--method", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--t0", type=float)
    p.add_argument("--tend", type=float)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="problem parameter override")
    p.add_argument("--store-trajectory", metavar="PATH.csv")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("convergence", help="run a convergence study from a YAML spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("construct", help="minimize the error constant for p = 1 or 2")
    p.add_argument("--order", type=int, choices=(1, 2), required=True)
    p.add_argument("--bounds", required=True, help="YAML with lambda and v12/v13 intervals")
    p.add_argument("--output", help="tableau file to write")
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("certify", help="full verification of a built-in method")
    p.add_argument("--method", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("list-problems", help="print benchmark problems and defaults")
    p.set_defaults(func=cmd_list_problems)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    if args.list_problems and args.command is None:
        return cmd_list_problems(args, out)
    if args.command is None:
        parser.print_help(sys.stderr)
        return USAGE
    try:
        return args.func(args, out)
    except (UsageError, UnknownMethodError, TableauError) as exc:
        sys.stderr.write(f"glmqs: error: {exc}\n")
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
