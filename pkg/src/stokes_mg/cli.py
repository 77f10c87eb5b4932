"""Command line entry point: ``stokes-mg <subcommand> ...``.

Subcommands
-----------
solve                   one manufactured solve, summary on stdout, report as JSON
convergence             degree x level study written as CSV (and optionally JSON)
compare-local-solvers   Schur-complement and direct local solvers side by side
perf                    DoF/s of operator apply, smoothing and full solve
verify                  dense cross-check suite, one PASS/FAIL line per check

The exit status is 0 on success and 1 if a solve or a check failed.
"""
import argparse
import logging
import sys

import numpy as np

log = logging.getLogger("stokes_mg")


def _int_range(text):
    """Parse ``A..B`` (inclusive) or a single integer."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    return [int(text)]


def _add_problem_args(p, single=True):
    p.add_argument("--dim", type=int, choices=(2, 3), required=True)
    if single:
        p.add_argument("--degree", type=int, required=True, help="RT degree k >= 1")
    p.add_argument("--local-solver", choices=("schur", "direct"), default="schur")
    p.add_argument("--precision", choices=("double", "mixed"), default="double")
    p.add_argument("--tol", type=float, default=1e-8, help="relative GMRES tolerance")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--coloring", choices=("parity", "separated"), default="parity")
    p.add_argument("--cg-tol", type=float, default=1e-12)


def build_parser():
    parser = argparse.ArgumentParser(prog="stokes-mg", description=__doc__.split("\n")[0])
    parser.add_argument("--seed", type=int, default=0, help="seed for all random data")
    parser.add_argument("--threads", type=int, default=None,
                        help="limit BLAS threads (needs threadpoolctl)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the manufactured problem once")
    _add_problem_args(p)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out", help="write the full report as JSON")

    p = sub.add_parser("convergence", help="run a degree x level study")
    _add_problem_args(p, single=False)
    p.add_argument("--degree-range", type=_int_range, required=True, metavar="A..B")
    p.add_argument("--level-range", type=_int_range, required=True, metavar="A..B")
    p.add_argument("--out", required=True, help="CSV table")
    p.add_argument("--json", help="also write the per-solve reports as JSON")

    p = sub.add_parser("compare-local-solvers", help="Schur vs direct local solver")
    p.add_argument("--dim", type=int, choices=(2, 3), required=True)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--level-range", type=_int_range, required=True, metavar="A..B")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("perf", help="throughput report")
    p.add_argument("--dim", type=int, choices=(2, 3), required=True)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--out", help="JSON report")

    sub.add_parser("verify", help="dense cross-check suite")
    return parser


def _print_row(row):
    print(f"dim={row['dim']} k={row['degree']} L={row['level']} dofs={row['dofs']} "
          f"its={row['iterations']} nu={row['nu']:.2f} err_u={row['err_u']:.3e} "
          f"err_p={row['err_p']:.3e} time={row['time_total_s']:.1f}s", flush=True)


def _solver_options(args):
    return dict(scheme=args.coloring, cg_tol=args.cg_tol, max_iter=args.max_iter)


def cmd_solve(args):
    from .harness import run_solve, write_json
    from .solver import ConvergenceError
    try:
        _, report = run_solve(args.dim, args.degree, args.level, args.local_solver, args.precision,
                              args.tol, args.sigma, args.mu, **_solver_options(args))
    except ConvergenceError as exc:
        print(f"FAILED: {exc}", file=sys.stderr)
        if args.out and exc.report is not None:
            write_json(exc.report.to_dict(), args.out)
        return 1
    e = report.extra
    print(f"dofs={report.dofs} iterations={report.iterations} nu={report.nu:.2f} "
          f"rel_res={report.relative_residual:.2e}")
    print(f"err_u={e['err_u']:.4e} err_p={e['err_p']:.4e} div_ratio={e['div_ratio']:.2e}")
    print(f"time setup={report.times['setup']:.2f}s solve={report.times['solve']:.2f}s "
          f"dofs/s={report.dofs_per_second:.3g} mean_cg={e['mean_cg_iterations']:.1f}")
    if args.out:
        write_json(report.to_dict(), args.out)
    return 0


def cmd_convergence(args):
    from .harness import run_convergence_study
    rows, _ = run_convergence_study(args.dim, args.degree_range, args.level_range,
                                    args.local_solver, args.precision, args.tol, args.sigma,
                                    args.mu, csv_path=args.out, json_path=args.json,
                                    log=_print_row, **_solver_options(args))
    failed = [r for r in rows if not np.isfinite(r["nu"])]
    return 1 if failed else 0


def cmd_compare(args):
    from .harness import compare_local_solvers
    rows = compare_local_solvers(args.dim, args.degree, args.level_range, args.tol,
                                 csv_path=args.out, log=_print_row)
    return 1 if any(not np.isfinite(r["nu"]) for r in rows) else 0


def cmd_perf(args):
    from .harness import perf_report, write_json
    rep = perf_report(args.dim, args.degree, args.level, args.reps, args.warmup)
    print(f"dofs={rep['dofs']}")
    for key in ("operator_apply", "smoothing_pass", "solve"):
        print(f"{key:15s} {rep[key]['seconds']:.4f}s  {rep[key]['dofs_per_s']:.3g} DoF/s")
    if args.out:
        write_json(rep, args.out)
    return 0


def cmd_verify(args):
    from .verification import run_all
    results = run_all(seed=args.seed)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS = {"solve": cmd_solve, "convergence": cmd_convergence, "compare-local-solvers": cmd_compare,
            "perf": cmd_perf, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed)
    if args.threads:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            log.warning("threadpoolctl is not installed; --threads is ignored")
        else:
            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
