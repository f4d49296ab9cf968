"""Command-line entry point.

Verbs::

    solve           assemble, solve, audit and emit a trajectory
    audit           exactness report of a stored trajectory.csv
    oracle-check    solve plus brute-force comparison (at most 6 segments)
    export-program  write the assembled conic program as text

Exit codes: 0 ok, 2 bad input, 3 assembly, 4 primal infeasible, 5 dual
infeasible, 6 iteration limit, 7 numerical failure, 8 relaxation not exact,
9 oracle disagreement.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from eetc import ipm
from eetc.exactness import ExactnessReport
from eetc.io import KMH
from eetc.pipeline import FROM_FILE, RunConfig, export_program, run_pipeline

log = logging.getLogger("eetc")


def _case_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--journey", type=Path, help="journey key-value file (default: bundled case)")
    p.add_argument("--params", type=Path, help="train parameter file (default: bundled table)")
    p.add_argument("-N", "--segments", type=int, dest="segment_count", help="override segment count")
    p.add_argument("-T", "--time", type=float, dest="journey_time", help="override journey time (s)")
    pin = p.add_mutually_exclusive_group()
    pin.add_argument("--terminal-speed", type=float, metavar="KMH", help="pin the final speed (km/h)")
    pin.add_argument("--free-terminal", action="store_true", help="leave the final speed free")


def _solver_args(p: argparse.ArgumentParser) -> None:
    d = ipm.SolverSettings()
    p.add_argument("--max-iterations", type=int, default=d.max_iterations)
    p.add_argument("--feasibility-tol", type=float, default=d.feasibility_tol)
    p.add_argument("--gap-tol", type=float, default=d.gap_tol)
    p.add_argument("--exact-tol", type=float, default=1e-6, help="relaxation gap tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eetc", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    verbs = parser.add_subparsers(dest="verb", required=True)

    solve = verbs.add_parser("solve", help="solve a journey and emit its trajectory")
    _case_args(solve)
    _solver_args(solve)
    solve.add_argument("-o", "--out", type=Path, default=Path("eetc-out"), help="output directory")

    audit = verbs.add_parser("audit", help="exactness report of a stored trajectory")
    audit.add_argument("trajectory", type=Path)
    _case_args(audit)
    audit.add_argument("--exact-tol", type=float, default=1e-6)
    audit.add_argument("-o", "--out", type=Path, default=Path("eetc-out"))

    check = verbs.add_parser("oracle-check", help="compare against a grid search")
    _case_args(check)
    _solver_args(check)
    check.add_argument("--resolution", type=int, default=60, help="grid points per segment")
    check.add_argument("--window", type=float, default=0.005, help="schedule window as a fraction of T")
    check.add_argument("-o", "--out", type=Path, default=Path("eetc-out"))

    export = verbs.add_parser("export-program", help="write the conic program")
    _case_args(export)
    export.add_argument("path", type=Path)
    return parser


def _terminal(args) -> float | None | str:
    if args.free_terminal:
        return None
    if args.terminal_speed is not None:
        return args.terminal_speed * KMH
    return FROM_FILE


def config_from_args(args) -> RunConfig:
    kw = dict(journey=args.journey, params=args.params, segment_count=args.segment_count,
              journey_time=args.journey_time, terminal_speed=_terminal(args))
    if args.verb == "export-program":
        return RunConfig(output_dir=args.path.parent, **kw)
    kw["exact_tol"] = args.exact_tol
    if args.verb == "audit":
        return RunConfig(output_dir=args.out, trajectory=args.trajectory, **kw)
    solver = ipm.SolverSettings(max_iterations=args.max_iterations,
                                feasibility_tol=args.feasibility_tol, gap_tol=args.gap_tol)
    if args.verb == "oracle-check":
        return RunConfig(output_dir=args.out, solver=solver, run_oracle=True,
                         oracle_resolution=args.resolution, oracle_window_fraction=args.window, **kw)
    return RunConfig(output_dir=args.out, solver=solver, **kw)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = config_from_args(args)
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    if args.verb == "export-program":
        return int(export_program(config, args.path))

    result = run_pipeline(config)
    for rec in result.records:
        if rec.get("kind") == "error":
            log.error("%s: %s", rec["stage"], rec["message"])
        elif rec.get("kind") == "solve-stats":
            print(f"status {rec['status']}  iterations {rec['iterations']}  objective {rec['objective']:.12g}")
        elif rec.get("kind") == "oracle-comparison":
            print(f"oracle {rec['status']}  conic {rec['conic_objective']:.12g}  grid {rec['oracle_objective']}")
    if isinstance(result.exactness, ExactnessReport):
        sys.stdout.write(result.exactness.render())
    print(f"exit {int(result.exit_code)} ({result.exit_code.name.lower()})")
    return int(result.exit_code)


if __name__ == "__main__":
    sys.exit(main())
