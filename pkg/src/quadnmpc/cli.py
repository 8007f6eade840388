"""Command-line front end: ``run``, ``compare`` and ``path``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from quadnmpc.path import eval as eval_path
from quadnmpc.scenario_io import (
    ScenarioFileError,
    atomic_write,
    load_metrics,
    load_scenario_file,
    metrics_json,
    resolved_dict,
    trajectory_csv,
)
from quadnmpc.sim import (
    SimulationAborted,
    compare_runs,
    compute_metrics,
    run_closed_loop,
)

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2

log = logging.getLogger("quadnmpc")


def _run_one(path: str, out_dir: str, overrides: list[str], timing: bool) -> tuple[int, str]:
    """Run one scenario; returns the exit code and a one-line summary."""
    try:
        sf = load_scenario_file(path, overrides)
        scenario = sf.to_scenario()
    except (ScenarioFileError, ValueError) as exc:
        return EXIT_INVALID, f"error: {exc}"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        sim_log = run_closed_loop(scenario)
    except SimulationAborted as exc:
        atomic_write(out / "trajectory.csv", trajectory_csv(exc.log, timing))
        return EXIT_ABORT, f"{sf.name}: simulation aborted: {exc} (partial log in {out / 'trajectory.csv'})"
    metrics = compute_metrics(sim_log, scenario)
    atomic_write(out / "trajectory.csv", trajectory_csv(sim_log, timing))
    atomic_write(out / "metrics.json", metrics_json(metrics))
    atomic_write(out / "scenario.json", json.dumps(resolved_dict(sf), indent=2) + "\n")
    nav = "n/a" if metrics.navigation_time is None else f"{metrics.navigation_time:.2f} s"
    return EXIT_OK, (
        f"{sf.name}: avg dev {metrics.average_deviation:.4f} m, max dev {metrics.maximum_deviation:.4f} m, "
        f"avg iters {metrics.avg_solver_iterations:.2f}, navigation {nav} -> {out}"
    )


def cmd_run(args: argparse.Namespace) -> int:
    paths = args.scenarios
    if len(paths) == 1:
        dirs = [args.output_dir]
    else:
        # one subdirectory per scenario, named by file stem
        dirs = [str(Path(args.output_dir) / Path(p).stem) for p in paths]
    jobs = [(p, d, args.set, args.timing) for p, d in zip(paths, dirs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*j) for j in jobs]
    for code, msg in results:
        print(msg, file=sys.stdout if code == EXIT_OK else sys.stderr)
    return max(code for code, _ in results)


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        a, b = load_metrics(args.a), load_metrics(args.b)
        report = compare_runs(a, b)
    except (ScenarioFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for name, delta in report["deltas"].items():
        print(f"{name:34s} {delta:+.6g}" if delta is not None else f"{name:34s} n/a")
    print(f"{'time_increase_percent':34s} {report['time_increase_percent']:+.2f}")
    return EXIT_OK


def cmd_path(args: argparse.Namespace) -> int:
    if args.samples < 2:
        print("error: --samples must be >= 2", file=sys.stderr)
        return EXIT_INVALID
    try:
        scenario = load_scenario_file(args.scenario).to_scenario()
    except (ScenarioFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    path = scenario.path()
    frac = np.linspace(0.0, 1.0, args.samples)
    pts = eval_path(path, path.t_min + frac * (path.t_max - path.t_min))
    times = frac * scenario.traversal_duration
    lines = ["t,x,y,z"] + [",".join(f"{v:.9g}" for v in (t, *p)) for t, p in zip(times, pts)]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadnmpc", description="Quadrotor NMPC closed-loop simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate scenario files and write CSV/metrics")
    run.add_argument("scenarios", nargs="+", help="scenario JSON files or bundled names (hexagon, multi_obstacle, ...)")
    run.add_argument("-o", "--output-dir", default="out", help="output directory (default: out)")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a scenario field; dotted keys for sections, JSON values")
    run.add_argument("--jobs", type=int, default=1, help="run scenarios in parallel processes")
    run.add_argument("--timing", action="store_true", help="add a solve_time column (not reproducible)")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="compare two metrics reports (b relative to a)")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    cmp_.set_defaults(func=cmd_compare)

    pth = sub.add_parser("path", help="print the sampled reference curve as CSV")
    pth.add_argument("scenario")
    pth.add_argument("--samples", type=int, default=101)
    pth.set_defaults(func=cmd_path)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; 2 is reserved for aborted simulations
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
