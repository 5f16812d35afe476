"""Command-line front end: `gridsync run | dispatch | check-hessian`.

Exit codes: 0 certified / positive definite, 1 schema or validation error,
2 not certified or capacity (A3) violated, 3 diverged, 4 Hessian check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import json5
import numpy as np

from .controller import CostFunction
from .dispatch import DispatchProblem, solve_sfc
from .engine import initialize
from .errors import GridSyncError, Infeasible, SchemaError, ValidationError
from .io import parse_state_row, read_trajectory_csv, run_summary, state_from_row, write_summary, write_trajectory_csv
from .monitors import hessian_check_a4
from .plotting import plot_trajectory
from .scenario import Scenario, parse_scenario
from .sim_runner import SimulationRunner

logger = logging.getLogger("gridsync")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CERTIFIED = 2
EXIT_DIVERGED = 3
EXIT_HESSIAN = 4


def _thread_cap() -> int:
    raw = os.environ.get("GRIDSYNC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("ignoring non-integer GRIDSYNC_THREADS=%r", raw)
    return os.cpu_count() or 1


def _load(path: str) -> Scenario | int:
    """Parse a scenario or return the exit code its failure maps to."""
    try:
        return parse_scenario(path)
    except ValidationError as err:
        logger.error("%s: %s", path, err)
        return EXIT_NOT_CERTIFIED if err.assumption == "A3" else EXIT_INVALID
    except (SchemaError, OSError) as err:
        logger.error("%s: %s", path, err)
        return EXIT_INVALID


def _run_one(scenario: Scenario, args: argparse.Namespace, out_dir: Path) -> int:
    sim = scenario.sim
    overrides = {
        key: value
        for key, value in (("dt", args.dt), ("t_end", args.t_end), ("variant", args.variant), ("sample_every_n_steps", args.record_every))
        if value is not None
    }
    sim = replace(sim, **overrides)
    report = SimulationRunner(sim).run(scenario)

    settings = {**scenario.settings, "sim": {**scenario.settings.get("sim", {}), **overrides}}
    if "variant" in overrides:
        settings["variant"] = overrides["variant"]
    summary = run_summary(report, settings, scenario.network.base_power)
    write_summary(summary, out_dir / "summary.json")
    if report.trajectory is not None and report.trajectory.samples:
        if scenario.output.write_csv:
            write_trajectory_csv(report.trajectory, out_dir / "trajectory.csv")
        if not args.no_plots:
            plot_trajectory(report.trajectory, out_dir, scenario.output.plots)
    if report.status == "diverged":
        logger.error("%s diverged at t=%.4f s: %s", scenario.name, report.diverged_at or 0.0, report.message)
    elif report.status != "certified":
        logger.error("%s not certified: %s", scenario.name, report.message)
    print(json.dumps({"scenario": scenario.name, "status": report.status, "out": str(out_dir)}))
    return report.exit_code


def cmd_run(args: argparse.Namespace) -> int:
    loaded = [_load(path) for path in args.scenario]
    codes = [item for item in loaded if isinstance(item, int)]
    scenarios = [item for item in loaded if not isinstance(item, int)]
    if not scenarios:
        return max(codes)

    def out_dir(scenario: Scenario) -> Path:
        if args.out is None:
            return Path(scenario.output.directory)
        return Path(args.out) if len(scenarios) == 1 else Path(args.out) / scenario.name

    workers = min(len(scenarios), _thread_cap())
    if workers == 1:
        codes += [_run_one(s, args, out_dir(s)) for s in scenarios]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            codes += list(pool.map(lambda s: _run_one(s, args, out_dir(s)), scenarios))
    return max(codes)


def _problem_from_costs(path: str, demand: float) -> DispatchProblem:
    with open(path, "r", encoding="utf-8") as f:
        rows = json5.load(f)
    if isinstance(rows, dict):
        rows = [{"name": name, **row} for name, row in rows.items()]
    if not isinstance(rows, list) or not rows:
        raise SchemaError(path, "expected a non-empty list of generators")
    try:
        return DispatchProblem(
            costs=tuple(CostFunction(float(r["a"]), float(r["b"])) for r in rows),
            p_min=np.array([float(r.get("p_min", 0.0)) for r in rows]),
            p_max=np.array([float(r["p_max"]) for r in rows]),
            demand=demand,
            names=tuple(str(r.get("name", f"G{k + 1}")) for k, r in enumerate(rows)),
        )
    except KeyError as err:
        raise SchemaError(path, f"generator entry missing field {err}") from err


def cmd_dispatch(args: argparse.Namespace) -> int:
    try:
        problem = DispatchProblem.ne39_costs(args.demand) if args.table1 else _problem_from_costs(args.costs, args.demand)
        solution = solve_sfc(problem)
    except Infeasible as err:
        logger.error("%s", err)
        return EXIT_NOT_CERTIFIED
    except (SchemaError, OSError, ValueError) as err:
        logger.error("%s", err)
        return EXIT_INVALID
    names = problem.names or tuple(f"G{k + 1}" for k in range(len(problem.costs)))
    payload = {
        "demand": problem.demand,
        "pg": dict(zip(names, solution.pg.tolist())),
        "lambda": solution.lam,
        "marginal_costs": dict(zip(names, solution.marginal_costs(problem).tolist())),
        "binding": {names[k]: side for k, side in solution.binding.items()},
        "gamma_minus": solution.gamma_minus.tolist(),
        "gamma_plus": solution.gamma_plus.tolist(),
        "kkt_residual": solution.kkt_residual,
    }
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_check_hessian(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    if isinstance(scenario, int):
        return scenario
    try:
        plant, state = initialize(scenario.network, scenario.plant, scenario.v_set, scenario.sim.solver)
        if args.state and Path(args.state).is_file():
            header, data = read_trajectory_csv(args.state)
            if data.shape[0] == 0:
                raise SchemaError(args.state, "trajectory file has no rows")
            state = state_from_row(dict(zip(header, data[args.row])), scenario.network, plant)
        elif args.state:
            state = parse_state_row(args.state, scenario.network, plant)
    except (GridSyncError, KeyError, IndexError, OSError) as err:
        logger.error("%s", err)
        return EXIT_INVALID
    min_eig, positive = hessian_check_a4(scenario.network, plant, state)
    verdict = "positive definite" if positive else "NOT positive definite"
    print(json.dumps({"scenario": scenario.name, "time": state.time, "min_eigenvalue": min_eig, "verdict": verdict}))
    return EXIT_OK if positive else EXIT_HESSIAN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridsync", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one or more scenarios and certify the steady state")
    run.add_argument("--scenario", action="append", required=True, help="scenario file (repeatable)")
    run.add_argument("--out", default=None, help="output directory (per-scenario subdirectories for batches)")
    run.add_argument("--dt", type=float, default=None)
    run.add_argument("--t-end", dest="t_end", type=float, default=None)
    run.add_argument("--variant", choices=("oracle", "measured", "agc"), default=None)
    run.add_argument("--record-every", dest="record_every", type=int, default=None, help="record every N steps")
    run.add_argument("--no-plots", action="store_true")
    run.set_defaults(func=cmd_run)

    dispatch = sub.add_parser("dispatch", help="solve the economic-dispatch problem")
    source = dispatch.add_mutually_exclusive_group(required=True)
    source.add_argument("--table1", action="store_true", help="use the bundled four-unit cost table")
    source.add_argument("--costs", help="JSON list of {name, a, b, p_min, p_max} in MW units")
    dispatch.add_argument("--demand", type=float, required=True, help="demand in the units of the cost data (MW)")
    dispatch.set_defaults(func=cmd_dispatch)

    hessian = sub.add_parser("check-hessian", help="check positive definiteness of the potential Hessian")
    hessian.add_argument("--scenario", required=True)
    hessian.add_argument(
        "--state",
        default=None,
        help="trajectory CSV file, or one inline comma-separated row in its column order",
    )
    hessian.add_argument("--row", type=int, default=-1, help="row of a --state file to use (default: last)")
    hessian.set_defaults(func=cmd_check_hessian)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
