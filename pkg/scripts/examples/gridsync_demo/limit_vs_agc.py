"""Capacity limit: distributed controller against the AGC baseline.

Purpose
-------
Application-level example built on the reusable package in ``src/gridsync``.
It runs the bundled ``desk4_limit`` scenario (a 200 MW load step with G2
capped at 130 MW) twice:

- with the distributed controller (``measured`` variant), which gives the
  steep-cost G2 only its equal-marginal-cost share (about 111 MW),
- with the equal-share AGC baseline, which has no notion of the cap and
  pushes G2 to about 147 MW.

Each run writes a trajectory CSV and the five SVG plots under ``OUT_DIR``.

Which `src/gridsync` modules are used here
------------------------------------------
- ``gridsync.scenario`` and ``gridsync.scenarios`` to load the bundled file
- ``gridsync.sim_runner`` for the run and its certification
- ``gridsync.io`` and ``gridsync.plotting`` for the output files

Running
-------
Run from the repository root:

    python scripts/examples/gridsync_demo/limit_vs_agc.py

Requirements
------------
- ``pip install -e .`` or direct repo execution (this script adds a local
  ``src/`` path fallback).
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[3]
SRC_DIR = REPO_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from gridsync.config import PLOT_CHANNELS
from gridsync.io import write_trajectory_csv
from gridsync.plotting import plot_trajectory
from gridsync.scenario import parse_scenario
from gridsync.scenarios import bundled_path
from gridsync.sim_runner import SimulationRunner


SCENARIO = "desk4_limit"
OUT_DIR = REPO_ROOT / "results" / "limit_vs_agc"
AGC_T_END = 90.0  # s; the AGC integral loop settles much slower than the controller
CAPPED_UNIT = "G2"


def run_variant(variant: str, t_end: float | None = None):
    scenario = parse_scenario(bundled_path(SCENARIO))
    sim = replace(scenario.sim, variant=variant)
    if t_end is not None:
        sim = replace(sim, t_end=t_end)
    print(f"[info] {SCENARIO} variant={variant} dt={sim.dt} t_end={sim.t_end}")
    return SimulationRunner(sim).run(scenario)


def report_run(report, out_dir: Path) -> None:
    """Print the final dispatch and write CSV/SVG files for one run."""
    traj = report.trajectory
    bank = traj.machines
    base = traj.networks[0].base_power
    final = traj.final.state
    print(f"[info] status={report.status} ({report.message})")
    for k in traj.plant.controllers:
        print(f"[info]   {bank.names[k]}: Pg={final.machines.Pg[k] * base:8.2f} MW  p_max={bank.p_max[k] * base:6.1f} MW")

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_trajectory_csv(traj, out_dir / "trajectory.csv")
    print(f"[CSV] {csv_path}")
    for svg in plot_trajectory(traj, out_dir, PLOT_CHANNELS):
        print(f"[SVG] {svg}")


def main() -> None:
    proposed = run_variant("measured")
    report_run(proposed, OUT_DIR / "measured")
    agc = run_variant("agc", t_end=AGC_T_END)
    report_run(agc, OUT_DIR / "agc")

    k = proposed.trajectory.machines.names.index(CAPPED_UNIT)
    base = proposed.trajectory.networks[0].base_power
    cap = proposed.trajectory.machines.p_max[k] * base
    for label, report in (("controller", proposed), ("agc", agc)):
        pg = report.trajectory.final.state.machines.Pg[k] * base
        peak = max(s.state.machines.Pg[k] for s in report.trajectory.samples) * base
        print(
            f"[info] {label:>10}: {CAPPED_UNIT}={pg:.1f} MW, peak {peak:.1f} MW "
            f"(cap {cap:.0f} MW, excess {max(pg - cap, 0.0):.1f} MW)"
        )


if __name__ == "__main__":
    main()
