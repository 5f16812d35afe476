"""Trajectory CSV and run-summary JSON writers/readers.

Column names: `time`, then `bus<id>.<var>` for θ, V and ω̃, `gen<bus id>.<var>`
for machine and controller variables, and `edge<i>-<j>.z` for edge integrators
(bus ids throughout). Numbers are written with 17 significant digits so a
read-back reproduces the recorded floats exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .controller import ControllerState
from .engine import Plant, SystemState
from .errors import SchemaError
from .machines import MachineState
from .network import AlgebraicState, NetworkModel
from .results import Trajectory

BUS_VARS: tuple[str, ...] = ("theta", "v", "omega_tilde")
GEN_VARS: tuple[str, ...] = tuple(f.name for f in fields(MachineState))
CTRL_VARS: tuple[str, ...] = ("mu", "gamma_minus", "gamma_plus", "p_hat", "agc_offset")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_columns(net: NetworkModel, plant: Plant) -> list[str]:
    """Return the CSV header for a network/plant pair."""
    bank = plant.machines
    cols = ["time"]
    for bus in net.buses:
        cols += [f"bus{bus.id}.{var}" for var in BUS_VARS]
    for k in range(len(bank)):
        tag = f"gen{net.buses[bank.bus[k]].id}"
        cols += [f"{tag}.{var}" for var in GEN_VARS]
        cols += [f"{tag}.Pg_mw", f"{tag}.online"]
    for k in plant.controllers:
        tag = f"gen{net.buses[bank.bus[k]].id}"
        cols += [f"{tag}.{var}" for var in CTRL_VARS]
    for edge in net.comm_edges:
        cols.append(f"edge{net.buses[edge.i].id}-{net.buses[edge.j].id}.z")
    return cols


def state_row(state: SystemState, net: NetworkModel, plant: Plant) -> list[float]:
    """Flatten one state in `trajectory_columns` order."""
    row = [state.time]
    alg = state.algebraic
    for i in range(net.n_bus):
        row += [alg.theta[i], alg.v[i], alg.omega_tilde[i]]
    for k in range(len(plant.machines)):
        row += [float(np.asarray(getattr(state.machines, var))[k]) for var in GEN_VARS]
        row += [float(state.machines.Pg[k]) * net.base_power, float(state.online[k])]
    c = state.controller
    for i in range(len(plant.controllers)):
        row += [c.mu[i], c.gamma_minus[i], c.gamma_plus[i], c.p_hat[i], state.agc_offset[i]]
    row += list(c.z)
    return row


def write_trajectory_csv(trajectory: Trajectory, path: str | Path) -> Path:
    """Write every recorded sample of `trajectory` to `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    net0 = trajectory.networks[0]
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(trajectory_columns(net0, trajectory.plant))
        for sample in trajectory.samples:
            writer.writerow([_fmt(x) for x in state_row(sample.state, net0, trajectory.plant)])
    return path


def read_trajectory_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Return `(columns, data)` with one data row per recorded sample."""
    with Path(path).open("r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader if row]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def state_from_row(row: Mapping[str, float], net: NetworkModel, plant: Plant) -> SystemState:
    """Rebuild a `SystemState` from one CSV row keyed by column name.

    Raises:
        KeyError: a required column is missing.
    """
    bank = plant.machines
    buses = [bus.id for bus in net.buses]
    algebraic = AlgebraicState(*(np.array([row[f"bus{b}.{var}"] for b in buses]) for var in BUS_VARS))
    gen_tags = [f"gen{net.buses[bank.bus[k]].id}" for k in range(len(bank))]
    machines = MachineState(*(np.array([row[f"{tag}.{var}"] for tag in gen_tags]) for var in GEN_VARS))
    online = np.array([row.get(f"{tag}.online", 1.0) > 0.5 for tag in gen_tags])
    ctrl_tags = [gen_tags[k] for k in plant.controllers]
    ctrl = {var: np.array([row.get(f"{tag}.{var}", 0.0) for tag in ctrl_tags]) for var in CTRL_VARS}
    z = np.array([row.get(f"edge{net.buses[e.i].id}-{net.buses[e.j].id}.z", 0.0) for e in net.comm_edges])
    return SystemState(
        time=float(row.get("time", 0.0)),
        machines=machines,
        algebraic=algebraic,
        controller=ControllerState(
            mu=ctrl["mu"], z=z, gamma_minus=ctrl["gamma_minus"], gamma_plus=ctrl["gamma_plus"], p_hat=ctrl["p_hat"]
        ),
        online=online,
        agc_offset=ctrl["agc_offset"],
    )


def parse_state_row(text: str, net: NetworkModel, plant: Plant) -> SystemState:
    """Rebuild a state from one inline comma-separated row in `trajectory_columns` order.

    Raises:
        SchemaError: wrong number of values or a non-numeric entry.
    """
    columns = trajectory_columns(net, plant)
    cells = next(csv.reader([text.strip()]), [])
    if len(cells) != len(columns):
        raise SchemaError("--state", f"inline row has {len(cells)} values, expected {len(columns)} ({columns[0]}, ...)")
    try:
        values = [float(x) for x in cells]
    except ValueError as err:
        raise SchemaError("--state", f"inline row is not numeric: {err}") from None
    return state_from_row(dict(zip(columns, values)), net, plant)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def run_summary(report, settings: Mapping[str, Any], base_power: float) -> dict[str, Any]:
    """Assemble the JSON-ready summary of a `RunReport`."""
    summary: dict[str, Any] = {
        "scenario": report.scenario,
        "variant": report.variant,
        "status": report.status,
        "exit_code": report.exit_code,
        "message": report.message,
        "elapsed_s": report.elapsed,
        "diverged_at": report.diverged_at,
        "settings": settings,
    }
    trajectory = report.trajectory
    if trajectory is not None and trajectory.steady is not None:
        steady = trajectory.steady
        eq = steady.equilibrium
        bank = trajectory.machines
        summary["steady_state"] = {
            "converged": steady.converged,
            "max_omega": steady.max_omega,
            "max_omega_tilde": steady.max_omega_tilde,
            "mu_spread": steady.mu_spread,
            "max_rate": steady.max_rate,
            "pg_mw": {bank.names[k]: float(eq.machines.Pg[k]) * base_power for k in range(len(bank)) if eq.online[k]},
            "v": eq.algebraic.v,
        }
    cert = report.certification
    if cert is not None:
        names = [trajectory.machines.names[k] for k in trajectory.plant.controllers if trajectory.steady.equilibrium.online[k]]
        summary["certification"] = {
            "kkt": {**asdict(cert.kkt), "max": cert.kkt.max},
            "demand_mw": cert.demand * base_power,
            "oracle_pg_mw": dict(zip(names, cert.oracle.pg * base_power)),
            "sim_pg_mw": dict(zip(names, cert.pg * base_power)),
            "oracle_marginal_cost": -cert.oracle.lam,
            "binding": {names[k]: side for k, side in cert.oracle.binding.items()},
            "max_relative_gap": cert.max_relative_gap,
            "max_freq_dev": cert.max_freq_dev,
        }
    if trajectory is not None and trajectory.monitors:
        mons = trajectory.monitors
        summary["monitors"] = {
            "max_freq_dev": max(m.max_freq_dev for m in mons),
            "final_kkt_residual": mons[-1].kkt_residual,
            "min_hessian_eig": min(m.hessian_min_eig for m in mons),
            "max_lyapunov": max((m.lyapunov for m in mons if m.lyapunov is not None), default=None),
        }
    if report.lyapunov is not None:
        summary["lyapunov_audit"] = {**asdict(report.lyapunov), "passed": report.lyapunov.passed}
    summary["passivity"] = [asdict(p) for p in report.passivity]
    summary["disturbance"] = [{**asdict(d), "within_bound": d.within_bound} for d in report.disturbance]
    return _jsonable(summary)


def write_summary(summary: Mapping[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=False), encoding="utf-8")
    return path


def read_summary(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
