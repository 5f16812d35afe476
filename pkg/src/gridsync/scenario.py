"""Scenario documents: loading, schema checks, unit conversion and validation.

A scenario is one JSON document (comments allowed, read with `json5`) with the
sections `network`, `machines`, `controller`, `events`, `sim` and `outputs`.
Powers are given in MW/Mvar and converted to per-unit on the declared base.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import json5
import numpy as np

from .config import (
    PLOT_CHANNELS,
    VARIANTS,
    DivergenceBounds,
    OutputConfig,
    SimulationConfig,
    SteadyStateConfig,
    VoltageSolverTuning,
)
from .controller import ControllerGains, CostFunction
from .engine import AGCSettings, Event, GeneratorTrip, LineReclose, LineTrip, LoadStep, Plant
from .errors import SchemaError, ValidationError
from .machines import MachineBank, MachineParams
from .network import BUS_KINDS, Bus, CommEdge, Line, NetworkModel, check_connectivity

EVENT_KINDS: tuple[str, ...] = ("load_step", "generator_trip", "line_trip", "line_reclose")


@dataclass(slots=True)
class Scenario:
    """A fully validated run description.

    Attributes:
        name: Scenario label (used for output directories).
        network: Pre-disturbance network in per-unit.
        plant: Machines, costs, gains and AGC settings.
        v_set: Terminal-voltage setpoint of every machine for the initial power flow.
        events: Timed disturbances, sorted by time.
        sim: Integration settings.
        output: Output settings.
        description: Free text from the document.
        settings: Effective settings with all defaults applied (echoed in summaries).
        source: File the scenario was read from, if any.
    """

    name: str
    network: NetworkModel
    plant: Plant
    v_set: np.ndarray
    events: tuple[Event, ...]
    sim: SimulationConfig
    output: OutputConfig
    description: str = ""
    settings: dict[str, Any] = field(default_factory=dict)
    source: str | None = None


def _section(doc: Mapping[str, Any], key: str, path: str, default: Any = None) -> Any:
    if key not in doc:
        if default is None:
            raise SchemaError(f"{path}.{key}" if path else key, "missing required field")
        return default
    return doc[key]


def _object(value: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise SchemaError(path, f"expected an object, got {type(value).__name__} {value!r}")
    return value


def _records(value: Any, path: str) -> list[tuple[str, Mapping[str, Any]]]:
    """Return `(path, entry)` pairs of a list of objects."""
    if not isinstance(value, list):
        raise SchemaError(path, f"expected a list, got {type(value).__name__}")
    return [(f"{path}[{k}]", _object(raw, f"{path}[{k}]")) for k, raw in enumerate(value)]


def _number(doc: Mapping[str, Any], key: str, path: str, default: float | None = None, positive: bool = False) -> float:
    where = f"{path}.{key}"
    if key not in doc:
        if default is None:
            raise SchemaError(where, "missing required field")
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(where, f"expected a number, got {value!r}")
    if not math.isfinite(value) and not (value == math.inf and key.startswith("p_max")):
        raise SchemaError(where, f"expected a finite number, got {value!r}")
    if positive and value <= 0.0:
        raise SchemaError(where, f"must be positive, got {value}")
    return float(value)


def _parse_network(doc: Mapping[str, Any]) -> tuple[NetworkModel, dict[int, int], float]:
    base = _number(doc, "base_mva", "network", 100.0, positive=True)
    freq = _number(doc, "frequency_hz", "network", 60.0, positive=True)
    raw_buses = _section(doc, "buses", "network")
    if not isinstance(raw_buses, list) or not raw_buses:
        raise SchemaError("network.buses", "expected a non-empty list")
    buses: list[Bus] = []
    index: dict[int, int] = {}
    for k, (path, raw) in enumerate(_records(raw_buses, "network.buses")):
        bus_id = int(_number(raw, "id", path))
        if bus_id in index:
            raise SchemaError(f"{path}.id", f"duplicate bus id {bus_id}")
        kind = raw.get("kind", "load")
        if kind not in BUS_KINDS:
            raise SchemaError(f"{path}.kind", f"expected one of {BUS_KINDS}, got {kind!r}")
        index[bus_id] = k
        buses.append(
            Bus(
                id=bus_id,
                kind=kind,
                p=_number(raw, "p_mw", path, 0.0) / base,
                q=_number(raw, "q_mvar", path, 0.0) / base,
                damping=_number(raw, "damping", path, 1.0, positive=True),
            )
        )

    def position(bus_id: Any, where: str) -> int:
        if bus_id not in index:
            raise SchemaError(where, f"unknown bus {bus_id!r}")
        return index[bus_id]

    lines: list[Line] = []
    for path, raw in _records(_section(doc, "lines", "network", []), "network.lines"):
        i = position(raw.get("from"), f"{path}.from")
        j = position(raw.get("to"), f"{path}.to")
        if "b" in raw:
            b = _number(raw, "b", path, positive=True)
        else:
            b = 1.0 / _number(raw, "x", path, positive=True)
        lines.append(Line(i=i, j=j, b=b, in_service=bool(raw.get("in_service", True))))

    edges: list[CommEdge] = []
    for k, raw in enumerate(_section(doc, "comm_edges", "network", [])):
        path = f"network.comm_edges[{k}]"
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise SchemaError(path, "expected a pair of bus ids")
        a, b = position(raw[0], path), position(raw[1], path)
        if a == b:
            raise SchemaError(path, "self-loop")
        edges.append(CommEdge(i=min(a, b), j=max(a, b)))

    try:
        net = NetworkModel(buses=tuple(buses), lines=tuple(lines), comm_edges=tuple(edges), base_power=base)
    except ValueError as err:
        raise SchemaError("network", str(err)) from err
    return net, index, freq


def _parse_gains(doc: Mapping[str, Any], path: str, defaults: Mapping[str, Any]) -> dict[str, float | None]:
    merged = {**defaults, **doc}
    out: dict[str, float | None] = {}
    for key in ("k_pg", "k_mu", "k_z", "k_gamma"):
        out[key] = _number(merged, key, path, 1.0, positive=True)
    out["tau"] = _number(merged, "tau", path, positive=True) if merged.get("tau") is not None else None
    return out


def _parse_plant(
    machines_doc: list[Mapping[str, Any]],
    controller_doc: Mapping[str, Any],
    net: NetworkModel,
    index: dict[int, int],
    freq: float,
) -> tuple[Plant, np.ndarray, dict[str, Any]]:
    base = net.base_power
    omega_s = 2.0 * math.pi * freq
    scale = _number(controller_doc, "cost_scale", "controller", 1.0, positive=True)
    default_gains = _object(controller_doc.get("gains", {}), "controller.gains")
    if not isinstance(machines_doc, list) or not machines_doc:
        raise SchemaError("machines", "expected a non-empty list")

    params: list[MachineParams] = []
    v_set: list[float] = []
    costs: list[CostFunction] = []
    gains: list[ControllerGains] = []
    controllers: list[int] = []
    echo: list[dict[str, Any]] = []
    seen_buses: set[int] = set()
    for k, (path, raw) in enumerate(_records(machines_doc, "machines")):
        name = str(raw.get("name", f"G{k + 1}"))
        bus_id = raw.get("bus")
        if bus_id not in index:
            raise SchemaError(f"{path}.bus", f"unknown bus {bus_id!r}")
        bus = index[bus_id]
        kind = net.buses[bus].kind
        if kind == "load":
            raise SchemaError(f"{path}.bus", f"bus {bus_id} is a load bus")
        if bus in seen_buses:
            raise SchemaError(f"{path}.bus", f"bus {bus_id} already has a machine")
        seen_buses.add(bus)
        if "M" in raw:
            M = _number(raw, "M", path, positive=True)
        else:
            M = 2.0 * _number(raw, "H", path, positive=True) / omega_s
        controllable = kind == "controllable"
        p_max_default = None if controllable else math.inf
        record = dict(
            name=name,
            bus=bus,
            M=M,
            D=_number(raw, "D", path, 1.0, positive=True),
            T_d0p=_number(raw, "T_d0p", path, positive=True),
            T=_number(raw, "T", path, 0.5, positive=True),
            x_d=_number(raw, "x_d", path, positive=True),
            x_dp=_number(raw, "x_dp", path, positive=True),
            controllable=controllable,
            p_min=_number(raw, "p_min_mw", path, 0.0) / base,
            p_max=_number(raw, "p_max_mw", path, p_max_default) / base,
            k_omega=_number(raw, "k_omega", path, 1.0, positive=True),
            k_E=_number(raw, "k_E", path, 1.0, positive=True),
            pg_ref=0.0 if controllable else _number(raw, "pg_mw", path) / base,
        )
        try:
            params.append(MachineParams(**record))
        except ValueError as err:
            raise SchemaError(path, str(err)) from err
        v_set.append(_number(raw, "v_set", path, 1.0, positive=True))
        entry = {**record, "v_set": v_set[-1]}

        if controllable:
            cost_doc = _object(_section(raw, "cost", path), f"{path}.cost")
            cost = CostFunction.from_mw(
                _number(cost_doc, "a", f"{path}.cost", positive=True),
                _number(cost_doc, "b", f"{path}.cost", 0.0),
                base,
                scale,
            )
            g = _parse_gains(_object(raw.get("gains", {}), f"{path}.gains"), f"{path}.gains", default_gains)
            tau = g.pop("tau") or 3.0 / cost.lipschitz
            gains.append(ControllerGains(tau=tau, **g))
            costs.append(cost)
            controllers.append(k)
            entry.update(cost_pu={"a": cost.a, "b": cost.b}, gains=asdict(gains[-1]))
        echo.append(entry)

    for k, bus in enumerate(net.buses):
        if bus.kind != "load" and k not in seen_buses:
            raise SchemaError("machines", f"generator bus {bus.id} has no machine")
    if not controllers:
        raise SchemaError("machines", "at least one controllable machine is required")

    agc = None
    if "agc" in controller_doc:
        agc_doc = controller_doc["agc"]
        shares = agc_doc.get("shares")
        if shares is None:
            shares = [1.0 / len(controllers)] * len(controllers)
        if len(shares) != len(controllers) or any(s < 0 for s in shares):
            raise SchemaError("controller.agc.shares", f"expected {len(controllers)} nonnegative shares")
        total = float(sum(shares))
        if total <= 0.0:
            raise SchemaError("controller.agc.shares", "shares must not all be zero")
        agc = AGCSettings(
            K_f=_number(agc_doc, "K_f", "controller.agc", 1.0, positive=True),
            shares=tuple(float(s) / total for s in shares),
        )
    else:
        agc = AGCSettings(K_f=1.0, shares=tuple([1.0 / len(controllers)] * len(controllers)))

    plant = Plant(
        machines=MachineBank.from_params(params),
        controllers=np.array(controllers, dtype=int),
        costs=tuple(costs),
        gains=tuple(gains),
        agc=agc,
    )
    settings = {"cost_scale": scale, "machines": echo, "agc": asdict(agc)}
    return plant, np.array(v_set), settings


def _parse_events(raw_events: list[Mapping[str, Any]], net: NetworkModel, index: dict[int, int], plant: Plant) -> tuple[Event, ...]:
    base = net.base_power
    names = plant.machines.names
    events: list[Event] = []
    for path, raw in _records(raw_events, "events"):
        at = _number(raw, "at", path)
        if at < 0.0:
            raise SchemaError(f"{path}.at", f"event time must be nonnegative, got {at}")
        kind = raw.get("kind")
        if kind not in EVENT_KINDS:
            raise SchemaError(f"{path}.kind", f"expected one of {EVENT_KINDS}, got {kind!r}")
        if kind == "load_step":
            if raw.get("bus") not in index:
                raise SchemaError(f"{path}.bus", f"unknown bus {raw.get('bus')!r}")
            events.append(
                LoadStep(
                    at=at,
                    bus=index[raw["bus"]],
                    dp=_number(raw, "dp_mw", path, 0.0) / base,
                    dq=_number(raw, "dq_mvar", path, 0.0) / base,
                )
            )
        elif kind == "generator_trip":
            name = raw.get("machine")
            if name not in names:
                raise SchemaError(f"{path}.machine", f"unknown machine {name!r}")
            events.append(GeneratorTrip(at=at, machine=names.index(name)))
        else:
            ends = [raw.get("from"), raw.get("to")]
            for end, label in zip(ends, ("from", "to")):
                if end not in index:
                    raise SchemaError(f"{path}.{label}", f"unknown bus {end!r}")
            i, j = index[ends[0]], index[ends[1]]
            try:
                net.line_index(i, j)
            except KeyError as err:
                raise SchemaError(path, f"no line between buses {ends[0]} and {ends[1]}") from err
            cls = LineTrip if kind == "line_trip" else LineReclose
            events.append(cls(at=at, i=i, j=j))
    events.sort(key=lambda e: e.at)

    tripped: set[tuple[int, int]] = {
        (min(line.i, line.j), max(line.i, line.j)) for line in net.lines if not line.in_service
    }
    for event in events:
        if isinstance(event, (LineTrip, LineReclose)):
            key = (min(event.i, event.j), max(event.i, event.j))
            if isinstance(event, LineReclose) and key not in tripped:
                raise SchemaError("events", f"reclose at t={event.at} does not follow a trip of that line")
            if isinstance(event, LineTrip) and key in tripped:
                raise SchemaError("events", f"line tripped twice before t={event.at}")
            (tripped.add if isinstance(event, LineTrip) else tripped.discard)(key)
    return tuple(events)


def _parse_sim(doc: Mapping[str, Any], variant: str) -> SimulationConfig:
    sim = SimulationConfig(
        dt=_number(doc, "dt", "sim", 0.002, positive=True),
        t_end=_number(doc, "t_end", "sim", 70.0, positive=True),
        sample_every_n_steps=int(_number(doc, "sample_every_n_steps", "sim", 50, positive=True)),
        variant=variant,
        solver=VoltageSolverTuning(
            tol_q=_number(doc, "tol_q", "sim", 1e-9, positive=True),
            max_iter=int(_number(doc, "max_newton_iter", "sim", 50, positive=True)),
            max_halvings=int(_number(doc, "max_halvings", "sim", 10, positive=True)),
        ),
        bounds=DivergenceBounds(
            omega_max=_number(doc, "omega_max", "sim", 10.0, positive=True),
            v_min=_number(doc, "v_min", "sim", 0.2, positive=True),
        ),
        steady=SteadyStateConfig(
            window=_number(doc, "steady_window", "sim", 5.0, positive=True),
            tol=_number(doc, "steady_tol", "sim", 1e-6, positive=True),
        ),
    )
    return sim


def _parse_output(doc: Mapping[str, Any], name: str) -> OutputConfig:
    plots = tuple(doc.get("plots", PLOT_CHANNELS))
    for channel in plots:
        if channel not in PLOT_CHANNELS:
            raise SchemaError("outputs.plots", f"unknown channel {channel!r}; expected one of {PLOT_CHANNELS}")
    return OutputConfig(
        directory=str(doc.get("directory", f"out/{name}")),
        plots=plots,
        write_csv=bool(doc.get("csv", True)),
    )


def controllable_demand_stages(scenario: Scenario) -> list[tuple[float, float, float, float]]:
    """Return `(time, demand, Σp_min, Σp_max)` for the initial point and after every event.

    Demand is the load the controllable machines must cover: total load minus
    the setpoints of the uncontrollable machines still online.
    """
    bank = scenario.plant.machines
    online = np.ones(len(bank), dtype=bool)
    load = float(scenario.network.p.sum())

    def stage(t: float) -> tuple[float, float, float, float]:
        ctrl = online & bank.controllable
        demand = load - float(bank.pg_ref[online & ~bank.controllable].sum())
        return t, demand, float(bank.p_min[ctrl].sum()), float(bank.p_max[ctrl].sum())

    stages = [stage(0.0)]
    for event in scenario.events:
        if isinstance(event, LoadStep):
            load += event.dp
        elif isinstance(event, GeneratorTrip):
            online[event.machine] = False
        else:
            continue
        stages.append(stage(event.at))
    return stages


def validate_scenario(scenario: Scenario, variant: str | None = None) -> None:
    """Check the modelling assumptions that a well-formed scenario may still violate.

    Raises:
        ValidationError: A1 (communication graph), A3 (capacity at some load stage),
            A5 (τ·l < 4 for the measured estimator) or network connectivity.
    """
    variant = variant or scenario.sim.variant
    power_ok, comm_ok = check_connectivity(scenario.network)
    if not power_ok:
        raise ValidationError("network", "power network over in-service lines is not connected")
    if not comm_ok:
        raise ValidationError("A1", "communication graph over controllable buses is not connected")
    base = scenario.network.base_power
    for t, demand, lo, hi in controllable_demand_stages(scenario):
        if not lo <= demand <= hi:
            raise ValidationError(
                "A3",
                f"controllable demand {demand * base:.1f} MW at t={t:g} s outside capacity "
                f"[{lo * base:.1f}, {hi * base:.1f}] MW",
            )
    if variant == "measured":
        for k, gains, cost in zip(scenario.plant.controllers, scenario.plant.gains, scenario.plant.costs):
            if gains.tau * cost.lipschitz >= 4.0:
                name = scenario.plant.machines.names[k]
                raise ValidationError("A5", f"{name}: tau*l = {gains.tau * cost.lipschitz:.3g} must be below 4")


def scenario_from_dict(doc: Mapping[str, Any], source: str | None = None) -> Scenario:
    """Build and validate a `Scenario` from an already-loaded document."""
    if not isinstance(doc, Mapping):
        raise SchemaError("$", "scenario document must be an object")
    name = str(doc.get("name", Path(source).stem if source else "scenario"))
    net, index, freq = _parse_network(_object(_section(doc, "network", ""), "network"))
    controller_doc = _object(doc.get("controller", {}), "controller")
    variant = controller_doc.get("variant", "measured")
    if variant not in VARIANTS:
        raise SchemaError("controller.variant", f"expected one of {VARIANTS}, got {variant!r}")
    plant, v_set, plant_settings = _parse_plant(_section(doc, "machines", ""), controller_doc, net, index, freq)
    events = _parse_events(doc.get("events", []), net, index, plant)
    sim = _parse_sim(_object(doc.get("sim", {}), "sim"), variant)
    output = _parse_output(_object(doc.get("outputs", {}), "outputs"), name)

    settings = {
        "name": name,
        "base_mva": net.base_power,
        "frequency_hz": freq,
        "variant": variant,
        "sim": asdict(sim),
        "outputs": asdict(output),
        **plant_settings,
        "events": [{"kind": type(e).__name__, **asdict(e)} for e in events],
    }
    scenario = Scenario(
        name=name,
        network=net,
        plant=plant,
        v_set=v_set,
        events=events,
        sim=sim,
        output=output,
        description=str(doc.get("description", "")),
        settings=settings,
        source=source,
    )
    validate_scenario(scenario)
    return scenario


def parse_scenario(path: str | Path) -> Scenario:
    """Read a scenario file and return the validated `Scenario`.

    Raises:
        SchemaError: malformed document (the path names the offending field).
        ValidationError: a modelling assumption is violated.
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            doc = json5.load(f)
    except ValueError as err:
        raise SchemaError(str(path), f"not a valid JSON document: {err}") from err
    return scenario_from_dict(doc, source=str(path))
