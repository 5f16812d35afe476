# tests/test_scenario.py
"""
Scenario documents: bundled files, defaults, unit conversion, schema errors
and the modelling-assumption checks.
"""

import copy
import math

import json5
import numpy as np
import pytest

from gridsync.engine import GeneratorTrip, LineReclose, LineTrip, LoadStep
from gridsync.errors import SchemaError, ValidationError
from gridsync.network import check_connectivity
from gridsync.scenario import controllable_demand_stages, parse_scenario, scenario_from_dict
from gridsync.scenarios import SCENARIO_DIR, bundled_path


# ---------- Helpers ----------
def _doc(name="desk4"):
    return json5.loads(bundled_path(name).read_text(encoding="utf-8"))


def _without(doc, section, key):
    out = copy.deepcopy(doc)
    out[section].pop(key)
    return out


# ---------- Bundled scenarios ----------
@pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_every_bundled_scenario_parses(path):
    scenario = parse_scenario(path)
    assert scenario.name == path.stem
    assert check_connectivity(scenario.network) == (True, True)


def test_ne39_layout():
    scenario = parse_scenario(bundled_path("ne39"))
    bank = scenario.plant.machines
    assert scenario.network.n_bus == 39
    assert len(bank) == 10
    assert [bank.names[k] for k in scenario.plant.controllers] == ["G32", "G36", "G38", "G39"]
    assert len(scenario.network.comm_edges) == 4
    assert scenario.sim.dt == 0.002
    assert len(scenario.events) == 5 and all(isinstance(e, LoadStep) for e in scenario.events)


def test_ne39_demand_stages():
    scenario = parse_scenario(bundled_path("ne39"))
    base = scenario.network.base_power
    (_, d0, lo, hi), *rest = controllable_demand_stages(scenario)
    assert d0 * base == pytest.approx(3114.0, abs=0.5)
    assert hi * base == pytest.approx(3930.0)
    assert rest[-1][1] * base == pytest.approx(3414.0, abs=0.5)


def test_bundled_path_lists_available():
    with pytest.raises(FileNotFoundError, match="desk4"):
        bundled_path("nope")


def test_events_in_bus_ids_and_mw():
    scenario = parse_scenario(bundled_path("desk4_line"))
    trip, reclose = scenario.events
    net = scenario.network
    assert isinstance(trip, LineTrip) and isinstance(reclose, LineReclose)
    assert {net.buses[trip.i].id, net.buses[trip.j].id} == {6, 7}
    stepped = parse_scenario(bundled_path("desk4"))
    assert stepped.events[0].dp == pytest.approx(0.6)
    tripped = parse_scenario(bundled_path("desk4_trip"))
    assert tripped.events == (GeneratorTrip(at=5.0, machine=0),)


# ---------- Defaults and units ----------
def test_missing_sim_settings_take_defaults():
    scenario = scenario_from_dict(_without(_doc(), "sim", "dt"))
    assert scenario.sim.dt == 0.002
    assert scenario.sim.solver.tol_q == 1e-9
    assert scenario.settings["sim"]["dt"] == 0.002


def test_inertia_from_h_and_per_unit_costs():
    scenario = scenario_from_dict(_doc())
    bank = scenario.plant.machines
    assert bank.M[0] == pytest.approx(2.0 * 15.0 / (2.0 * math.pi * 60.0))
    assert bank.p_max[0] == pytest.approx(5.0)
    cost = scenario.plant.costs[0]
    assert cost.a == pytest.approx(0.00009 * 100.0**2)
    assert cost.b == pytest.approx(0.032 * 100.0)
    assert scenario.plant.gains[0].tau == pytest.approx(3.0 / cost.a)
    assert bank.pg_ref[4] == pytest.approx(3.0)


def test_agc_shares_normalized():
    doc = _doc()
    doc["controller"]["agc"]["shares"] = [1, 1, 1, 1]
    assert scenario_from_dict(doc).plant.agc.shares == (0.25, 0.25, 0.25, 0.25)


def test_events_sorted_by_time():
    doc = _doc()
    doc["events"] = [
        {"at": 9.0, "kind": "load_step", "bus": 6, "dp_mw": 10.0},
        {"at": 2.0, "kind": "load_step", "bus": 7, "dp_mw": 10.0},
    ]
    assert [e.at for e in scenario_from_dict(doc).events] == [2.0, 9.0]


# ---------- Schema errors ----------
def test_unknown_line_endpoint_names_the_field():
    doc = _doc()
    doc["network"]["lines"][2]["to"] = 99
    with pytest.raises(SchemaError) as info:
        scenario_from_dict(doc)
    assert info.value.path == "network.lines[2].to"


def test_non_numeric_field_rejected():
    doc = _doc()
    doc["machines"][0]["x_d"] = "big"
    with pytest.raises(SchemaError, match=r"machines\[0\]\.x_d"):
        scenario_from_dict(doc)


def test_empty_network_rejected():
    doc = _doc()
    doc["network"]["buses"] = []
    with pytest.raises(SchemaError, match="network.buses"):
        scenario_from_dict(doc)


def test_reclose_without_trip_rejected():
    doc = _doc()
    doc["events"] = [{"at": 3.0, "kind": "line_reclose", "from": 6, "to": 7}]
    with pytest.raises(SchemaError, match="reclose"):
        scenario_from_dict(doc)


def test_unknown_event_kind_rejected():
    doc = _doc()
    doc["events"] = [{"at": 3.0, "kind": "earthquake"}]
    with pytest.raises(SchemaError, match="events\\[0\\].kind"):
        scenario_from_dict(doc)


@pytest.mark.parametrize(
    "section, key, where",
    [
        ("network", "buses", "network.buses[0]"),
        ("network", "lines", "network.lines[0]"),
        (None, "machines", "machines[0]"),
        (None, "events", "events[0]"),
    ],
)
def test_non_object_entry_names_its_path(section, key, where):
    doc = _doc()
    (doc[section] if section else doc)[key][0] = 5
    with pytest.raises(SchemaError) as info:
        scenario_from_dict(doc)
    assert info.value.path == where


def test_non_object_cost_names_its_path():
    doc = _doc()
    doc["machines"][1]["cost"] = [0.0004, 0.02]
    with pytest.raises(SchemaError) as info:
        scenario_from_dict(doc)
    assert info.value.path == "machines[1].cost"


def test_invalid_json_reported_as_schema_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ network: [", encoding="utf-8")
    with pytest.raises(SchemaError):
        parse_scenario(path)


def test_comments_allowed(tmp_path):
    path = tmp_path / "commented.json"
    path.write_text("// header\n" + bundled_path("desk4").read_text(encoding="utf-8"), encoding="utf-8")
    assert parse_scenario(path).name == "desk4"


# ---------- Assumption checks ----------
def test_split_comm_graph_is_a1():
    doc = _doc()
    doc["network"]["comm_edges"] = [[1, 2], [3, 4]]
    with pytest.raises(ValidationError) as info:
        scenario_from_dict(doc)
    assert info.value.assumption == "A1"


def test_demand_beyond_capacity_is_a3():
    doc = _doc()
    doc["events"] = [{"at": 5.0, "kind": "load_step", "bus": 6, "dp_mw": 1000.0}]
    with pytest.raises(ValidationError) as info:
        scenario_from_dict(doc)
    assert info.value.assumption == "A3"


def test_trip_that_leaves_too_little_capacity_is_a3():
    doc = _doc()
    doc["events"] = [
        {"at": 5.0, "kind": "generator_trip", "machine": "G4"},
        {"at": 6.0, "kind": "generator_trip", "machine": "G1"},
    ]
    with pytest.raises(ValidationError, match="A3"):
        scenario_from_dict(doc)


def test_estimator_damping_window_is_a5():
    doc = _doc()
    doc["controller"]["gains"]["tau"] = 1e6
    with pytest.raises(ValidationError) as info:
        scenario_from_dict(doc)
    assert info.value.assumption == "A5"
    doc["controller"]["variant"] = "oracle"
    assert scenario_from_dict(doc).sim.variant == "oracle"


def test_islanded_network_rejected():
    doc = _doc()
    doc["network"]["lines"] = [ln for ln in doc["network"]["lines"] if 5 not in (ln["from"], ln["to"])]
    with pytest.raises(ValidationError) as info:
        scenario_from_dict(doc)
    assert info.value.assumption == "network"


def test_demand_stage_walk_follows_events():
    scenario = scenario_from_dict(_doc("desk4_trip"))
    stages = controllable_demand_stages(scenario)
    assert len(stages) == 2
    (_, d0, _, hi0), (t1, d1, _, hi1) = stages
    assert d0 == pytest.approx(d1)
    assert hi1 == pytest.approx(hi0 - 5.0)
    assert t1 == 5.0
    assert np.isfinite(d0)
