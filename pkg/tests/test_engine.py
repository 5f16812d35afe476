# tests/test_engine.py
"""
Closed-loop integrator on the four-bus system:
- the initialized operating point is a fixed point of the RK4 step,
- the step converges at fourth order,
- events edit the network and the controller state consistently,
- runs are deterministic and stop cleanly on divergence.
"""

import math

import numpy as np
import pytest

from gridsync.config import SimulationConfig, VoltageSolverTuning
from gridsync.dispatch import DispatchProblem, solve_sfc
from gridsync.engine import (
    GeneratorTrip,
    LineReclose,
    LineTrip,
    LoadStep,
    apply_event,
    initialize,
    pack_state,
    simulate,
    step,
)
from gridsync.errors import DisconnectedAfterEvent, SimulationDiverged
from gridsync.machines import electrical_power
from gridsync.network import GeneratorTerminals, reactive_residual, susceptance_matrix

from .common.builders import small_system


# ---------- Helpers ----------
def _initialized(**net_kwargs):
    net, plant, v_set = small_system(**net_kwargs)
    plant, state = initialize(net, plant, v_set)
    return net, plant, state


def _perturbed(state):
    s = state.copy()
    s.machines.omega[0] += 0.05
    s.machines.Pg[1] += 0.02
    s.controller.mu[0] -= 0.01
    return s


def _integrate(net, plant, state, dt, t_end, variant, tuning=None):
    s = state
    for _ in range(int(round(t_end / dt))):
        s = step(net, plant, s, dt, variant, tuning)
    return s


def _config(**over):
    base = dict(dt=0.01, t_end=1.0, sample_every_n_steps=10, variant="oracle")
    base.update(over)
    return SimulationConfig(**base)


# ---------- Initialization ----------
def test_initial_point_matches_dispatch_and_setpoints():
    net, plant, state = _initialized()
    bank = plant.machines
    sol = solve_sfc(DispatchProblem(plant.costs, bank.p_min[:2], bank.p_max[:2], 1.0))
    assert state.machines.Pg[:2] == pytest.approx(sol.pg, abs=1e-12)
    assert state.machines.Pg[2] == pytest.approx(0.3)
    assert state.controller.mu == pytest.approx(np.full(2, sol.lam))
    assert np.all(state.controller.z == 0.0)
    assert state.algebraic.v[:3] == pytest.approx([1.02, 1.02, 1.0], abs=1e-9)
    assert np.array_equal(bank.pg_ref, state.machines.Pg)
    assert np.array_equal(bank.Ef_ref, state.machines.Ef)

    pe, _ = electrical_power(bank, state.machines, state.algebraic.v[bank.bus], state.algebraic.theta[bank.bus])
    assert pe == pytest.approx(state.machines.Pg, abs=1e-9)
    assert np.max(np.abs(state.algebraic.omega_tilde)) < 1e-9


@pytest.mark.parametrize("variant", ["oracle", "measured", "agc"])
def test_equilibrium_is_a_fixed_point(variant):
    net, plant, state = _initialized()
    after = step(net, plant, state, 0.01, variant)
    assert np.max(np.abs(pack_state(after) - pack_state(state))) < 1e-10
    assert after.time == pytest.approx(0.01)


# ---------- Integration order ----------
@pytest.mark.parametrize("variant", ["oracle", "measured"])
def test_rk4_converges_at_fourth_order(variant):
    net, plant, state = _initialized()
    start = _perturbed(state)
    tuning = VoltageSolverTuning(tol_q=1e-12)
    finals = [pack_state(_integrate(net, plant, start, dt, 1.2, variant, tuning)) for dt in (0.04, 0.02, 0.01)]
    e1 = np.max(np.abs(finals[0] - finals[1]))
    e2 = np.max(np.abs(finals[1] - finals[2]))
    order = math.log2(e1 / e2)
    assert order >= 3.5


def test_voltage_residual_stays_below_tolerance():
    net, plant, state = _initialized()
    s = _integrate(net, plant, _perturbed(state), 0.01, 0.5, "measured")
    bank = plant.machines
    terms = GeneratorTerminals(bus=bank.bus, eq_p=s.machines.Eq_p, delta=s.machines.delta, x_dp=bank.x_dp)
    residual = reactive_residual(net, terms, s.algebraic.theta, s.algebraic.v)
    assert np.max(np.abs(residual)) < 1e-9


def test_load_step_trajectory_converges_in_dt():
    net, plant, state = _initialized()
    events = [LoadStep(at=0.5, bus=3, dp=0.1)]
    coarse = simulate(net, plant, state, events, _config(dt=0.01, t_end=1.5))
    fine = simulate(net, plant, state, events, _config(dt=0.001, t_end=1.5, sample_every_n_steps=100))
    diff = np.max(np.abs(pack_state(coarse.final.state) - pack_state(fine.final.state)))
    assert diff < 1e-5


# ---------- Events ----------
def test_zero_load_step_changes_nothing():
    net, plant, state = _initialized()
    new_net, new_state = apply_event(net, plant, state, LoadStep(at=0.0, bus=3, dp=0.0))
    assert new_net == net
    assert np.array_equal(pack_state(new_state), pack_state(state))
    assert np.allclose(new_state.algebraic.omega_tilde, state.algebraic.omega_tilde, atol=1e-14)


def test_load_step_shares_virtual_demand():
    net, plant, state = _initialized()
    new_net, new_state = apply_event(net, plant, state, LoadStep(at=0.0, bus=3, dp=0.2))
    assert new_net.p[3] == pytest.approx(net.p[3] + 0.2)
    assert new_state.controller.p_hat == pytest.approx(state.controller.p_hat + 0.1)
    # the unbalanced load shows up as a negative bus frequency at once
    assert new_state.algebraic.omega_tilde[3] < 0.0


def test_line_trip_and_reclose_round_trip():
    net, plant, state = _initialized()
    tripped, s1 = apply_event(net, plant, state, LineTrip(at=0.0, i=0, j=1))
    assert not tripped.lines[3].in_service
    restored, _ = apply_event(tripped, plant, s1, LineReclose(at=0.0, i=1, j=0))
    assert np.array_equal(susceptance_matrix(restored), susceptance_matrix(net))
    with pytest.raises(ValueError, match="already in service"):
        apply_event(restored, plant, s1, LineReclose(at=0.0, i=0, j=1))


def test_islanding_trip_rejected():
    net, plant, state = _initialized()
    with pytest.raises(DisconnectedAfterEvent):
        apply_event(net, plant, state, LineTrip(at=0.0, i=2, j=3))


def test_droop_trip_moves_setpoint_into_virtual_demand():
    net, plant, state = _initialized()
    new_net, s = apply_event(net, plant, state, GeneratorTrip(at=0.0, machine=2))
    assert not s.online[2]
    assert new_net.buses[2].kind == "load"
    assert s.controller.p_hat.sum() == pytest.approx(state.controller.p_hat.sum() + 0.3)
    with pytest.raises(ValueError, match="already offline"):
        apply_event(new_net, plant, s, GeneratorTrip(at=0.0, machine=2))

    after = step(new_net, plant, s, 0.01, "oracle")
    for name in ("delta", "omega", "Eq_p", "Pg", "Ef"):
        assert getattr(after.machines, name)[2] == getattr(s.machines, name)[2]


def test_controllable_trip_hands_over_share():
    net, plant, state = _initialized()
    new_net, s = apply_event(net, plant, state, GeneratorTrip(at=0.0, machine=1))
    assert s.controller.p_hat[1] == 0.0
    assert s.controller.p_hat[0] == pytest.approx(state.controller.p_hat.sum())
    assert not new_net.comm_edges[0].in_service


# ---------- Runs ----------
def test_samples_bracket_each_event():
    net, plant, state = _initialized()
    traj = simulate(net, plant, state, [LoadStep(at=0.5, bus=3, dp=0.1)], _config(t_end=1.0))
    at_event = [s for s in traj.samples if s.time == pytest.approx(0.5)]
    assert [s.network_index for s in at_event] == [0, 1]
    assert traj.final.time == pytest.approx(1.0)
    assert len(traj.networks) == 2 and traj.events[0].at == 0.5


def test_runs_are_deterministic():
    net, plant, state = _initialized()
    events = [LoadStep(at=0.2, bus=3, dp=0.1)]
    a = simulate(net, plant, state, events, _config(t_end=0.6, variant="measured"))
    b = simulate(net, plant, state, events, _config(t_end=0.6, variant="measured"))
    assert np.array_equal(pack_state(a.final.state), pack_state(b.final.state))
    assert np.array_equal(a.times, b.times)


def test_quiet_run_stays_at_equilibrium():
    net, plant, state = _initialized()
    traj = simulate(net, plant, state, [], _config(t_end=0.5))
    assert max(float(np.max(np.abs(s.state.machines.omega))) for s in traj.samples) < 1e-10


def test_divergence_carries_partial_trajectory():
    net, plant, state = _initialized()
    wild = state.copy()
    wild.machines.omega[0] = 20.0
    with pytest.raises(SimulationDiverged) as info:
        simulate(net, plant, wild, [], _config(t_end=1.0))
    assert info.value.time == pytest.approx(0.01)
    assert info.value.partial is not None
    assert len(info.value.partial.samples) == 1
