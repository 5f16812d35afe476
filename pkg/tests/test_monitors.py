# tests/test_monitors.py
"""
Energy function, potential Hessian, steady-state detection and the run audits,
evaluated on hand-made states of the four-bus system.
"""

import numpy as np
import pytest

from gridsync.config import SimulationConfig
from gridsync.engine import LoadStep, initialize, simulate
from gridsync.monitors import (
    closed_loop_kkt,
    compute_monitors,
    detect_steady_state,
    disturbance_ratio_audit,
    hessian_check_a4,
    lyapunov_audit,
    lyapunov_value,
    max_frequency_deviation,
    potential_hessian,
)
from gridsync.results import MonitorSample

from .common.builders import at_time, small_system, trajectory_of


# ---------- Helpers ----------
def _initialized():
    net, plant, v_set = small_system()
    plant, state = initialize(net, plant, v_set)
    return net, plant, state


def _monitor(t, w, eig=1.0):
    return MonitorSample(time=t, kkt_residual=0.0, max_freq_dev=0.0, mu_spread=0.0, hessian_min_eig=eig, lyapunov=w)


# ---------- Energy function ----------
def test_energy_vanishes_at_equilibrium():
    net, plant, state = _initialized()
    terms = lyapunov_value(net, plant, state, state)
    assert terms.total == pytest.approx(0.0, abs=1e-12)


def test_kinetic_term_of_a_frequency_kick():
    net, plant, state = _initialized()
    kicked = state.copy()
    kicked.machines.omega[1] = 0.2
    terms = lyapunov_value(net, plant, kicked, state)
    assert terms.kinetic == pytest.approx(0.5 * plant.machines.M[1] * 0.04, rel=1e-12)
    assert terms.potential == pytest.approx(0.0, abs=1e-12)


def test_controller_terms_are_gain_weighted():
    net, plant, state = _initialized()
    moved = state.copy()
    moved.controller.mu[0] += 0.1
    moved.controller.z[0] += 0.2
    terms = lyapunov_value(net, plant, moved, state)
    g = plant.gains[0]
    assert terms.kinetic == pytest.approx(0.5 * 0.01 / g.k_mu + 0.5 * 0.04 / g.k_z)


def test_potential_is_locally_quadratic_and_positive():
    net, plant, state = _initialized()
    values = []
    for eps in (1e-2, 5e-3):
        moved = state.copy()
        moved.algebraic.v[3] += eps
        moved.machines.delta[0] += eps
        values.append(lyapunov_value(net, plant, moved, state).potential)
    assert values[0] > 0.0 and values[1] > 0.0
    assert values[0] / values[1] == pytest.approx(4.0, rel=0.05)


def test_storage_terms_follow_setpoint_offsets():
    net, plant, state = _initialized()
    moved = state.copy()
    moved.machines.Pg[2] += 0.1
    moved.machines.Ef[0] += 0.1
    terms = lyapunov_value(net, plant, moved, state)
    bank = plant.machines
    assert terms.droop_storage == pytest.approx(0.005)
    weight = 1.0 / (bank.k_E[0] * bank.T_d0p[0] * (bank.x_d[0] - bank.x_dp[0]))
    assert terms.exciter_storage == pytest.approx(0.5 * weight * 0.01)


def test_energy_rejects_bad_inputs():
    net, plant, state = _initialized()
    bad = state.copy()
    bad.algebraic.v[3] = 0.0
    with pytest.raises(ValueError):
        lyapunov_value(net, plant, bad, state)
    tripped = state.copy()
    tripped.online[2] = False
    with pytest.raises(ValueError, match="online"):
        lyapunov_value(net, plant, tripped, state)


# ---------- Potential Hessian ----------
def test_hessian_symmetric_and_pd_at_operating_point():
    net, plant, state = _initialized()
    hess = potential_hessian(net, plant, state)
    assert np.allclose(hess, hess.T, atol=0.0)
    n_edges = len(net.lines) + len(plant.machines)
    assert hess.shape == (n_edges + net.n_bus + len(plant.machines),) * 2
    min_eig, ok = hessian_check_a4(net, plant, state)
    assert ok and min_eig > 0.0


def test_hessian_loses_definiteness_past_ninety_degrees():
    net, plant, state = _initialized()
    wide = state.copy()
    wide.algebraic.theta[3] = wide.algebraic.theta[2] - np.deg2rad(100.0)
    min_eig, ok = hessian_check_a4(net, plant, wide)
    assert not ok and min_eig < 0.0


def test_hessian_matches_energy_curvature():
    # second difference of W along the bus-voltage direction equals the voltage block
    net, plant, state = _initialized()
    hess = potential_hessian(net, plant, state)
    m = len(net.lines) + len(plant.machines)
    h = 1e-4
    k = 3
    w = []
    for sign in (-1.0, 0.0, 1.0):
        moved = state.copy()
        moved.algebraic.v[k] += sign * h
        w.append(lyapunov_value(net, plant, moved, state).potential)
    second = (w[0] - 2.0 * w[1] + w[2]) / (h * h)
    assert second == pytest.approx(hess[m + k, m + k], rel=1e-4)


def test_hessian_rejects_nonpositive_voltage():
    net, plant, state = _initialized()
    bad = state.copy()
    bad.algebraic.v[0] = -1.0
    with pytest.raises(ValueError):
        hessian_check_a4(net, plant, bad)


# ---------- Steady state ----------
def test_constant_tail_is_steady():
    net, plant, state = _initialized()
    states = [at_time(state, 0.5 * k) for k in range(13)]
    steady = detect_steady_state(trajectory_of(net, plant, states), window=5.0, tol=1e-6)
    assert steady.converged
    assert steady.max_rate < 1e-12
    assert np.allclose(steady.equilibrium.machines.Pg, state.machines.Pg)


def test_moving_tail_is_not_steady():
    net, plant, state = _initialized()
    states = []
    for k in range(13):
        s = at_time(state, 0.5 * k)
        s.machines.omega[0] = 1e-3 * np.cos(k)
        states.append(s)
    steady = detect_steady_state(trajectory_of(net, plant, states), window=5.0, tol=1e-6)
    assert not steady.converged
    assert steady.max_omega > 1e-4


def test_short_tail_is_not_steady():
    net, plant, state = _initialized()
    states = [at_time(state, 0.1 * k) for k in range(3)]
    assert not detect_steady_state(trajectory_of(net, plant, states), window=5.0).converged


def test_steady_detection_after_load_step():
    net, plant, state = _initialized()
    cfg = SimulationConfig(dt=0.01, t_end=2.0, sample_every_n_steps=10, variant="oracle")
    traj = simulate(net, plant, state, [LoadStep(at=1.0, bus=3, dp=0.1)], cfg)
    steady = detect_steady_state(traj, window=5.0, tol=1e-6)
    # one second after the step the loop is still moving
    assert not steady.converged
    assert steady.max_omega > 0.0


# ---------- KKT and frequency monitors ----------
def test_closed_loop_kkt_at_initial_point():
    net, plant, state = _initialized()
    problem, report = closed_loop_kkt(plant, state)
    assert problem.demand == pytest.approx(1.0, abs=1e-9)
    assert report.max < 1e-9


def test_max_frequency_deviation_uses_online_machines():
    net, plant, state = _initialized()
    s = state.copy()
    s.machines.omega[2] = 0.5
    s.online[2] = False
    s.machines.omega[0] = 0.01
    assert max_frequency_deviation(s) == pytest.approx(0.01, abs=1e-9)


def test_monitors_fill_energy_on_converged_runs():
    net, plant, state = _initialized()
    states = [at_time(state, 0.5 * k) for k in range(13)]
    traj = trajectory_of(net, plant, states)
    traj.monitors = compute_monitors(traj)
    assert len(traj.monitors) == 13
    assert all(m.lyapunov == pytest.approx(0.0, abs=1e-12) for m in traj.monitors)
    assert traj.monitors[0].lyapunov_rate == pytest.approx(0.0, abs=1e-12)
    assert traj.monitors[-1].lyapunov_rate is None

    traj.variant = "agc"
    assert all(m.lyapunov is None for m in compute_monitors(traj))


# ---------- Audits ----------
def test_lyapunov_audit_counts_increasing_intervals():
    decreasing = [_monitor(float(t), 10.0 - t) for t in range(10)]
    for cur, nxt in zip(decreasing, decreasing[1:]):
        cur.lyapunov_rate = nxt.lyapunov - cur.lyapunov
    audit = lyapunov_audit(decreasing)
    assert audit.passed and audit.fraction_ok == 1.0 and audit.intervals == 9

    bumpy = [_monitor(float(t), 10.0 - t + (3.0 if t == 5 else 0.0)) for t in range(10)]
    for cur, nxt in zip(bumpy, bumpy[1:]):
        cur.lyapunov_rate = nxt.lyapunov - cur.lyapunov
    assert not lyapunov_audit(bumpy).passed

    indefinite = [_monitor(0.0, 1.0, eig=-0.1), _monitor(1.0, 0.5)]
    indefinite[0].lyapunov_rate = -0.5
    assert not lyapunov_audit(indefinite).a4_everywhere


def test_disturbance_audit_skips_quiet_samples():
    net, plant, state = _initialized()
    traj = trajectory_of(net, plant, [at_time(state, 0.0), at_time(state, 1.0)])
    reports = disturbance_ratio_audit(traj)
    assert [r.machine for r in reports] == ["G1", "G2"]
    assert all(r.samples == 0 and r.max_ratio == 0.0 for r in reports)
    assert all(r.within_bound for r in reports)
