"""Run monitors: energy function, potential-Hessian condition, steady state and audits.

The energy function is W = W_k + W_p + Σ S_ω + Σ S_E/(T′_d0(x_d − x′_d)) where
W_p is the potential W̃_p minus its tangent plane at the equilibrium. W̃_p is
written over (E′_q, V, δ, θ) so that ∂W̃_p/∂θ_i = −ΔP_i and ∂W̃_p/∂V_i = −ΔQ_i/V_i.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np
from scipy import linalg

from .controller import beta_bound
from .dispatch import DispatchProblem, kkt_residual
from .engine import Plant, SystemState, pack_state
from .machines import MachineState, electrical_power
from .network import AlgebraicState, NetworkModel
from .results import MonitorSample, SteadyStateSummary, Trajectory

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class LyapunovTerms:
    """Components of W at one state.

    Attributes:
        kinetic: ½Mω² plus the gain-weighted controller deviations.
        potential: W_p (Bregman form of the network potential).
        droop_storage: Σ S_ω over uncontrollable machines.
        exciter_storage: Σ S_E/(T′_d0(x_d − x′_d)) over all machines.
    """

    kinetic: float
    potential: float
    droop_storage: float
    exciter_storage: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential + self.droop_storage + self.exciter_storage


def _potential(net: NetworkModel, plant: Plant, state: SystemState) -> tuple[float, np.ndarray]:
    """Return W̃_p and its gradient stacked as (E′_q online, V, δ online, θ)."""
    bank = plant.machines
    on = state.online
    theta, v = state.algebraic.theta, state.algebraic.v
    bus = bank.bus[on]
    e = np.asarray(state.machines.Eq_p)[on]
    d = np.asarray(state.machines.delta)[on]
    xp, xd = bank.x_dp[on], bank.x_d[on]
    f, t, b = net.live_lines
    n = net.n_bus

    shunt = np.bincount(f, b, n) + np.bincount(t, b, n) + np.bincount(bus, 1.0 / xp, n)
    cl, sl = np.cos(theta[f] - theta[t]), np.sin(theta[f] - theta[t])
    cg, sg = np.cos(d - theta[bus]), np.sin(d - theta[bus])
    vb = v[bus]
    internal = xd / (xp * (xd - xp))

    value = (
        0.5 * np.dot(shunt, v * v)
        + np.dot(net.p, theta)
        + np.dot(net.q, np.log(v))
        - np.sum(b * v[f] * v[t] * cl)
        - np.sum(e * vb * cg / xp)
        + 0.5 * np.sum(internal * e * e)
    )
    g_e = internal * e - vb * cg / xp
    g_v = (
        shunt * v
        + net.q / v
        - np.bincount(f, b * v[t] * cl, n)
        - np.bincount(t, b * v[f] * cl, n)
        - np.bincount(bus, e * cg / xp, n)
    )
    g_d = e * vb * sg / xp
    flow = b * v[f] * v[t] * sl
    g_theta = net.p + np.bincount(f, flow, n) - np.bincount(t, flow, n) - np.bincount(bus, e * vb * sg / xp, n)
    return float(value), np.concatenate([g_e, g_v, g_d, g_theta])


def _potential_point(plant: Plant, state: SystemState) -> np.ndarray:
    on = state.online
    return np.concatenate(
        [
            np.asarray(state.machines.Eq_p)[on],
            state.algebraic.v,
            np.asarray(state.machines.delta)[on],
            state.algebraic.theta,
        ]
    )


def lyapunov_value(net: NetworkModel, plant: Plant, state: SystemState, equilibrium: SystemState) -> LyapunovTerms:
    """Evaluate W at `state` relative to `equilibrium` on network `net`.

    Raises:
        ValueError: non-positive voltages, or online masks that differ.
    """
    if np.any(state.algebraic.v <= 0.0) or np.any(equilibrium.algebraic.v <= 0.0):
        raise ValueError("Energy function needs strictly positive voltages")
    if not np.array_equal(state.online, equilibrium.online):
        raise ValueError("State and equilibrium have different machines online")
    bank = plant.machines
    on = state.online
    m, ms = state.machines, equilibrium.machines
    c, cs = state.controller, equilibrium.controller

    d_omega = np.asarray(m.omega) - np.asarray(ms.omega)
    d_pg = np.asarray(m.Pg) - np.asarray(ms.Pg)
    d_ef = np.asarray(m.Ef) - np.asarray(ms.Ef)
    kinetic = 0.5 * np.sum((bank.M * d_omega * d_omega)[on])

    ctrl = plant.controllers
    live = on[ctrl]
    for i, k in enumerate(ctrl):
        if not live[i]:
            continue
        g = plant.gains[i]
        kinetic += 0.5 * d_pg[k] ** 2 / g.k_pg
        kinetic += 0.5 * (c.mu[i] - cs.mu[i]) ** 2 / g.k_mu
        kinetic += 0.5 * ((c.gamma_minus[i] - cs.gamma_minus[i]) ** 2 + (c.gamma_plus[i] - cs.gamma_plus[i]) ** 2) / g.k_gamma
    for e, edge in enumerate(net.comm_edges):
        if edge.in_service:
            owner = int(np.flatnonzero(plant.controller_buses == edge.i)[0])
            kinetic += 0.5 * (c.z[e] - cs.z[e]) ** 2 / plant.gains[owner].k_z

    droop = on & ~bank.controllable
    droop_storage = 0.5 * float(np.sum(d_pg[droop] ** 2))
    exciter_weight = 1.0 / (bank.k_E * bank.T_d0p * (bank.x_d - bank.x_dp))
    exciter_storage = 0.5 * float(np.sum((exciter_weight * d_ef * d_ef)[on]))

    w_x, _ = _potential(net, plant, state)
    w_star, g_star = _potential(net, plant, equilibrium)
    x, x_star = _potential_point(plant, state), _potential_point(plant, equilibrium)
    potential = w_x - w_star - float(np.dot(g_star, x - x_star))
    return LyapunovTerms(float(kinetic), float(potential), droop_storage, exciter_storage)


def potential_hessian(net: NetworkModel, plant: Plant, state: SystemState) -> np.ndarray:
    """Assemble the Hessian of W_p in augmented-edge coordinates.

    Variables are one angle difference η per in-service line and per online
    machine (internal edge from the E′_q node to its bus), followed by the bus
    voltages and the internal voltages E′_q.
    """
    bank = plant.machines
    on = np.flatnonzero(state.online)
    theta, v = state.algebraic.theta, state.algebraic.v
    n = net.n_bus
    f, t, b = net.live_lines

    # Augmented graph: internal node of machine k gets voltage index n + position.
    node_a = np.concatenate([f, n + np.arange(len(on))])
    node_b = np.concatenate([t, bank.bus[on]])
    weight = np.concatenate([b, 1.0 / bank.x_dp[on]])
    v_hat = np.concatenate([v, np.asarray(state.machines.Eq_p)[on]])
    eta = np.concatenate([theta[f] - theta[t], np.asarray(state.machines.delta)[on] - theta[bank.bus[on]]])

    m = len(weight)
    size = m + n + len(on)
    hess = np.zeros((size, size))
    edges = np.arange(m)
    va, vb = v_hat[node_a], v_hat[node_b]
    cos_eta, sin_eta = np.cos(eta), np.sin(eta)

    hess[edges, edges] = weight * va * vb * cos_eta
    ia, ib = m + node_a, m + node_b
    np.add.at(hess, (edges, ia), weight * vb * sin_eta)
    np.add.at(hess, (edges, ib), weight * va * sin_eta)
    np.add.at(hess, (ia, edges), weight * vb * sin_eta)
    np.add.at(hess, (ib, edges), weight * va * sin_eta)
    np.add.at(hess, (ia, ib), -weight * cos_eta)
    np.add.at(hess, (ib, ia), -weight * cos_eta)

    shunt = np.bincount(node_a, weight, n + len(on)) + np.bincount(node_b, weight, n + len(on))
    diag = shunt[:n] - net.q / (v * v)
    x_d, x_dp = bank.x_d[on], bank.x_dp[on]
    internal = x_d / (x_dp * (x_d - x_dp))
    hess[m + np.arange(n), m + np.arange(n)] += diag
    hess[m + n + np.arange(len(on)), m + n + np.arange(len(on))] += internal
    return hess


def hessian_check_a4(net: NetworkModel, plant: Plant, state: SystemState) -> tuple[float, bool]:
    """Return the smallest eigenvalue of the potential Hessian and whether it is positive."""
    if np.any(state.algebraic.v <= 0.0):
        raise ValueError("Hessian check needs strictly positive voltages")
    min_eig = float(linalg.eigvalsh(potential_hessian(net, plant, state))[0])
    return min_eig, min_eig > 0.0


def _mean_state(states: list[SystemState]) -> SystemState:
    def avg(values) -> np.ndarray:
        return np.mean(np.array([np.asarray(x, dtype=float) for x in values]), axis=0)

    last = states[-1]
    machines = MachineState(*(avg(getattr(s.machines, f.name) for s in states) for f in fields(MachineState)))
    controller = last.controller.copy()
    for name in ("mu", "z", "gamma_minus", "gamma_plus"):
        setattr(controller, name, avg(getattr(s.controller, name) for s in states))
    algebraic = AlgebraicState(
        theta=avg(s.algebraic.theta for s in states),
        v=avg(s.algebraic.v for s in states),
        omega_tilde=avg(s.algebraic.omega_tilde for s in states),
    )
    return SystemState(
        time=last.time,
        machines=machines,
        algebraic=algebraic,
        controller=controller,
        online=last.online.copy(),
        agc_offset=avg(s.agc_offset for s in states),
    )


def _mu_spread(plant: Plant, state: SystemState) -> float:
    mu = state.controller.mu[state.online[plant.controllers]]
    return float(np.ptp(mu)) if mu.size else 0.0


def detect_steady_state(trajectory: Trajectory, window: float = 5.0, tol: float = 1e-6) -> SteadyStateSummary:
    """Decide whether the trailing `window` seconds of a run form an equilibrium.

    Only samples on the final topology count. The returned equilibrium is the
    window average.
    """
    if not trajectory.samples:
        raise ValueError("Trajectory has no samples")
    tail = trajectory.after_last_event()
    t_last = tail[-1].time
    window_samples = [s for s in tail if s.time >= t_last - window - 1e-12]
    states = [s.state for s in window_samples]
    equilibrium = _mean_state(states)
    plant = trajectory.plant

    max_omega = max(float(np.max(np.abs(np.asarray(s.machines.omega)[s.online]), initial=0.0)) for s in states)
    max_omega_tilde = max(float(np.max(np.abs(s.algebraic.omega_tilde))) for s in states)
    spread = max(_mu_spread(plant, s) for s in states)
    max_rate = 0.0
    for s0, s1 in zip(window_samples, window_samples[1:]):
        h = s1.time - s0.time
        if h > 0.0:
            rate = np.abs(pack_state(s1.state) - pack_state(s0.state)) / h
            max_rate = max(max_rate, float(rate.max()))

    converged = (
        len(window_samples) >= 2
        and window_samples[-1].time - window_samples[0].time >= 0.5 * window
        and max(max_omega, max_omega_tilde, spread, max_rate) < tol
    )
    logger.debug(
        "steady-state window: |w|=%.3e |w~|=%.3e mu spread=%.3e rate=%.3e",
        max_omega, max_omega_tilde, spread, max_rate,
    )
    return SteadyStateSummary(
        converged=bool(converged),
        equilibrium=equilibrium,
        max_omega=max_omega,
        max_omega_tilde=max_omega_tilde,
        mu_spread=spread,
        max_rate=max_rate,
    )


def closed_loop_kkt(plant: Plant, state: SystemState):
    """KKT report of the controllers' point for the demand they currently cover."""
    live = state.online[plant.controllers]
    ctrl = plant.controllers[live]
    bank = plant.machines
    pg = np.asarray(state.machines.Pg)[ctrl]
    problem = DispatchProblem(
        costs=tuple(c for c, ok in zip(plant.costs, live) if ok),
        p_min=bank.p_min[ctrl],
        p_max=bank.p_max[ctrl],
        demand=float(pg.sum()),
    )
    c = state.controller
    report = kkt_residual(problem, pg, c.mu[live], c.gamma_minus[live], c.gamma_plus[live])
    return problem, report


def max_frequency_deviation(state: SystemState) -> float:
    omega = np.abs(np.asarray(state.machines.omega)[state.online])
    return max(float(omega.max(initial=0.0)), float(np.max(np.abs(state.algebraic.omega_tilde))))


def compute_monitors(trajectory: Trajectory) -> list[MonitorSample]:
    """Evaluate every monitor at every recorded sample.

    W is filled in only for samples on the final topology, and only when the
    run has a converged steady state and a controller with an energy function
    (not the AGC baseline).
    """
    plant = trajectory.plant
    steady = trajectory.steady
    with_energy = steady is not None and steady.converged and trajectory.variant != "agc"
    final_index = len(trajectory.networks) - 1
    out: list[MonitorSample] = []
    for sample in trajectory.samples:
        state = sample.state
        net = trajectory.network_of(sample)
        _, report = closed_loop_kkt(plant, state)
        min_eig, _ = hessian_check_a4(net, plant, state)
        w = None
        if with_energy and sample.network_index == final_index:
            w = lyapunov_value(net, plant, state, steady.equilibrium).total
        out.append(
            MonitorSample(
                time=sample.time,
                kkt_residual=report.max,
                max_freq_dev=max_frequency_deviation(state),
                mu_spread=_mu_spread(plant, state),
                hessian_min_eig=min_eig,
                lyapunov=w,
            )
        )
    for cur, nxt in zip(out, out[1:]):
        h = nxt.time - cur.time
        if cur.lyapunov is not None and nxt.lyapunov is not None and h > 0.0:
            cur.lyapunov_rate = (nxt.lyapunov - cur.lyapunov) / h
    return out


@dataclass(slots=True)
class LyapunovAudit:
    """Monotonicity of W and the A4 margin along a run.

    Attributes:
        intervals: Number of finite-difference intervals audited.
        fraction_ok: Share of intervals with slope ≤ `threshold`.
        max_slope: Largest finite-difference slope of W.
        threshold: Allowed slope, 1e−6·max|W|.
        a4_everywhere: The potential Hessian was positive definite at every sample.
    """

    intervals: int
    fraction_ok: float
    max_slope: float
    threshold: float
    a4_everywhere: bool

    @property
    def passed(self) -> bool:
        return self.intervals > 0 and self.fraction_ok >= 0.99 and self.a4_everywhere


def lyapunov_audit(monitors: list[MonitorSample], rel_tol: float = 1e-6) -> LyapunovAudit:
    values = [m.lyapunov for m in monitors if m.lyapunov is not None]
    slopes = [m.lyapunov_rate for m in monitors if m.lyapunov_rate is not None]
    threshold = rel_tol * max((abs(w) for w in values), default=0.0)
    ok = sum(1 for s in slopes if s <= threshold)
    return LyapunovAudit(
        intervals=len(slopes),
        fraction_ok=ok / len(slopes) if slopes else 0.0,
        max_slope=max(slopes, default=0.0),
        threshold=threshold,
        a4_everywhere=all(m.hessian_min_eig > 0.0 for m in monitors),
    )


@dataclass(slots=True)
class DisturbanceRatio:
    """Empirical |P_e − P*_e|/|ω| of one controllable machine against its admissible gain."""

    machine: str
    max_ratio: float
    bound: float
    samples: int

    @property
    def within_bound(self) -> bool:
        return self.max_ratio < self.bound


def disturbance_ratio_audit(trajectory: Trajectory, omega_floor: float = 1e-4) -> list[DisturbanceRatio]:
    """Report the disturbance gain seen by each controllable machine after the last event."""
    steady = trajectory.steady
    if steady is None:
        raise ValueError("Disturbance audit needs a steady-state summary")
    plant = trajectory.plant
    bank = plant.machines
    eq = steady.equilibrium
    pe_star, _ = electrical_power(bank, eq.machines, eq.algebraic.v[bank.bus], eq.algebraic.theta[bank.bus])
    tail = trajectory.after_last_event()
    reports = []
    for i, k in enumerate(plant.controllers):
        if not eq.online[k]:
            continue
        ratios = []
        for sample in tail:
            s = sample.state
            omega = float(np.asarray(s.machines.omega)[k])
            if abs(omega) <= omega_floor:
                continue
            b = bank.bus[k]
            pe, _ = electrical_power(bank.params(k), s.machines.at(k), s.algebraic.v[b], s.algebraic.theta[b])
            ratios.append(abs(pe - pe_star[k]) / abs(omega))
        try:
            bound = beta_bound(plant.gains[i].tau, float(bank.D[k]), plant.costs[i].lipschitz)
        except ValueError:
            bound = float("nan")
        reports.append(DisturbanceRatio(bank.names[k], max(ratios, default=0.0), bound, len(ratios)))
    return reports
