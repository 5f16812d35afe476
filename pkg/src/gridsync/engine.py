"""Closed-loop integration: state layout, RK4 stepping, events and scenario runs.

The differential variables (δ, ω, E′_q, P^g, E_f, θ, μ, z, γ±, AGC offsets)
are packed into one vector per stage; bus voltages are re-solved inside every
stage from the reactive balance, and ω̃ follows from the active balance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace
from typing import Sequence, Union

import numpy as np
from scipy import optimize

from .config import SimulationConfig, Variant, VoltageSolverTuning
from .controller import (
    CommGraph,
    ControllerGains,
    ControllerState,
    CostFunction,
    agc_baseline,
    control_input,
    gamma_dynamics,
    mu_dynamics_measured,
    mu_dynamics_oracle,
    z_dynamics,
)
from .dispatch import DispatchProblem, solve_sfc
from .errors import (
    DisconnectedAfterEvent,
    NegativeVoltageIterate,
    NonConvergence,
    SimulationDiverged,
)
from .machines import (
    MachineBank,
    MachineState,
    droop_control,
    electrical_power,
    excitation_control,
    internal_voltage,
    machine_derivatives,
)
from .network import (
    AlgebraicState,
    GeneratorTerminals,
    NetworkModel,
    bus_frequencies,
    bus_power_mismatch,
    check_connectivity,
    generator_injections,
    solve_voltages,
)
from .results import Trajectory, TrajectorySample

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class LoadStep:
    """Add `dp`, `dq` (p.u.) to the load at bus position `bus`."""

    at: float
    bus: int
    dp: float
    dq: float = 0.0


@dataclass(frozen=True, slots=True)
class GeneratorTrip:
    """Disconnect machine `machine` (index into the machine bank)."""

    at: float
    machine: int


@dataclass(frozen=True, slots=True)
class LineTrip:
    at: float
    i: int
    j: int


@dataclass(frozen=True, slots=True)
class LineReclose:
    at: float
    i: int
    j: int


Event = Union[LoadStep, GeneratorTrip, LineTrip, LineReclose]


@dataclass(frozen=True, slots=True)
class AGCSettings:
    """Single-area AGC: ACE = K_f ω, split by participation factors `shares`."""

    K_f: float = 1.0
    shares: tuple[float, ...] = ()


@dataclass(frozen=True, slots=True)
class Plant:
    """Static description of machines and controllers for one run.

    Attributes:
        machines: All machines, setpoints included.
        controllers: Machine indices of the controllable generators, in controller order.
        costs: Per-unit cost function of each controllable generator.
        gains: Controller gains of each controllable generator.
        agc: AGC baseline settings (used by the `"agc"` variant).
    """

    machines: MachineBank
    controllers: np.ndarray
    costs: tuple[CostFunction, ...]
    gains: tuple[ControllerGains, ...]
    agc: AGCSettings | None = None

    def __post_init__(self) -> None:
        n = len(self.controllers)
        if len(self.costs) != n or len(self.gains) != n:
            raise ValueError(f"Expected {n} cost functions and gain sets")
        if not np.all(self.machines.controllable[self.controllers]):
            raise ValueError("Controller list references an uncontrollable machine")

    @property
    def controller_buses(self) -> np.ndarray:
        return self.machines.bus[self.controllers]


@dataclass(slots=True)
class SystemState:
    """All variables of the closed loop at one instant.

    Attributes:
        time: Simulation time (s).
        machines: Machine states, one entry per machine (tripped ones frozen).
        algebraic: Bus angles, voltages and frequencies.
        controller: Controller variables of the controllable generators.
        online: Machine-in-service mask.
        agc_offset: AGC shift of each controllable generator's power reference.
    """

    time: float
    machines: MachineState
    algebraic: AlgebraicState
    controller: ControllerState
    online: np.ndarray
    agc_offset: np.ndarray

    def copy(self) -> SystemState:
        return SystemState(
            time=self.time,
            machines=self.machines.copy(),
            algebraic=AlgebraicState(
                self.algebraic.theta.copy(), self.algebraic.v.copy(), self.algebraic.omega_tilde.copy()
            ),
            controller=self.controller.copy(),
            online=self.online.copy(),
            agc_offset=self.agc_offset.copy(),
        )


_MACHINE_FIELDS = tuple(f.name for f in fields(MachineState))


def pack_state(state: SystemState) -> np.ndarray:
    """Flatten the differential variables in integration order."""
    m, c = state.machines, state.controller
    return np.concatenate(
        [np.asarray(getattr(m, name), dtype=float) for name in _MACHINE_FIELDS]
        + [state.algebraic.theta, c.mu, c.z, c.gamma_minus, c.gamma_plus, state.agc_offset]
    )


@dataclass(frozen=True, slots=True)
class _Layout:
    n_machine: int
    n_bus: int
    n_ctrl: int
    n_edge: int

    @classmethod
    def of(cls, state: SystemState) -> _Layout:
        return cls(
            n_machine=len(state.online),
            n_bus=len(state.algebraic.theta),
            n_ctrl=len(state.controller.mu),
            n_edge=len(state.controller.z),
        )

    def split(self, y: np.ndarray) -> tuple[MachineState, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        nm, nb, nc, ne = self.n_machine, self.n_bus, self.n_ctrl, self.n_edge
        parts = np.split(y, np.cumsum([nm, nm, nm, nm, nm, nb, nc, ne, nc, nc]))
        machines = MachineState(*parts[:5])
        theta, mu, z, gm, gp, agc = parts[5:]
        return machines, theta, mu, z, gm, gp, agc


def _terminals(bank: MachineBank, machines: MachineState, online: np.ndarray) -> GeneratorTerminals:
    return GeneratorTerminals(
        bus=bank.bus[online],
        eq_p=np.asarray(machines.Eq_p)[online],
        delta=np.asarray(machines.delta)[online],
        x_dp=bank.x_dp[online],
    )


def solve_algebraic(
    net: NetworkModel,
    plant: Plant,
    machines: MachineState,
    theta: np.ndarray,
    online: np.ndarray,
    v_guess: np.ndarray,
    tuning: VoltageSolverTuning | None = None,
) -> tuple[AlgebraicState, np.ndarray]:
    """Solve voltages and bus frequencies; also return per-machine P_e (zero if offline)."""
    bank = plant.machines
    v = solve_voltages(net, theta, _terminals(bank, machines, online), v_guess, tuning)
    pe, qe = electrical_power(bank, machines, v[bank.bus], theta[bank.bus])
    pe = np.where(online, pe, 0.0)
    qe = np.where(online, qe, 0.0)
    n = net.n_bus
    alg = AlgebraicState(theta=theta, v=v, omega_tilde=np.zeros(n))
    delta_p, _ = bus_power_mismatch(net, alg, np.bincount(bank.bus, pe, n), np.bincount(bank.bus, qe, n))
    return AlgebraicState(theta=theta, v=v, omega_tilde=bus_frequencies(net, delta_p)), pe


def _center_of_inertia(bank: MachineBank, omega: np.ndarray, online: np.ndarray) -> float:
    weights = np.where(online, bank.M, 0.0)
    return float(np.dot(weights, omega) / weights.sum())


def _rates(
    net: NetworkModel,
    plant: Plant,
    comm: CommGraph,
    layout: _Layout,
    y: np.ndarray,
    online: np.ndarray,
    p_hat: np.ndarray,
    v_guess: np.ndarray,
    variant: Variant,
    tuning: VoltageSolverTuning | None,
) -> tuple[np.ndarray, np.ndarray]:
    bank = plant.machines
    machines, theta, mu, z, gm, gp, agc = layout.split(y)
    alg, pe = solve_algebraic(net, plant, machines, theta, online, v_guess, tuning)
    v = alg.v
    eq = internal_voltage(bank, machines, v[bank.bus], theta[bank.bus])

    u_g = droop_control(bank, machines)
    ctrl = plant.controllers
    active_ctrl = online[ctrl]
    if variant == "agc":
        pg_ref = bank.pg_ref.copy()
        pg_ref[ctrl] += agc
        u_g = droop_control(bank, machines, pg_ref=pg_ref)
    else:
        for c, k in enumerate(ctrl):
            u_g[k] = control_input(
                plant.gains[c], plant.costs[c], mu[c], gm[c], gp[c], machines.omega[k], machines.Pg[k], bank.T[k]
            )
    h_exc = excitation_control(bank, machines, eq)
    d_machine = machine_derivatives(bank, machines, pe, eq, u_g, h_exc)

    d_mu = np.zeros_like(mu)
    d_z = np.zeros_like(z)
    d_gm = np.zeros_like(gm)
    d_gp = np.zeros_like(gp)
    d_agc = np.zeros_like(agc)
    if variant == "agc":
        if np.any(active_ctrl):
            shares = np.asarray(plant.agc.shares if plant.agc else np.ones(len(ctrl)), dtype=float)
            shares = np.where(active_ctrl, shares, 0.0)
            shares = shares / shares.sum()
            K_f = plant.agc.K_f if plant.agc else 1.0
            d_agc = agc_baseline(K_f, _center_of_inertia(bank, machines.omega, online), shares)
    else:
        for c, k in enumerate(ctrl):
            if not active_ctrl[c]:
                continue
            gains, cost = plant.gains[c], plant.costs[c]
            view = comm.neighbor_view(c, mu, z)
            if variant == "oracle":
                d_mu[c] = mu_dynamics_oracle(gains, mu[c], p_hat[c], machines.Pg[k], view)
            else:
                d_mu[c] = mu_dynamics_measured(
                    gains, cost, mu[c], gm[c], gp[c], bank.M[k], bank.D[k],
                    machines.omega[k], d_machine.omega[k], machines.Pg[k], view,
                )
            d_gm[c], d_gp[c] = gamma_dynamics(
                gains.k_gamma, machines.Pg[k], bank.p_min[k], bank.p_max[k], gm[c], gp[c]
            )
        for e, ((a, b), live) in enumerate(zip(comm.edges, comm.active)):
            if live:
                d_z[e] = z_dynamics(plant.gains[a].k_z, mu[a], mu[b])

    off = ~online
    parts = [np.where(off, 0.0, np.asarray(getattr(d_machine, name), dtype=float)) for name in _MACHINE_FIELDS]
    dy = np.concatenate(parts + [alg.omega_tilde, d_mu, d_z, d_gm, d_gp, d_agc])
    return dy, v


def step(
    net: NetworkModel,
    plant: Plant,
    state: SystemState,
    dt: float,
    variant: Variant = "measured",
    tuning: VoltageSolverTuning | None = None,
) -> SystemState:
    """Advance the closed loop by one classical RK4 step of size `dt`.

    Voltages are solved inside every stage; γ± are clamped at zero afterwards.

    Raises:
        NonConvergence: the voltage solve failed in some stage (reduce `dt`).
    """
    if dt <= 0.0:
        raise ValueError(f"Step size must be positive, got {dt}")
    layout = _Layout.of(state)
    comm = CommGraph.from_network(net, plant.controller_buses)
    online = state.online
    p_hat = state.controller.p_hat
    y0 = pack_state(state)

    def f(y: np.ndarray, v_guess: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _rates(net, plant, comm, layout, y, online, p_hat, v_guess, variant, tuning)

    k1, v1 = f(y0, state.algebraic.v)
    k2, v2 = f(y0 + 0.5 * dt * k1, v1)
    k3, v3 = f(y0 + 0.5 * dt * k2, v2)
    k4, v4 = f(y0 + dt * k3, v3)
    y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    machines, theta, mu, z, gm, gp, agc = layout.split(y1)
    gm = np.maximum(gm, 0.0)
    gp = np.maximum(gp, 0.0)
    alg, _ = solve_algebraic(net, plant, machines, theta, online, v4, tuning)
    return SystemState(
        time=state.time + dt,
        machines=machines,
        algebraic=alg,
        controller=ControllerState(mu=mu, z=z, gamma_minus=gm, gamma_plus=gp, p_hat=p_hat.copy()),
        online=online.copy(),
        agc_offset=agc,
    )


def _require_connected(net: NetworkModel, event: Event) -> None:
    power_ok, comm_ok = check_connectivity(net)
    if not power_ok:
        raise DisconnectedAfterEvent(f"{event} splits the power network into islands")
    if not comm_ok:
        raise DisconnectedAfterEvent(f"{event} disconnects the communication graph")


def apply_event(
    net: NetworkModel,
    plant: Plant,
    state: SystemState,
    event: Event,
    tuning: VoltageSolverTuning | None = None,
) -> tuple[NetworkModel, SystemState]:
    """Apply one event and return the new network and a consistent state.

    Raises:
        DisconnectedAfterEvent: power network or comm graph lost connectivity.
        ValueError: event not applicable (machine already offline, line already
            in the requested service state).
    """
    new = state.copy()
    ctrl = plant.controllers
    bank = plant.machines
    if isinstance(event, LoadStep):
        net = net.with_load_step(event.bus, event.dp, event.dq)
        live = new.online[ctrl]
        if event.dp != 0.0 and np.any(live):
            new.controller.p_hat[live] += event.dp / np.count_nonzero(live)
    elif isinstance(event, GeneratorTrip):
        k = event.machine
        if not new.online[k]:
            raise ValueError(f"Machine {bank.names[k]} is already offline")
        new.online[k] = False
        net = net.without_generator(int(bank.bus[k]))
        live = new.online[ctrl]
        if bank.controllable[k]:
            c = int(np.flatnonzero(ctrl == k)[0])
            lost = new.controller.p_hat[c]
            new.controller.p_hat[c] = 0.0
        else:
            lost = bank.pg_ref[k]
        if np.any(live):
            new.controller.p_hat[live] += lost / np.count_nonzero(live)
        _require_connected(net, event)
    elif isinstance(event, (LineTrip, LineReclose)):
        closing = isinstance(event, LineReclose)
        line = net.lines[net.line_index(event.i, event.j)]
        if line.in_service == closing:
            state_word = "in" if closing else "out of"
            raise ValueError(f"Line ({event.i}, {event.j}) is already {state_word} service")
        net = net.with_line_service(event.i, event.j, closing)
        _require_connected(net, event)
    else:
        raise ValueError(f"Unsupported event: {event!r}")

    logger.info("t=%.4f s: applied %s", state.time, type(event).__name__)
    alg, _ = solve_algebraic(net, plant, new.machines, new.algebraic.theta, new.online, new.algebraic.v, tuning)
    new.algebraic = alg
    return net, new


def _initial_power_flow(net: NetworkModel, gen_bus: np.ndarray, p_gen: np.ndarray, v_set: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lossless power flow with generator buses voltage-controlled; bus 0 is the angle reference."""
    n = net.n_bus
    p_inj = np.bincount(gen_bus, p_gen, n)
    is_gen = np.zeros(n, dtype=bool)
    is_gen[gen_bus] = True
    v_fixed = np.ones(n)
    v_fixed[gen_bus] = v_set
    load = np.flatnonzero(~is_gen)

    def unpack(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.concatenate([[0.0], x[: n - 1]])
        v = v_fixed.copy()
        v[load] = x[n - 1 :]
        return theta, v

    def residual(x: np.ndarray) -> np.ndarray:
        theta, v = unpack(x)
        alg = AlgebraicState(theta=theta, v=v, omega_tilde=np.zeros(n))
        dp, dq = bus_power_mismatch(net, alg, p_inj, np.zeros(n))
        return np.concatenate([dp[1:], dq[load]])

    x0 = np.concatenate([np.zeros(n - 1), np.ones(len(load))])
    if x0.size:
        sol = optimize.root(residual, x0, method="hybr", options={"xtol": 1e-14})
        err = float(np.max(np.abs(residual(sol.x))))
        if err > 1e-8:
            raise NonConvergence(
                f"Initial power flow did not converge (max mismatch {err:.3e})", iterations=int(sol.nfev), residual=err
            )
        x0 = sol.x
    return unpack(x0)


def initialize(
    net: NetworkModel,
    plant: Plant,
    v_set: Sequence[float],
    tuning: VoltageSolverTuning | None = None,
) -> tuple[Plant, SystemState]:
    """Build the pre-disturbance equilibrium and the matching setpoints.

    Uncontrollable machines produce `pg_ref`; controllable machines share the
    remaining load at the dispatch optimum. δ, E′_q, E_f and all setpoints are
    derived from the power-flow solution; μ, γ± start at the dispatch KKT
    point, p̂ at the initial dispatch and z at zero.
    """
    bank = plant.machines
    ctrl = plant.controllers
    uncontrolled = ~bank.controllable
    demand = float(net.p.sum() - bank.pg_ref[uncontrolled].sum())
    problem = DispatchProblem(
        costs=plant.costs, p_min=bank.p_min[ctrl], p_max=bank.p_max[ctrl], demand=demand,
        names=tuple(bank.names[k] for k in ctrl),
    )
    solution = solve_sfc(problem)

    p_gen = bank.pg_ref.copy()
    p_gen[ctrl] = solution.pg
    theta, v = _initial_power_flow(net, bank.bus, p_gen, np.asarray(v_set, dtype=float))

    n = net.n_bus
    alg = AlgebraicState(theta=theta, v=v, omega_tilde=np.zeros(n))
    _, dq = bus_power_mismatch(net, alg, np.zeros(n), np.zeros(n))
    q_gen = -dq[bank.bus]  # reactive output that closes the balance at each generator bus

    v_bar = v[bank.bus] * np.exp(1j * theta[bank.bus])
    current = np.conj((p_gen + 1j * q_gen) / v_bar)
    e_int = v_bar + 1j * bank.x_dp * current
    machines = MachineState(
        delta=np.angle(e_int),
        omega=np.zeros(len(bank)),
        Eq_p=np.abs(e_int),
        Pg=p_gen.copy(),
        Ef=np.zeros(len(bank)),
    )
    eq = internal_voltage(bank, machines, v[bank.bus], theta[bank.bus])
    machines.Ef = eq.copy()
    bank = replace(bank, pg_ref=p_gen.copy(), Ef_ref=eq.copy(), Eq_ref=eq.copy(), omega_ref=np.zeros(len(bank)))
    plant = replace(plant, machines=bank)

    online = np.ones(len(bank), dtype=bool)
    alg, _ = solve_algebraic(net, plant, machines, theta, online, v, tuning)
    controller = ControllerState(
        mu=np.full(len(ctrl), solution.lam),
        z=np.zeros(len(net.comm_edges)),
        gamma_minus=solution.gamma_minus.copy(),
        gamma_plus=solution.gamma_plus.copy(),
        p_hat=solution.pg.copy(),
    )
    state = SystemState(
        time=0.0,
        machines=machines,
        algebraic=alg,
        controller=controller,
        online=online,
        agc_offset=np.zeros(len(ctrl)),
    )
    logger.info("initial dispatch %s at marginal cost %.6g", np.round(solution.pg, 6).tolist(), -solution.lam)
    return plant, state


def _check_bounds(state: SystemState, config: SimulationConfig) -> None:
    omega = np.asarray(state.machines.omega)[state.online]
    v = state.algebraic.v
    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(v))):
        raise SimulationDiverged(f"Non-finite state at t={state.time:.4f} s", time=state.time)
    if omega.size and np.max(np.abs(omega)) > config.bounds.omega_max:
        raise SimulationDiverged(
            f"|omega| = {np.max(np.abs(omega)):.3g} rad/s exceeds {config.bounds.omega_max} at t={state.time:.4f} s",
            time=state.time,
        )
    if np.min(v) < config.bounds.v_min:
        raise SimulationDiverged(
            f"V = {np.min(v):.3g} p.u. below {config.bounds.v_min} at t={state.time:.4f} s", time=state.time
        )


def simulate(
    net: NetworkModel,
    plant: Plant,
    state: SystemState,
    events: Sequence[Event],
    config: SimulationConfig,
) -> Trajectory:
    """Integrate from `state` to `config.t_end`, applying `events` at their times.

    Step boundaries are aligned to event times; a sample is recorded every
    `config.sample_every_n_steps` steps and right after each event.

    Raises:
        SimulationDiverged: bounds exceeded or the voltage solve failed; the
            exception's `partial` attribute holds the trajectory so far.
    """
    events = sorted(events, key=lambda e: e.at)
    if any(e.at < 0.0 for e in events):
        raise ValueError("Event times must be nonnegative")
    tuning = config.solver
    trajectory = Trajectory(plant=plant, networks=[net], variant=config.variant)
    trajectory.add_sample(TrajectorySample(time=state.time, state=state, network_index=0))

    boundaries = [e.at for e in events if e.at < config.t_end] + [config.t_end]
    pending = list(events)
    steps_taken = 0
    for boundary in boundaries:
        while pending and pending[0].at <= state.time + 1e-12:
            event = pending.pop(0)
            net, state = apply_event(net, plant, state, event, tuning)
            trajectory.networks.append(net)
            trajectory.events.append(event)
            trajectory.add_sample(TrajectorySample(state.time, state, len(trajectory.networks) - 1))
        span = boundary - state.time
        if span <= 1e-12:
            continue
        n = max(1, int(round(span / config.dt)))
        h = span / n
        t0 = state.time
        for i in range(1, n + 1):
            try:
                state = step(net, plant, state, h, config.variant, tuning)
            except (NonConvergence, NegativeVoltageIterate) as err:
                raise SimulationDiverged(
                    f"Voltage solve failed at t={state.time:.4f} s: {err} (reduce dt)",
                    time=state.time,
                    partial=trajectory,
                ) from err
            state.time = t0 + i * h
            try:
                _check_bounds(state, config)
            except SimulationDiverged as err:
                err.partial = trajectory
                raise
            steps_taken += 1
            if steps_taken % config.sample_every_n_steps == 0 or i == n:
                trajectory.add_sample(TrajectorySample(state.time, state, len(trajectory.networks) - 1))
    logger.info("integrated %d steps to t=%.3f s", steps_taken, state.time)
    return trajectory


def run_scenario(scenario) -> Trajectory:
    """Initialize the scenario's operating point and integrate it to `t_end`."""
    plant, state = initialize(scenario.network, scenario.plant, scenario.v_set, scenario.sim.solver)
    return simulate(scenario.network, plant, state, scenario.events, scenario.sim)
