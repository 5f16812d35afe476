"""Third-order synchronous machines, governor and exciter models, passivity audits.

All functions accept either a single machine (`MachineParams` + float state) or
a `MachineBank` with array-valued `MachineState`; the arithmetic is numpy
broadcasting in both cases.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np

from .errors import TrajectoryNotConverged

if TYPE_CHECKING:
    from .results import Trajectory

AuditKind = Literal["C1", "C2"]


@dataclass(frozen=True, slots=True)
class MachineParams:
    """Constants and setpoints of one generator.

    Attributes:
        name: Label used in logs and output columns (e.g. `"G32"`).
        bus: Bus position the machine is attached to.
        M: Inertia (s² p.u./rad).
        D: Mechanical damping (p.u. per rad/s).
        T_d0p: d-axis transient open-circuit time constant (s).
        T: Turbine time constant (s).
        x_d: d-axis synchronous reactance (p.u.).
        x_dp: d-axis transient reactance (p.u.).
        controllable: Whether the distributed controller drives this machine.
        p_min: Lower capacity limit (p.u.).
        p_max: Upper capacity limit (p.u.).
        k_omega: Droop gain of the primary controller.
        k_E: Exciter gain.
        omega_ref: Frequency setpoint ω*.
        pg_ref: Mechanical power setpoint P^g*.
        Ef_ref: Excitation setpoint E*_f.
        Eq_ref: Internal voltage setpoint E*_q.
    """

    name: str
    bus: int
    M: float
    D: float
    T_d0p: float
    T: float
    x_d: float
    x_dp: float
    controllable: bool = False
    p_min: float = 0.0
    p_max: float = np.inf
    k_omega: float = 1.0
    k_E: float = 1.0
    omega_ref: float = 0.0
    pg_ref: float = 0.0
    Ef_ref: float = 1.0
    Eq_ref: float = 1.0

    def __post_init__(self) -> None:
        for label in ("M", "D", "T_d0p", "T", "k_omega", "k_E"):
            if getattr(self, label) <= 0.0:
                raise ValueError(f"{self.name}: {label} must be positive, got {getattr(self, label)}")
        if not self.x_d > self.x_dp > 0.0:
            raise ValueError(f"{self.name}: need x_d > x_dp > 0, got x_d={self.x_d}, x_dp={self.x_dp}")
        if self.p_min > self.p_max:
            raise ValueError(f"{self.name}: p_min {self.p_min} exceeds p_max {self.p_max}")


@dataclass(frozen=True, slots=True)
class MachineBank:
    """Column view of several `MachineParams`, one array entry per machine."""

    names: tuple[str, ...]
    bus: np.ndarray
    M: np.ndarray
    D: np.ndarray
    T_d0p: np.ndarray
    T: np.ndarray
    x_d: np.ndarray
    x_dp: np.ndarray
    controllable: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    k_omega: np.ndarray
    k_E: np.ndarray
    omega_ref: np.ndarray
    pg_ref: np.ndarray
    Ef_ref: np.ndarray
    Eq_ref: np.ndarray

    @classmethod
    def from_params(cls, params: Sequence[MachineParams]) -> MachineBank:
        columns = {}
        for f in fields(MachineParams):
            if f.name == "name":
                continue
            dtype = int if f.name == "bus" else bool if f.name == "controllable" else float
            columns[f.name] = np.array([getattr(p, f.name) for p in params], dtype=dtype)
        return cls(names=tuple(p.name for p in params), **columns)

    def __len__(self) -> int:
        return len(self.names)

    def params(self, k: int) -> MachineParams:
        """Return the scalar record of machine `k`."""
        values = {f.name: getattr(self, f.name)[k].item() for f in fields(MachineParams) if f.name != "name"}
        return MachineParams(name=self.names[k], **values)


@dataclass(slots=True)
class MachineState:
    """Differential machine variables (floats for one machine, arrays for a bank).

    Attributes:
        delta: Rotor angle (rad).
        omega: Frequency deviation (rad/s).
        Eq_p: Transient internal voltage E′_q (p.u.).
        Pg: Mechanical power (p.u.).
        Ef: Excitation voltage (p.u.).
    """

    delta: np.ndarray | float
    omega: np.ndarray | float
    Eq_p: np.ndarray | float
    Pg: np.ndarray | float
    Ef: np.ndarray | float

    def copy(self) -> MachineState:
        return MachineState(*(np.array(getattr(self, f.name), dtype=float) for f in fields(self)))

    def at(self, k: int) -> MachineState:
        """Return the scalar state of machine `k`."""
        return MachineState(*(float(np.asarray(getattr(self, f.name))[k]) for f in fields(self)))


def internal_voltage(params, state: MachineState, v, theta):
    """Return E_q = (x_d/x′_d)E′_q − ((x_d − x′_d)/x′_d) V cos(δ − θ)."""
    return (params.x_d / params.x_dp) * state.Eq_p - (
        (params.x_d - params.x_dp) / params.x_dp
    ) * v * np.cos(state.delta - theta)


def electrical_power(params, state: MachineState, v, theta):
    """Return `(P_e, Q_e)` delivered by the machine to its bus.

    P_e = E′_q V sin(δ − θ)/x′_d. Q_e = (E′_q V cos(δ − θ) − V²)/x′_d is the
    reactive power delivered to the network; its negative, V²/x′_d −
    E′_q V cos(δ − θ)/x′_d, is the reactive power absorbed by the machine.
    """
    d = state.delta - theta
    pe = state.Eq_p * v * np.sin(d) / params.x_dp
    qe = (state.Eq_p * v * np.cos(d) - v * v) / params.x_dp
    return pe, qe


def machine_derivatives(params, state: MachineState, pe, eq, u_g, h_exc) -> MachineState:
    """Return d/dt of `(δ, ω, E′_q, P^g, E_f)` for given electrical power and inputs."""
    return MachineState(
        delta=state.omega,
        omega=(state.Pg - params.D * state.omega - pe) / params.M,
        Eq_p=(state.Ef - eq) / params.T_d0p,
        Pg=-state.Pg / params.T + u_g,
        Ef=h_exc,
    )


def droop_control(params, state: MachineState, pg_ref=None):
    """Primary frequency control u_g = −ω + ω* − k_ω(P^g − P^g*) + P^g/T.

    `pg_ref` overrides the stored setpoint (used when a secondary loop moves it).
    """
    ref = params.pg_ref if pg_ref is None else pg_ref
    return -state.omega + params.omega_ref - params.k_omega * (state.Pg - ref) + state.Pg / params.T


def excitation_control(params, state: MachineState, eq):
    """Exciter input h = −E_f + E*_f − k_E(E_q − E*_q)."""
    return -state.Ef + params.Ef_ref - params.k_E * (eq - params.Eq_ref)


@dataclass(slots=True)
class PassivityReport:
    """Result of a storage-inequality audit on one machine.

    Attributes:
        machine: Machine name.
        which: `"C1"` or `"C2"`.
        max_violation: Largest value of Ṡ − bound over the audited samples.
        time_of_max: Sample time (interval midpoint) where it occurs.
        samples: Number of audited intervals.
    """

    machine: str
    which: str
    max_violation: float
    time_of_max: float
    samples: int


def _storage_terms(bank: MachineBank, k: int, which: AuditKind, state, equilibrium):
    m = state.machines
    e = equilibrium.machines
    if which == "C1":
        dp = m.Pg[k] - e.Pg[k]
        domega = m.omega[k] - e.omega[k]
        storage = 0.5 * dp * dp
        bound = -domega * dp - bank.k_omega[k] * dp * dp
        return storage, bound
    b = bank.bus[k]
    eq = internal_voltage(bank.params(k), m.at(k), state.algebraic.v[b], state.algebraic.theta[b])
    eq_star = internal_voltage(bank.params(k), e.at(k), equilibrium.algebraic.v[b], equilibrium.algebraic.theta[b])
    k3 = 1.0 / bank.k_E[k]
    def_ = m.Ef[k] - e.Ef[k]
    storage = 0.5 * k3 * def_ * def_
    bound = -(eq - eq_star) * def_ - k3 * def_ * def_
    return storage, bound


def passivity_audit(trajectory: Trajectory, machine_index: int, which: AuditKind) -> PassivityReport:
    """Check the C1 or C2 storage inequality along a recorded trajectory.

    Ṡ is the forward difference of S between consecutive samples and the bound
    is averaged over the interval (trapezoid), so the reported violation is the
    finite-difference error for an exactly passive machine. C1 uses S = ½ΔP²,
    φ = k_ω ΔP²; C2 uses S = ΔE_f²/(2k_E), φ = ΔE_f²/k_E.

    Raises:
        TrajectoryNotConverged: the tail of the run is not an equilibrium.
        ValueError: C1 requested for a controllable machine.
    """
    if which not in ("C1", "C2"):
        raise ValueError(f"Unsupported passivity condition: {which}")
    steady = trajectory.steady
    if steady is None or not steady.converged:
        raise TrajectoryNotConverged("Passivity audit needs a converged trajectory tail")
    bank = trajectory.machines
    if which == "C1" and bank.controllable[machine_index]:
        raise ValueError(f"C1 audit applies to droop-controlled machines, {bank.names[machine_index]} is controllable")

    equilibrium = steady.equilibrium
    samples = [s for s in trajectory.samples if s.state.online[machine_index]]
    worst, worst_t = -np.inf, float("nan")
    prev = None
    for sample in samples:
        terms = _storage_terms(bank, machine_index, which, sample.state, equilibrium)
        if prev is not None:
            (t0, s0, r0), (t1, (s1, r1)) = prev, (sample.time, terms)
            h = t1 - t0
            if h > 0.0:
                violation = (s1 - s0) / h - 0.5 * (r0 + r1)
                if violation > worst:
                    worst, worst_t = float(violation), 0.5 * (t0 + t1)
        prev = (sample.time, *terms)
    return PassivityReport(
        machine=bank.names[machine_index],
        which=which,
        max_violation=float(worst) if np.isfinite(worst) else 0.0,
        time_of_max=worst_t,
        samples=max(len(samples) - 1, 0),
    )
