"""Network graph and algebraic power-flow relations of the lossless grid model.

Buses are addressed by position (0..n-1) everywhere inside the package; the
scenario-level bus number is kept in `Bus.id` for naming and output columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import networkx as nx
import numpy as np

from .config import VoltageSolverTuning
from .errors import NegativeVoltageIterate, NonConvergence

logger = logging.getLogger(__name__)

BusKind = Literal["controllable", "uncontrollable", "load"]
BUS_KINDS: tuple[str, ...] = ("controllable", "uncontrollable", "load")


@dataclass(frozen=True, slots=True)
class Bus:
    """One network bus.

    Attributes:
        id: Bus number used in scenario files and output columns.
        kind: `"controllable"`, `"uncontrollable"` (generator buses) or `"load"`.
        p: Active load (p.u.).
        q: Reactive load (p.u.).
        damping: Frequency-sensitive load coefficient D̃ (p.u. power per rad/s).
    """

    id: int
    kind: BusKind
    p: float = 0.0
    q: float = 0.0
    damping: float = 1.0


@dataclass(frozen=True, slots=True)
class Line:
    """Lossless line between bus positions `i` and `j` with susceptance `b`."""

    i: int
    j: int
    b: float
    in_service: bool = True


@dataclass(frozen=True, slots=True)
class CommEdge:
    """Undirected communication link, stored with `i < j`."""

    i: int
    j: int
    in_service: bool = True


@dataclass(frozen=True, slots=True)
class NetworkModel:
    """Immutable grid description.

    Attributes:
        buses: Ordered bus records.
        lines: Lines, in-service or not.
        comm_edges: Communication links between controllable-generator buses.
        base_power: System base in MVA.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    comm_edges: tuple[CommEdge, ...] = ()
    base_power: float = 100.0
    _p: np.ndarray = field(init=False, repr=False, compare=False)
    _q: np.ndarray = field(init=False, repr=False, compare=False)
    _damping: np.ndarray = field(init=False, repr=False, compare=False)
    _from: np.ndarray = field(init=False, repr=False, compare=False)
    _to: np.ndarray = field(init=False, repr=False, compare=False)
    _b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = len(self.buses)
        if n == 0:
            raise ValueError("Network needs at least one bus")
        if self.base_power <= 0.0:
            raise ValueError(f"Unsupported base power: {self.base_power}")
        for bus in self.buses:
            if bus.kind not in BUS_KINDS:
                raise ValueError(f"Unsupported bus kind: {bus.kind}")
            if bus.damping <= 0.0:
                raise ValueError(f"Bus {bus.id}: load damping must be positive, got {bus.damping}")
        for line in self.lines:
            if not (0 <= line.i < n and 0 <= line.j < n) or line.i == line.j:
                raise ValueError(f"Invalid line endpoints: ({line.i}, {line.j})")
            if line.b <= 0.0:
                raise ValueError(f"Line ({line.i}, {line.j}): susceptance must be positive, got {line.b}")
        for edge in self.comm_edges:
            if not (0 <= edge.i < edge.j < n):
                raise ValueError(f"Communication edge must satisfy 0 <= i < j < n: ({edge.i}, {edge.j})")
            if not edge.in_service:
                continue
            for k in (edge.i, edge.j):
                if self.buses[k].kind != "controllable":
                    raise ValueError(f"Communication edge touches non-controllable bus {self.buses[k].id}")

        live = [line for line in self.lines if line.in_service]
        object.__setattr__(self, "_p", np.array([bus.p for bus in self.buses], dtype=float))
        object.__setattr__(self, "_q", np.array([bus.q for bus in self.buses], dtype=float))
        object.__setattr__(self, "_damping", np.array([bus.damping for bus in self.buses], dtype=float))
        object.__setattr__(self, "_from", np.array([line.i for line in live], dtype=int))
        object.__setattr__(self, "_to", np.array([line.j for line in live], dtype=int))
        object.__setattr__(self, "_b", np.array([line.b for line in live], dtype=float))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def p(self) -> np.ndarray:
        return self._p

    @property
    def q(self) -> np.ndarray:
        return self._q

    @property
    def damping(self) -> np.ndarray:
        return self._damping

    @property
    def live_lines(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return `(from, to, b)` arrays over in-service lines."""
        return self._from, self._to, self._b

    def bus_index(self, bus_id: int) -> int:
        """Return the position of the bus numbered `bus_id`."""
        for k, bus in enumerate(self.buses):
            if bus.id == bus_id:
                return k
        raise KeyError(f"Unknown bus id: {bus_id}")

    def line_index(self, i: int, j: int) -> int:
        """Return the position of the line joining bus positions `i` and `j`."""
        for k, line in enumerate(self.lines):
            if {line.i, line.j} == {i, j}:
                return k
        raise KeyError(f"No line between bus positions {i} and {j}")

    def with_load_step(self, bus: int, dp: float, dq: float) -> NetworkModel:
        """Return a copy with the load at position `bus` increased by `(dp, dq)`."""
        buses = list(self.buses)
        old = buses[bus]
        buses[bus] = replace(old, p=old.p + dp, q=old.q + dq)
        return replace(self, buses=tuple(buses))

    def with_line_service(self, i: int, j: int, in_service: bool) -> NetworkModel:
        """Return a copy with the `(i, j)` line switched in or out of service."""
        k = self.line_index(i, j)
        lines = list(self.lines)
        lines[k] = replace(lines[k], in_service=in_service)
        return replace(self, lines=tuple(lines))

    def without_generator(self, bus: int) -> NetworkModel:
        """Return a copy where `bus` becomes a load bus and loses its comm edges."""
        buses = list(self.buses)
        buses[bus] = replace(buses[bus], kind="load")
        edges = tuple(
            replace(edge, in_service=False) if bus in (edge.i, edge.j) else edge
            for edge in self.comm_edges
        )
        return replace(self, buses=tuple(buses), comm_edges=edges)


@dataclass(frozen=True, slots=True)
class AlgebraicState:
    """Algebraic variables at one instant.

    Attributes:
        theta: Bus voltage angles (rad).
        v: Bus voltage magnitudes (p.u., strictly positive).
        omega_tilde: Bus frequency deviations (rad/s).
    """

    theta: np.ndarray
    v: np.ndarray
    omega_tilde: np.ndarray


@dataclass(frozen=True, slots=True)
class GeneratorTerminals:
    """Online machines seen from the network: bus position, E′_q, δ and x′_d."""

    bus: np.ndarray
    eq_p: np.ndarray
    delta: np.ndarray
    x_dp: np.ndarray


def susceptance_matrix(net: NetworkModel) -> np.ndarray:
    """Return the dense symmetric matrix of in-service line susceptances."""
    f, t, b = net.live_lines
    bmat = np.zeros((net.n_bus, net.n_bus))
    np.add.at(bmat, (f, t), b)
    np.add.at(bmat, (t, f), b)
    return bmat


def line_flows(net: NetworkModel, alg: AlgebraicState) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return `(P_ij, Q_ij, P_ji, Q_ji)` for every line in `net.lines` order.

    Out-of-service lines carry zero flow.
    """
    m = len(net.lines)
    p_ij, q_ij, p_ji, q_ji = (np.zeros(m) for _ in range(4))
    v, theta = alg.v, alg.theta
    for k, line in enumerate(net.lines):
        if not line.in_service:
            continue
        i, j, b = line.i, line.j, line.b
        d = theta[i] - theta[j]
        p_ij[k] = v[i] * v[j] * b * np.sin(d)
        p_ji[k] = v[j] * v[i] * b * np.sin(-d)
        q_ij[k] = b * v[i] ** 2 - v[i] * v[j] * b * np.cos(d)
        q_ji[k] = b * v[j] ** 2 - v[j] * v[i] * b * np.cos(d)
    return p_ij, q_ij, p_ji, q_ji


def _outflows(net: NetworkModel, theta: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus sums Σ_j P_ij and Σ_j Q_ij over in-service lines."""
    f, t, b = net.live_lines
    d = theta[f] - theta[t]
    vv = v[f] * v[t] * b
    p_line = vv * np.sin(d)
    c_line = vv * np.cos(d)
    n = net.n_bus
    p_out = np.bincount(f, p_line, n) - np.bincount(t, p_line, n)
    q_out = (
        np.bincount(f, b * v[f] ** 2 - c_line, n)
        + np.bincount(t, b * v[t] ** 2 - c_line, n)
    )
    return p_out, q_out


def generator_injections(
    net: NetworkModel, terminals: GeneratorTerminals, theta: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate machine `(P_e, Q_e)` per bus (zeros on buses without online machines)."""
    vb = v[terminals.bus]
    d = terminals.delta - theta[terminals.bus]
    pe = terminals.eq_p * vb * np.sin(d) / terminals.x_dp
    qe = (terminals.eq_p * vb * np.cos(d) - vb**2) / terminals.x_dp
    n = net.n_bus
    return np.bincount(terminals.bus, pe, n), np.bincount(terminals.bus, qe, n)


def bus_power_mismatch(
    net: NetworkModel, alg: AlgebraicState, pe_bus: np.ndarray, qe_bus: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Return per-bus `(ΔP, ΔQ)` for the given per-bus machine injections.

    ΔP excludes the load-damping term; see `bus_frequencies`.
    """
    p_out, q_out = _outflows(net, alg.theta, alg.v)
    return pe_bus - net.p - p_out, qe_bus - net.q - q_out


def bus_frequencies(net: NetworkModel, delta_p: np.ndarray) -> np.ndarray:
    """Return ω̃ solving 0 = ΔP_i − D̃_i ω̃_i at every bus."""
    return delta_p / net.damping


def _reactive_residual_and_jacobian(
    net: NetworkModel, terminals: GeneratorTerminals, theta: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    n = net.n_bus
    f, t, b = net.live_lines
    cos_ft = b * np.cos(theta[f] - theta[t])

    _, qe = generator_injections(net, terminals, theta, v)
    _, q_out = _outflows(net, theta, v)
    residual = qe - net.q - q_out

    jac = np.zeros((n, n))
    diag = np.zeros(n)
    np.add.at(diag, f, -(2.0 * b * v[f] - v[t] * cos_ft))
    np.add.at(diag, t, -(2.0 * b * v[t] - v[f] * cos_ft))
    vb = v[terminals.bus]
    dqe = (terminals.eq_p * np.cos(terminals.delta - theta[terminals.bus]) - 2.0 * vb) / terminals.x_dp
    np.add.at(diag, terminals.bus, dqe)
    jac[np.arange(n), np.arange(n)] = diag
    np.add.at(jac, (f, t), v[f] * cos_ft)
    np.add.at(jac, (t, f), v[t] * cos_ft)
    return residual, jac


def reactive_residual(
    net: NetworkModel, terminals: GeneratorTerminals, theta: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Return ΔQ at every bus for the given voltages."""
    _, qe = generator_injections(net, terminals, theta, v)
    _, q_out = _outflows(net, theta, v)
    return qe - net.q - q_out


def solve_voltages(
    net: NetworkModel,
    theta: np.ndarray,
    terminals: GeneratorTerminals,
    v0: np.ndarray | None = None,
    tuning: VoltageSolverTuning | None = None,
) -> np.ndarray:
    """Solve the reactive balance for the voltage magnitudes.

    Args:
        net: Network model.
        theta: Bus angles (held fixed).
        terminals: Online machine E′_q, δ and x′_d.
        v0: Initial guess (positive); flat 1.0 p.u. if omitted.
        tuning: Newton settings.

    Returns:
        Voltage magnitudes with max |ΔQ| < `tuning.tol_q`.

    Raises:
        NonConvergence: iteration budget exhausted.
        NegativeVoltageIterate: a step stayed non-positive after all halvings.
    """
    tuning = tuning or VoltageSolverTuning()
    v = np.ones(net.n_bus) if v0 is None else np.array(v0, dtype=float)
    if np.any(v <= 0.0):
        raise NegativeVoltageIterate("Initial voltage guess must be strictly positive")

    err = float("inf")
    for iteration in range(tuning.max_iter + 1):
        residual, jac = _reactive_residual_and_jacobian(net, terminals, theta, v)
        err = float(np.max(np.abs(residual)))
        if err < tuning.tol_q:
            return v
        if iteration == tuning.max_iter or not np.isfinite(err):
            break
        step = -np.linalg.solve(jac, residual)
        alpha = 1.0
        for _ in range(tuning.max_halvings + 1):
            trial = v + alpha * step
            if np.all(trial > 0.0):
                break
            alpha *= 0.5
        else:
            raise NegativeVoltageIterate(
                f"Voltage iterate non-positive after {tuning.max_halvings} halvings"
            )
        if alpha < 1.0:
            logger.debug("voltage Newton step damped to %.3g at iteration %d", alpha, iteration)
        v = trial

    raise NonConvergence(
        f"Voltage Newton did not converge in {tuning.max_iter} iterations (max |dQ| = {err:.3e})",
        iterations=tuning.max_iter,
        residual=err,
    )


def check_connectivity(net: NetworkModel) -> tuple[bool, bool]:
    """Return `(power_connected, comm_connected)` over in-service lines / comm edges."""
    power = nx.Graph()
    power.add_nodes_from(range(net.n_bus))
    power.add_edges_from((line.i, line.j) for line in net.lines if line.in_service)

    comm = nx.Graph()
    comm.add_nodes_from(k for k, bus in enumerate(net.buses) if bus.kind == "controllable")
    comm.add_edges_from((edge.i, edge.j) for edge in net.comm_edges if edge.in_service)
    comm_ok = comm.number_of_nodes() <= 1 or nx.is_connected(comm)
    return nx.is_connected(power), comm_ok
