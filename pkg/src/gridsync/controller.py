"""Distributed secondary frequency controller and the AGC baseline.

Each controllable generator runs a primal-dual law on its own mechanical power,
a consensus estimate μ of the global balance multiplier, edge integrators z and
limit multipliers γ±. Node evaluators only ever see a `NeighborView`: their
neighbours' μ values and the signed z values of incident edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .network import NetworkModel


@dataclass(frozen=True, slots=True)
class CostFunction:
    """Quadratic generation cost f(P) = ½aP² + bP."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if self.a <= 0.0:
            raise ValueError(f"Cost curvature must be positive, got a={self.a}")

    @classmethod
    def from_mw(cls, a: float, b: float, base_power: float, scale: float = 1.0) -> CostFunction:
        """Convert coefficients given per MW² and per MW to per-unit power."""
        return cls(a=scale * a * base_power**2, b=scale * b * base_power)

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant l (and strong-convexity modulus) of f′."""
        return self.a

    def __call__(self, p):
        return 0.5 * self.a * p * p + self.b * p

    def marginal(self, p):
        return self.a * p + self.b


@dataclass(frozen=True, slots=True)
class ControllerGains:
    """Gains of one controllable generator.

    Attributes:
        k_pg: Primal gain on P^g.
        k_mu: Consensus gain on μ.
        k_z: Edge-integrator gain (used by the edges this node owns).
        k_gamma: Limit-multiplier gain.
        tau: Damping of the measured estimator, 0 < τ < 4/l.
    """

    k_pg: float = 1.0
    k_mu: float = 1.0
    k_z: float = 1.0
    k_gamma: float = 1.0
    tau: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0.0:
                raise ValueError(f"Gain {f.name} must be positive, got {getattr(self, f.name)}")

    def check_tau(self, lipschitz: float) -> None:
        """Raise `ValueError` unless τ·l < 4."""
        if self.tau * lipschitz >= 4.0:
            raise ValueError(f"tau={self.tau} violates tau*l < 4 for l={lipschitz}")


@dataclass(slots=True)
class ControllerState:
    """Controller variables of all controllable generators.

    Attributes:
        mu: Multiplier estimates, one per controllable generator.
        z: Edge integrators, one per communication edge (owner: lower bus position).
        gamma_minus: Lower-limit multipliers (≥ 0).
        gamma_plus: Upper-limit multipliers (≥ 0).
        p_hat: Virtual load demand (oracle-fed variant).
    """

    mu: np.ndarray
    z: np.ndarray
    gamma_minus: np.ndarray
    gamma_plus: np.ndarray
    p_hat: np.ndarray

    def copy(self) -> ControllerState:
        return ControllerState(*(np.array(getattr(self, f.name), dtype=float) for f in fields(self)))


@dataclass(frozen=True, slots=True)
class NeighborView:
    """What one controller may read: its neighbours' μ and its signed edge integrators."""

    neighbor_mus: tuple[float, ...]
    incident_z: tuple[float, ...]


@dataclass(frozen=True, slots=True)
class CommGraph:
    """Communication links expressed over controller indices.

    `edges[e] = (a, b)` follows `net.comm_edges[e]`; the owner `a` sits on the
    lower bus position and reads +z, `b` reads −z.
    """

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    active: tuple[bool, ...]

    @classmethod
    def from_network(cls, net: NetworkModel, controller_buses: Sequence[int]) -> CommGraph:
        index = {bus: k for k, bus in enumerate(controller_buses)}
        edges = tuple((index[edge.i], index[edge.j]) for edge in net.comm_edges)
        active = tuple(edge.in_service for edge in net.comm_edges)
        return cls(nodes=tuple(controller_buses), edges=edges, active=active)

    def neighbor_view(self, node: int, mu: np.ndarray, z: np.ndarray) -> NeighborView:
        mus: list[float] = []
        zs: list[float] = []
        for e, ((a, b), live) in enumerate(zip(self.edges, self.active)):
            if not live:
                continue
            if a == node:
                mus.append(float(mu[b]))
                zs.append(float(z[e]))
            elif b == node:
                mus.append(float(mu[a]))
                zs.append(-float(z[e]))
        return NeighborView(neighbor_mus=tuple(mus), incident_z=tuple(zs))


def positive_projection(x, a):
    """Return [x]⁺_a: x if a > 0 or x > 0, else 0."""
    if isinstance(x, np.ndarray) or isinstance(a, np.ndarray):
        return np.where((np.asarray(a) > 0.0) | (np.asarray(x) > 0.0), x, 0.0)
    return x if (a > 0.0 or x > 0.0) else 0.0


def control_input(gains: ControllerGains, cost: CostFunction, mu, gamma_minus, gamma_plus, omega, pg, T):
    """Governor input u_g = P^g/T − k_pg(ω + f′(P^g) + μ − γ⁻ + γ⁺)."""
    return pg / T - gains.k_pg * (omega + cost.marginal(pg) + mu - gamma_minus + gamma_plus)


def mu_dynamics_oracle(gains: ControllerGains, mu: float, p_hat: float, pg: float, view: NeighborView) -> float:
    """μ̇ = k_μ(P^g − p̂ − Σ_j(μ_i − μ_j) − Σ_j z_ij)."""
    disagreement = sum(mu - m for m in view.neighbor_mus)
    return gains.k_mu * (pg - p_hat - disagreement - sum(view.incident_z))


def mu_dynamics_measured(
    gains: ControllerGains,
    cost: CostFunction,
    mu: float,
    gamma_minus: float,
    gamma_plus: float,
    M: float,
    D: float,
    omega: float,
    omega_dot: float,
    pg: float,
    view: NeighborView,
) -> float:
    """Estimator driven by local frequency measurements instead of p̂.

    μ̇ = k_μ(−Σ(μ_i − μ_j) − Σz_ij + Mω̇ + Dω + τ(−μ − f′(P^g) + γ⁻ − γ⁺)).
    """
    disagreement = sum(mu - m for m in view.neighbor_mus)
    damping = gains.tau * (-mu - cost.marginal(pg) + gamma_minus - gamma_plus)
    return gains.k_mu * (-disagreement - sum(view.incident_z) + M * omega_dot + D * omega + damping)


def z_dynamics(k_z: float, mu_i: float, mu_j: float) -> float:
    """Edge integrator ż = k_z(μ_i − μ_j) for the edge owned by i."""
    return k_z * (mu_i - mu_j)


def gamma_dynamics(k_gamma: float, pg, p_min, p_max, gamma_minus, gamma_plus):
    """Return `(γ̇⁻, γ̇⁺)` of the projected limit multipliers."""
    return (
        k_gamma * positive_projection(p_min - pg, gamma_minus),
        k_gamma * positive_projection(pg - p_max, gamma_plus),
    )


def beta_bound(tau: float, D: float, l: float) -> float:
    """Return √(τD(4 − τl)), the admissible disturbance gain of the measured estimator."""
    if not 0.0 < tau < 4.0 / l:
        raise ValueError(f"tau={tau} outside (0, 4/l) for l={l}")
    if D <= 0.0:
        raise ValueError(f"Damping must be positive, got D={D}")
    return math.sqrt(tau * D * (4.0 - tau * l))


def schur_block(beta: float, tau: float, D: float, l: float) -> np.ndarray:
    """Return the 3×3 block whose negative definiteness is equivalent to |β| < `beta_bound`."""
    return np.array(
        [
            [-D, 0.0, -0.5 * beta],
            [0.0, -l, -0.5 * tau * l],
            [-0.5 * beta, -0.5 * tau * l, -tau],
        ]
    )


def agc_baseline(K_f: float, omega_measured: float, shares: Sequence[float]) -> np.ndarray:
    """Return per-generator AGC commands −r_i K_f ω for a single-area ACE."""
    r = np.asarray(shares, dtype=float)
    if np.any(r < 0.0) or abs(float(r.sum()) - 1.0) > 1e-9:
        raise ValueError(f"AGC participation factors must be nonnegative and sum to 1, got {r.tolist()}")
    return -r * K_f * omega_measured
