"""Result containers for recorded simulation data.

These dataclasses hold what a run produced (sampled states, the network in
force at each sample, applied events, monitor values) for the writers, the
audits and the tests. They carry no integration logic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .engine import Event, Plant, SystemState
    from .machines import MachineBank
    from .network import NetworkModel


@dataclass(slots=True)
class TrajectorySample:
    """Recorded closed-loop state at one time instant.

    `network_index` points into `Trajectory.networks` (the topology in force).
    """

    time: float
    state: SystemState
    network_index: int = 0


@dataclass(slots=True)
class MonitorSample:
    """Monitor values at one recorded sample.

    Attributes:
        time: Sample time (s).
        kkt_residual: Max KKT residual of the closed-loop point (controllable demand).
        max_freq_dev: Largest |ω| over online machines and |ω̃| over buses (rad/s).
        mu_spread: max μ − min μ over online controllers.
        hessian_min_eig: Smallest eigenvalue of the potential Hessian (A4 margin).
        lyapunov: W relative to the detected equilibrium, if available.
        lyapunov_rate: Finite-difference dW/dt to the next sample, if available.
    """

    time: float
    kkt_residual: float
    max_freq_dev: float
    mu_spread: float
    hessian_min_eig: float
    lyapunov: float | None = None
    lyapunov_rate: float | None = None


@dataclass(slots=True)
class SteadyStateSummary:
    """Outcome of trailing-window steady-state detection.

    Attributes:
        converged: All window statistics fell below the tolerance.
        equilibrium: Window-averaged state (used as the equilibrium x*).
        max_omega: Largest |ω| in the window.
        max_omega_tilde: Largest |ω̃| in the window.
        mu_spread: Largest μ spread in the window.
        max_rate: Largest finite-difference state rate in the window.
    """

    converged: bool
    equilibrium: SystemState
    max_omega: float
    max_omega_tilde: float
    mu_spread: float
    max_rate: float


@dataclass(slots=True)
class Trajectory:
    """Accumulated samples produced by one closed-loop run."""

    plant: Plant
    networks: list[NetworkModel]
    variant: str = "measured"
    samples: list[TrajectorySample] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    monitors: list[MonitorSample] = field(default_factory=list)
    steady: SteadyStateSummary | None = None

    def add_sample(self, sample: TrajectorySample) -> None:
        """Append one sample to the result sequence."""
        self.samples.append(sample)

    @property
    def machines(self) -> MachineBank:
        return self.plant.machines

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.samples])

    @property
    def final(self) -> TrajectorySample:
        return self.samples[-1]

    @property
    def last_event_time(self) -> float:
        return max((e.at for e in self.events), default=0.0)

    def network_of(self, sample: TrajectorySample) -> NetworkModel:
        return self.networks[sample.network_index]

    def after_last_event(self) -> list[TrajectorySample]:
        """Samples recorded on the final topology, starting with the post-event sample."""
        last = len(self.networks) - 1
        return [s for s in self.samples if s.network_index == last]
