"""Configuration dataclasses for simulation runs.

These objects hold the numerical settings of a run (integration step, solver
tolerances, divergence bounds, steady-state detection, output options). They
are plain and serializable so scenario files, tests and scripts can create them
without touching any network data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal


Variant = Literal["oracle", "measured", "agc"]
PlotChannel = Literal["frequency", "pg", "voltage", "mu", "z"]

VARIANTS: tuple[str, ...] = ("oracle", "measured", "agc")
PLOT_CHANNELS: tuple[str, ...] = ("frequency", "pg", "voltage", "mu", "z")


@dataclass(slots=True)
class VoltageSolverTuning:
    """Newton settings for the reactive-power balance.

    Attributes:
        tol_q: Max-norm tolerance on the reactive mismatch (p.u.).
        max_iter: Newton iteration budget per solve.
        max_halvings: Step halvings allowed before a non-positive iterate is fatal.
    """

    tol_q: float = 1e-9
    max_iter: int = 50
    max_halvings: int = 10


@dataclass(slots=True)
class DivergenceBounds:
    """State bounds beyond which a run is declared diverged."""

    omega_max: float = 10.0
    v_min: float = 0.2


@dataclass(slots=True)
class SteadyStateConfig:
    """Trailing-window settings for steady-state detection.

    Attributes:
        window: Length of the trailing window in seconds.
        tol: Threshold applied to frequencies, multiplier spread and state rates.
    """

    window: float = 5.0
    tol: float = 1e-6


@dataclass(slots=True)
class SimulationConfig:
    """Top-level settings for a simulation run.

    Attributes:
        dt: Fixed RK4 step in seconds.
        t_end: End time for the run in seconds.
        sample_every_n_steps: Record state every N integration steps.
        variant: Controller variant (`"oracle"`, `"measured"` or `"agc"`).
        solver: Voltage solver tuning.
        bounds: Divergence bounds.
        steady: Steady-state detection settings.
    """

    dt: float = 0.002
    t_end: float = 70.0
    sample_every_n_steps: int = 50
    variant: Variant = "measured"
    solver: VoltageSolverTuning = field(default_factory=VoltageSolverTuning)
    bounds: DivergenceBounds = field(default_factory=DivergenceBounds)
    steady: SteadyStateConfig = field(default_factory=SteadyStateConfig)

    @property
    def n_steps(self) -> int:
        """Return the number of fixed steps needed to reach `t_end`."""
        return int(round(self.t_end / self.dt))


@dataclass(slots=True)
class OutputConfig:
    """Where and what a run writes.

    Attributes:
        directory: Output directory, relative to the working directory.
        plots: Channels that get one SVG figure each.
        write_csv: Emit `trajectory.csv`.
    """

    directory: str = "out"
    plots: tuple[str, ...] = PLOT_CHANNELS
    write_csv: bool = True
