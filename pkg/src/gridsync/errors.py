"""Exception types raised by the simulator, the dispatch oracle and the CLI."""

from __future__ import annotations


class GridSyncError(Exception):
    """Root of all package-specific errors."""


class NonConvergence(GridSyncError):
    """Newton iteration on the reactive balance exceeded its iteration budget."""

    def __init__(self, message: str, *, iterations: int, residual: float) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NegativeVoltageIterate(GridSyncError):
    """A Newton step kept producing non-positive voltages after all halvings."""


class SimulationDiverged(GridSyncError):
    """A state component left the configured bounds.

    `partial` holds the trajectory recorded up to the failure, when available.
    """

    def __init__(self, message: str, *, time: float, partial: object | None = None) -> None:
        super().__init__(message)
        self.time = time
        self.partial = partial


class DisconnectedAfterEvent(GridSyncError):
    """An event split the power network or the communication graph."""


class TrajectoryNotConverged(GridSyncError):
    """An audit needed equilibrium values but the trajectory tail is not steady."""


class Infeasible(GridSyncError, ValueError):
    """Demand lies outside the total capacity range (assumption A3)."""


class SchemaError(GridSyncError, ValueError):
    """A scenario document is malformed; `path` names the offending field."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


class ValidationError(GridSyncError, ValueError):
    """A scenario is well-formed but violates a modelling assumption."""

    def __init__(self, assumption: str, message: str) -> None:
        super().__init__(f"[{assumption}] {message}")
        self.assumption = assumption
