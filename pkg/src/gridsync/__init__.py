__version__ = "0.1.0"

from .config import SimulationConfig, VoltageSolverTuning
from .dispatch import DispatchProblem, kkt_residual, solve_sfc
from .engine import Plant, SystemState, apply_event, initialize, run_scenario, simulate, step
from .monitors import detect_steady_state, hessian_check_a4, lyapunov_value
from .network import NetworkModel, line_flows, solve_voltages
from .scenario import Scenario, parse_scenario
from .sim_runner import RunReport, SimulationRunner

__all__ = [
    "DispatchProblem",
    "NetworkModel",
    "Plant",
    "RunReport",
    "Scenario",
    "SimulationConfig",
    "SimulationRunner",
    "SystemState",
    "VoltageSolverTuning",
    "apply_event",
    "detect_steady_state",
    "hessian_check_a4",
    "initialize",
    "kkt_residual",
    "line_flows",
    "lyapunov_value",
    "parse_scenario",
    "run_scenario",
    "simulate",
    "solve_sfc",
    "solve_voltages",
    "step",
]
