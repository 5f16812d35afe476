"""Run orchestration: simulate a scenario, detect its steady state and certify it.

`SimulationRunner` is the entrypoint used by the CLI and the closed-loop tests.
It never raises for a failed run; the outcome is carried in `RunReport.status`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .config import SimulationConfig
from .dispatch import DispatchSolution, KKTReport, solve_sfc
from .engine import initialize, simulate
from .errors import DisconnectedAfterEvent, Infeasible, NegativeVoltageIterate, NonConvergence, SimulationDiverged
from .machines import PassivityReport, passivity_audit
from .monitors import (
    DisturbanceRatio,
    LyapunovAudit,
    closed_loop_kkt,
    compute_monitors,
    detect_steady_state,
    disturbance_ratio_audit,
    lyapunov_audit,
)
from .results import Trajectory
from .scenario import Scenario, validate_scenario

logger = logging.getLogger(__name__)

RunStatus = Literal["certified", "not_certified", "diverged", "invalid"]

EXIT_CODES: dict[str, int] = {"certified": 0, "invalid": 1, "not_certified": 2, "diverged": 3}


@dataclass(slots=True)
class Certification:
    """Closed-loop optimality check against the dispatch oracle.

    Attributes:
        kkt: KKT residuals of the steady controller point.
        demand: Run-derived controllable demand (p.u.), Σ steady P^g.
        oracle: Dispatch-oracle solution for that demand.
        pg: Steady P^g of the online controllable machines (p.u.).
        max_relative_gap: Largest |P^g − P^g_oracle| / |P^g_oracle|.
        max_freq_dev: Largest steady |ω| or |ω̃| (rad/s).
    """

    kkt: KKTReport
    demand: float
    oracle: DispatchSolution
    pg: np.ndarray
    max_relative_gap: float
    max_freq_dev: float


@dataclass(slots=True)
class RunReport:
    """Everything a single run produced.

    Attributes:
        scenario: Scenario name.
        variant: Controller variant used.
        status: `"certified"`, `"not_certified"`, `"diverged"` or `"invalid"`.
        message: Human-readable outcome.
        trajectory: Recorded trajectory (partial if the run diverged).
        certification: Oracle comparison, when a steady state was detected.
        lyapunov: Energy-function monotonicity audit.
        passivity: Storage-inequality audits per machine.
        disturbance: Disturbance-gain audit per controllable machine.
        diverged_at: Failure time for diverged runs.
        elapsed: Wall-clock seconds.
    """

    scenario: str
    variant: str
    status: RunStatus
    message: str = ""
    trajectory: Trajectory | None = None
    certification: Certification | None = None
    lyapunov: LyapunovAudit | None = None
    passivity: list[PassivityReport] = field(default_factory=list)
    disturbance: list[DisturbanceRatio] = field(default_factory=list)
    diverged_at: float | None = None
    elapsed: float = 0.0

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]


@dataclass(slots=True)
class SimulationRunner:
    """Execute a configured simulation and certify its outcome.

    Attributes:
        config: Integration settings; `config.variant` selects the controller.
        kkt_tol: Certification threshold on the KKT residual.
        freq_tol: Certification threshold on steady |ω| and |ω̃| (rad/s).
        dispatch_rel_tol: Allowed relative gap to the dispatch oracle.
        capacity_slack: Steady ΣPg may sit this far (p.u.) outside
            [Σp_min, Σp_max] and still be certified against the nearest bound.
    """

    config: SimulationConfig
    kkt_tol: float = 1e-6
    freq_tol: float = 1e-3
    dispatch_rel_tol: float = 5e-3
    capacity_slack: float = 1e-6

    def run(self, scenario: Scenario) -> RunReport:
        """Simulate `scenario` under `self.config` and return the report."""
        cfg = self.config
        started = time.perf_counter()
        report = RunReport(scenario=scenario.name, variant=cfg.variant, status="invalid")
        try:
            validate_scenario(scenario, cfg.variant)
            plant, state = initialize(scenario.network, scenario.plant, scenario.v_set, cfg.solver)
            logger.info("%s: integrating %s variant to t=%g s (dt=%g)", scenario.name, cfg.variant, cfg.t_end, cfg.dt)
            trajectory = simulate(scenario.network, plant, state, scenario.events, cfg)
        except Infeasible as err:
            report.status, report.message = "not_certified", str(err)
            return self._finish(report, started)
        except (NonConvergence, NegativeVoltageIterate) as err:
            report.status, report.message, report.diverged_at = "diverged", str(err), 0.0
            return self._finish(report, started)
        except SimulationDiverged as err:
            report.status, report.message, report.diverged_at = "diverged", str(err), err.time
            report.trajectory = err.partial
            return self._finish(report, started)
        except (DisconnectedAfterEvent, ValueError) as err:
            report.status, report.message = "invalid", str(err)
            if getattr(err, "assumption", None) == "A3":
                report.status = "not_certified"
            return self._finish(report, started)

        report.trajectory = trajectory
        trajectory.steady = detect_steady_state(trajectory, cfg.steady.window, cfg.steady.tol)
        trajectory.monitors = compute_monitors(trajectory)
        report.lyapunov = lyapunov_audit(trajectory.monitors)

        if not trajectory.steady.converged:
            report.status = "not_certified"
            report.message = (
                f"no steady state in the last {cfg.steady.window:g} s "
                f"(|w|={trajectory.steady.max_omega:.2e}, rate={trajectory.steady.max_rate:.2e})"
            )
            return self._finish(report, started)

        try:
            report.certification = self.certify(trajectory)
        except Infeasible as err:
            report.status, report.message = "not_certified", f"steady dispatch cannot be certified: {err}"
            return self._finish(report, started)
        report.passivity = self._passivity(trajectory)
        report.disturbance = disturbance_ratio_audit(trajectory)
        cert = report.certification
        ok = (
            cert.kkt.max < self.kkt_tol
            and cert.max_freq_dev < self.freq_tol
            and cert.max_relative_gap < self.dispatch_rel_tol
        )
        report.status = "certified" if ok else "not_certified"
        report.message = (
            f"KKT residual {cert.kkt.max:.2e}, oracle gap {100.0 * cert.max_relative_gap:.3f}%, "
            f"max |w| {cert.max_freq_dev:.2e} rad/s"
        )
        return self._finish(report, started)

    def certify(self, trajectory: Trajectory) -> Certification:
        """Compare the detected equilibrium of `trajectory` with the dispatch oracle.

        Raises:
            Infeasible: the steady ΣPg lies outside the capacity range by more
                than `capacity_slack`.
        """
        plant = trajectory.plant
        equilibrium = trajectory.steady.equilibrium
        problem, kkt = closed_loop_kkt(plant, equilibrium)
        lo, hi = float(problem.p_min.sum()), float(problem.p_max.sum())
        if lo - self.capacity_slack <= problem.demand <= hi + self.capacity_slack:
            problem = replace(problem, demand=min(max(problem.demand, lo), hi))
        oracle = solve_sfc(problem)
        live = plant.controllers[equilibrium.online[plant.controllers]]
        pg = np.asarray(equilibrium.machines.Pg)[live]
        gap = np.abs(pg - oracle.pg) / np.maximum(np.abs(oracle.pg), 1e-3)
        return Certification(
            kkt=kkt,
            demand=problem.demand,
            oracle=oracle,
            pg=pg,
            max_relative_gap=float(gap.max()),
            max_freq_dev=max(trajectory.steady.max_omega, trajectory.steady.max_omega_tilde),
        )

    def _passivity(self, trajectory: Trajectory) -> list[PassivityReport]:
        bank = trajectory.machines
        online = trajectory.steady.equilibrium.online
        reports = []
        for k in range(len(bank)):
            if not online[k]:
                continue
            if not bank.controllable[k]:
                reports.append(passivity_audit(trajectory, k, "C1"))
            reports.append(passivity_audit(trajectory, k, "C2"))
        return reports

    @staticmethod
    def _finish(report: RunReport, started: float) -> RunReport:
        report.elapsed = time.perf_counter() - started
        log = logger.info if report.status == "certified" else logger.warning
        log("%s [%s]: %s in %.1f s: %s", report.scenario, report.variant, report.status, report.elapsed, report.message)
        return report
