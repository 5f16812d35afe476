"""Economic-dispatch oracle and KKT certification.

The dispatch problem has one balance equality and box constraints, so the dual
is a monotone scalar map: P_i(λ) = clip((−λ − b_i)/a_i, p_min, p_max) is
non-increasing in λ and bisection finds the balancing multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controller import CostFunction
from .errors import Infeasible

# Controllable units of the 39-bus study, costs in $/MW²h and $/MWh, limits in MW.
NE39_COSTS: dict[str, dict[str, float]] = {
    "G32": {"a": 0.00009, "b": 0.032, "p_min": 0.0, "p_max": 1000.0},
    "G36": {"a": 0.00014, "b": 0.030, "p_min": 0.0, "p_max": 1000.0},
    "G38": {"a": 0.00010, "b": 0.032, "p_min": 0.0, "p_max": 850.0},
    "G39": {"a": 0.00008, "b": 0.032, "p_min": 0.0, "p_max": 1080.0},
}


@dataclass(frozen=True, slots=True)
class DispatchProblem:
    """Share `demand` among generators at least cost.

    Attributes:
        costs: One cost function per generator.
        p_min: Lower limits.
        p_max: Upper limits.
        demand: Total power to share (same unit as the limits).
        names: Optional generator labels.
    """

    costs: tuple[CostFunction, ...]
    p_min: np.ndarray
    p_max: np.ndarray
    demand: float
    names: tuple[str, ...] = ()
    _a: np.ndarray = field(init=False, repr=False, compare=False)
    _b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = len(self.costs)
        if n == 0:
            raise ValueError("Dispatch problem needs at least one generator")
        object.__setattr__(self, "p_min", np.asarray(self.p_min, dtype=float))
        object.__setattr__(self, "p_max", np.asarray(self.p_max, dtype=float))
        if self.p_min.shape != (n,) or self.p_max.shape != (n,):
            raise ValueError(f"Limits must have shape ({n},)")
        if np.any(self.p_min > self.p_max):
            raise ValueError("Every p_min must not exceed its p_max")
        if self.names and len(self.names) != n:
            raise ValueError(f"Expected {n} names, got {len(self.names)}")
        object.__setattr__(self, "_a", np.array([c.a for c in self.costs]))
        object.__setattr__(self, "_b", np.array([c.b for c in self.costs]))

    @classmethod
    def ne39_costs(cls, demand: float) -> DispatchProblem:
        """Build the four-unit problem in MW with the tabulated costs and limits."""
        rows = NE39_COSTS.values()
        return cls(
            costs=tuple(CostFunction(r["a"], r["b"]) for r in rows),
            p_min=np.array([r["p_min"] for r in rows]),
            p_max=np.array([r["p_max"] for r in rows]),
            demand=float(demand),
            names=tuple(NE39_COSTS),
        )

    @property
    def a(self) -> np.ndarray:
        return self._a

    @property
    def b(self) -> np.ndarray:
        return self._b

    def marginal(self, pg: np.ndarray) -> np.ndarray:
        return self._a * pg + self._b

    def response(self, lam: float | np.ndarray) -> np.ndarray:
        """Return P_i(λ); a column vector of λ gives one row per λ."""
        lam = np.asarray(lam, dtype=float)
        raw = (-lam[..., None] - self._b) / self._a
        return np.clip(raw, self.p_min, self.p_max)

    def with_demand(self, demand: float) -> DispatchProblem:
        return DispatchProblem(self.costs, self.p_min, self.p_max, float(demand), self.names)


@dataclass(slots=True)
class KKTReport:
    """Individual KKT residuals (max-norm) and their maximum."""

    stationarity: float
    balance: float
    bounds: float
    dual_sign: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.balance, self.bounds, self.dual_sign, self.complementarity)


@dataclass(slots=True)
class DispatchSolution:
    """Optimal dispatch.

    Attributes:
        pg: Optimal generations.
        lam: Balance multiplier μ₀ (equals −marginal cost of interior units).
        binding: Generator index → `"lower"` or `"upper"` for units at a limit.
        gamma_minus: Lower-limit multipliers.
        gamma_plus: Upper-limit multipliers.
        kkt_residual: Max-norm KKT residual of the returned point.
    """

    pg: np.ndarray
    lam: float
    binding: dict[int, str]
    gamma_minus: np.ndarray
    gamma_plus: np.ndarray
    kkt_residual: float

    def marginal_costs(self, problem: DispatchProblem) -> np.ndarray:
        return problem.marginal(self.pg)


def check_a3(problem: DispatchProblem) -> tuple[bool, bool]:
    """Return `(feasible, strict)` for Σp_min ≤ demand ≤ Σp_max."""
    lo, hi = float(problem.p_min.sum()), float(problem.p_max.sum())
    d = problem.demand
    return lo <= d <= hi, lo < d < hi


def _limit_multipliers(problem: DispatchProblem, pg: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    excess = problem.marginal(pg) + lam
    at_min = pg <= problem.p_min
    at_max = pg >= problem.p_max
    gamma_minus = np.where(at_min, np.maximum(excess, 0.0), 0.0)
    gamma_plus = np.where(at_max, np.maximum(-excess, 0.0), 0.0)
    return gamma_minus, gamma_plus


def _polish(problem: DispatchProblem, lam: float) -> float:
    """Solve the balance exactly for the active set implied by `lam`."""
    pg = problem.response(lam)
    interior = (pg > problem.p_min) & (pg < problem.p_max)
    if not np.any(interior):
        return lam
    fixed = float(pg[~interior].sum())
    inv_a = 1.0 / problem.a[interior]
    exact = -(problem.demand - fixed + float(np.sum(problem.b[interior] * inv_a))) / float(np.sum(inv_a))
    trial = (-exact - problem.b[interior]) / problem.a[interior]
    if np.all(trial >= problem.p_min[interior]) and np.all(trial <= problem.p_max[interior]):
        return exact
    return lam


def solve_sfc(problem: DispatchProblem, tol: float = 1e-10, max_iter: int = 400) -> DispatchSolution:
    """Solve the dispatch problem by bisection on λ.

    Raises:
        Infeasible: demand outside [Σp_min, Σp_max].
    """
    feasible, _ = check_a3(problem)
    if not feasible:
        raise Infeasible(
            f"A3 violated: demand {problem.demand:g} outside "
            f"[{problem.p_min.sum():g}, {problem.p_max.sum():g}]"
        )
    # At lam_lo every unit sits at p_max, at lam_hi every unit at p_min.
    lam_lo = float(-np.max(problem.marginal(problem.p_max))) - 1.0
    lam_hi = float(-np.min(problem.marginal(problem.p_min))) + 1.0
    lam = 0.5 * (lam_lo + lam_hi)
    for _ in range(max_iter):
        lam = 0.5 * (lam_lo + lam_hi)
        gap = float(problem.response(lam).sum()) - problem.demand
        if abs(gap) < tol:
            break
        if gap > 0.0:
            lam_lo = lam
        else:
            lam_hi = lam
    lam = _polish(problem, lam)

    pg = problem.response(lam)
    gamma_minus, gamma_plus = _limit_multipliers(problem, pg, lam)
    binding = {int(k): "lower" for k in np.flatnonzero(pg <= problem.p_min)}
    binding.update({int(k): "upper" for k in np.flatnonzero(pg >= problem.p_max)})
    report = kkt_residual(problem, pg, lam, gamma_minus, gamma_plus)
    return DispatchSolution(
        pg=pg,
        lam=float(lam),
        binding=binding,
        gamma_minus=gamma_minus,
        gamma_plus=gamma_plus,
        kkt_residual=report.max,
    )


def solve_sfc_grid(problem: DispatchProblem, n: int = 1_000_000, chunk: int = 100_000) -> tuple[np.ndarray, float]:
    """Brute-force oracle: best λ on a uniform grid of `n` points.

    Returns:
        `(pg, lam)` for the grid point with the smallest balance gap.
    """
    lam_lo = float(-np.max(problem.marginal(problem.p_max))) - 1e-3
    lam_hi = float(-np.min(problem.marginal(problem.p_min))) + 1e-3
    grid = np.linspace(lam_lo, lam_hi, n)
    best_gap, best_lam = np.inf, grid[0]
    for start in range(0, n, chunk):
        lams = grid[start : start + chunk]
        gaps = np.abs(problem.response(lams).sum(axis=1) - problem.demand)
        k = int(np.argmin(gaps))
        if gaps[k] < best_gap:
            best_gap, best_lam = float(gaps[k]), float(lams[k])
    return problem.response(best_lam), best_lam


def kkt_residual(
    problem: DispatchProblem,
    pg: Sequence[float],
    mu: float | Sequence[float],
    gamma_minus: Sequence[float],
    gamma_plus: Sequence[float],
) -> KKTReport:
    """Evaluate the KKT conditions of the dispatch problem at a candidate point.

    `mu` may be a scalar λ or one estimate per generator (closed-loop μ_i).
    """
    pg = np.asarray(pg, dtype=float)
    gm = np.asarray(gamma_minus, dtype=float)
    gp = np.asarray(gamma_plus, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), pg.shape)
    stationarity = np.abs(problem.marginal(pg) - gm + gp + mu)
    bounds = np.maximum(problem.p_min - pg, 0.0) + np.maximum(pg - problem.p_max, 0.0)
    dual = np.maximum(-gm, 0.0) + np.maximum(-gp, 0.0)
    comp = np.maximum(np.abs(gm * (problem.p_min - pg)), np.abs(gp * (pg - problem.p_max)))
    return KKTReport(
        stationarity=float(stationarity.max()),
        balance=abs(float(pg.sum()) - problem.demand),
        bounds=float(bounds.max()),
        dual_sign=float(dual.max()),
        complementarity=float(comp.max()),
    )
