"""Solve :class:`LPProblem` instances and check optimality certificates.

Dual convention used throughout the package: for an equality row the dual
is ``d objective / d rhs`` (the nodal price for balance rows); for a ``<=``
row it is the cost increase per unit of *tightening*, ``-d objective / d rhs``,
which is non-negative at an optimum of a minimization.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .lp_builder import LPProblem
from .simplex import solve_dense

logger = logging.getLogger(__name__)


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL = "numerical"


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-6
    cs: float = 1e-6
    gap: float = 1e-6

    @classmethod
    def from_env(cls) -> Tolerances:
        """Defaults overridden by ``CO2FLEX_TOL_FEAS``/``_CS``/``_GAP``."""
        kw = {}
        for key in ("feas", "cs", "gap"):
            raw = os.environ.get(f"CO2FLEX_TOL_{key.upper()}")
            if raw:
                kw[key] = float(raw)
        return cls(**kw)


@dataclass
class SolvedSystem:
    status: SolveStatus
    problem: LPProblem = field(repr=False)
    x: np.ndarray | None = None
    objective: float = math.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    wall_time: float = 0.0
    backend: str = "highs"
    message: str = ""
    flags: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def value(self, name: str) -> float:
        return float(self.x[self.problem.col(name)])

    def dual(self, name: str) -> float:
        return float(self.duals[self.problem.row(name)])

    def natural_duals(self) -> np.ndarray:
        """``d objective / d rhs`` for every row."""
        return np.where(self.problem.sense == "L", -self.duals, self.duals)


@dataclass
class CertificateReport:
    primal_violation: float
    dual_sign_violation: float
    dual_feasibility_violation: float
    complementary_slackness: float
    duality_gap: float
    tolerances: Tolerances
    worst: dict = field(default_factory=dict)

    @property
    def primal_ok(self) -> bool:
        return self.primal_violation <= self.tolerances.feas

    @property
    def dual_sign_ok(self) -> bool:
        return self.dual_sign_violation <= self.tolerances.feas

    @property
    def dual_feasible_ok(self) -> bool:
        return self.dual_feasibility_violation <= self.tolerances.feas

    @property
    def cs_ok(self) -> bool:
        return self.complementary_slackness <= self.tolerances.cs

    @property
    def gap_ok(self) -> bool:
        return self.duality_gap <= self.tolerances.gap

    @property
    def passed(self) -> bool:
        return self.primal_ok and self.dual_sign_ok and self.dual_feasible_ok and self.cs_ok and self.gap_ok

    def failures(self) -> list[str]:
        checks = {
            "primal_feasibility": self.primal_ok,
            "dual_sign": self.dual_sign_ok,
            "dual_feasibility": self.dual_feasible_ok,
            "complementary_slackness": self.cs_ok,
            "duality_gap": self.gap_ok,
        }
        return [k for k, ok in checks.items() if not ok]


def verify_certificate(
    problem: LPProblem, solution: SolvedSystem, tol: Tolerances | None = None
) -> CertificateReport:
    """Check a primal-dual pair against the problem data alone.

    Row violations are relative to ``1 + max(|rhs|, |activity terms|)``; dual
    checks are relative to ``max(1, max|c|)``; complementary slackness and
    the duality gap are relative to ``max(1, |objective|)``.
    """
    tol = tol or Tolerances()
    x = solution.x
    A = problem.A
    ax = A @ x
    rhs = problem.rhs
    is_l = problem.sense == "L"
    row_scale = 1.0 + np.maximum(np.abs(rhs), abs(A) @ np.abs(x))
    resid = ax - rhs
    viol = np.where(is_l, np.maximum(resid, 0.0), np.abs(resid)) / row_scale
    lb, ub = problem.lb, problem.ub
    col_scale = 1.0 + np.abs(x)
    with np.errstate(invalid="ignore"):
        bviol = np.maximum(np.where(np.isfinite(lb), lb - x, 0.0), np.where(np.isfinite(ub), x - ub, 0.0))
    bviol = np.maximum(bviol, 0.0) / col_scale
    primal = float(max(viol.max(initial=0.0), bviol.max(initial=0.0)))

    dscale = max(1.0, float(np.abs(problem.c).max(initial=0.0)))
    reported = solution.duals
    sign_viol = float(np.maximum(-reported[is_l], 0.0).max(initial=0.0)) / dscale
    y = solution.natural_duals()
    d = problem.c - A.T @ y
    dpos = np.maximum(d, 0.0)
    dneg = np.maximum(-d, 0.0)
    dfeas = float(
        max(
            dpos[~np.isfinite(lb)].max(initial=0.0),
            dneg[~np.isfinite(ub)].max(initial=0.0),
        )
    ) / dscale

    oscale = max(1.0, abs(solution.objective))
    slack = np.where(is_l, rhs - ax, 0.0)
    cs_rows = np.abs(y) * np.abs(slack)
    with np.errstate(invalid="ignore"):
        cs_lo = np.where(np.isfinite(lb), dpos * np.abs(x - lb), 0.0)
        cs_hi = np.where(np.isfinite(ub), dneg * np.abs(ub - x), 0.0)
    cs = float(max(cs_rows.max(initial=0.0), cs_lo.max(initial=0.0), cs_hi.max(initial=0.0))) / oscale

    fin_lb = np.where(np.isfinite(lb), lb, 0.0)
    fin_ub = np.where(np.isfinite(ub), ub, 0.0)
    dual_obj = float(rhs @ y + dpos @ fin_lb - dneg @ fin_ub) + problem.offset
    primal_obj = float(problem.c @ x) + problem.offset
    gap = abs(primal_obj - dual_obj) / max(1.0, abs(primal_obj))

    worst = {
        "row": problem.row_names[int(np.argmax(viol))] if len(viol) else None,
        "cs_row": problem.row_names[int(np.argmax(cs_rows))] if len(cs_rows) else None,
        "primal_objective": primal_obj,
        "dual_objective": dual_obj,
    }
    return CertificateReport(primal, sign_viol, dfeas, cs, gap, tol, worst)


def _solve_highs(problem: LPProblem, method: str):
    is_l = problem.sense == "L"
    A = problem.A
    bounds = np.column_stack([problem.lb, problem.ub])
    res = linprog(
        problem.c,
        A_ub=A[is_l] if is_l.any() else None,
        b_ub=problem.rhs[is_l] if is_l.any() else None,
        A_eq=A[~is_l] if (~is_l).any() else None,
        b_eq=problem.rhs[~is_l] if (~is_l).any() else None,
        bounds=bounds,
        method=method,
        options={"presolve": True},
    )
    status = {0: SolveStatus.OPTIMAL, 2: SolveStatus.INFEASIBLE, 3: SolveStatus.UNBOUNDED}.get(
        res.status, SolveStatus.NUMERICAL
    )
    if status is not SolveStatus.OPTIMAL:
        return status, None, None, int(getattr(res, "nit", 0) or 0), res.message
    y = np.zeros(len(problem.rhs))
    if is_l.any():
        y[is_l] = res.ineqlin.marginals
    if (~is_l).any():
        y[~is_l] = res.eqlin.marginals
    return status, res.x, y, int(res.nit), res.message


def _solve_simplex(problem: LPProblem):
    is_l = problem.sense == "L"
    A = problem.A.toarray()
    r = solve_dense(problem.c, A[~is_l], problem.rhs[~is_l], A[is_l], problem.rhs[is_l],
                    problem.lb, problem.ub)
    status = {
        "optimal": SolveStatus.OPTIMAL,
        "infeasible": SolveStatus.INFEASIBLE,
        "unbounded": SolveStatus.UNBOUNDED,
    }.get(r.status, SolveStatus.NUMERICAL)
    if status is not SolveStatus.OPTIMAL:
        return status, None, None, r.iterations, r.status
    y = np.zeros(len(problem.rhs))
    y[is_l] = r.y_ub
    y[~is_l] = r.y_eq
    return status, r.x, y, r.iterations, "optimal"


def solve(
    problem: LPProblem,
    tolerances: Tolerances | None = None,
    backend: str = "highs",
    verify: bool = True,
) -> SolvedSystem:
    """Solve ``problem`` to optimality.

    ``backend`` is ``"highs"`` (HiGHS dual simplex through SciPy),
    ``"highs-ipm"`` (interior point with crossover) or ``"simplex"`` (the
    dense Bland-rule simplex, small problems only). An
    optimal answer whose certificate fails verification is returned with
    status ``NUMERICAL`` rather than passed on silently.
    """
    tol = tolerances or Tolerances.from_env()
    t0 = time.perf_counter()
    if backend == "highs":
        status, x, y, nit, msg = _solve_highs(problem, "highs-ds")
    elif backend == "highs-ipm":
        status, x, y, nit, msg = _solve_highs(problem, "highs-ipm")
    elif backend == "simplex":
        status, x, y, nit, msg = _solve_simplex(problem)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    elapsed = time.perf_counter() - t0
    sol = SolvedSystem(status, problem, iterations=nit, wall_time=elapsed, backend=backend, message=str(msg))
    if status is not SolveStatus.OPTIMAL:
        return sol
    sol.x = x
    sol.objective = float(problem.c @ x) + problem.offset
    sol.duals = np.where(problem.sense == "L", -y, y)
    sol.reduced_costs = problem.c - problem.A.T @ y
    sol.flags["primal_degenerate"] = _primal_degenerate(problem, x, tol.feas)
    if verify:
        report = verify_certificate(problem, sol, tol)
        sol.flags["certificate"] = report
        if not report.passed:
            logger.warning("certificate check failed (%s)", ", ".join(report.failures()))
            sol.status = SolveStatus.NUMERICAL
            sol.message = "certificate check failed: " + ", ".join(report.failures())
    return sol


def _primal_degenerate(problem: LPProblem, x: np.ndarray, tol: float) -> bool:
    """More active constraints than columns: the optimal duals may not be unique."""
    ax = problem.A @ x
    scale = 1.0 + np.abs(problem.rhs)
    active_rows = np.count_nonzero(
        (problem.sense == "E") | (np.abs(problem.rhs - ax) <= tol * scale)
    )
    at_bound = np.count_nonzero(
        (np.abs(x - problem.lb) <= tol * (1 + np.abs(x))) | (np.abs(problem.ub - x) <= tol * (1 + np.abs(x)))
    )
    return bool(active_rows + at_bound > problem.shape[1])


@dataclass(frozen=True)
class DegeneracyProbe:
    row: str
    dual: float
    slope_tighten: float
    slope_relax: float
    nonunique: bool


def probe_degeneracy(
    problem: LPProblem,
    solution: SolvedSystem,
    rows: list[int] | None = None,
    delta: float | None = None,
    rtol: float = 1e-3,
    backend: str = "highs",
) -> list[DegeneracyProbe]:
    """Re-solve with each row's rhs nudged both ways and compare one-sided slopes.

    Differing slopes mean the optimal dual of that row is not unique; the
    reported dual is then one element of the interval between the slopes.
    Only ``<=`` rows are probed by default (the CO2 rows when present).
    """
    if rows is None:
        rows = problem.rows_with_prefix("co2:")
    out = []
    for i in rows:
        b = problem.rhs[i]
        step = delta if delta is not None else 1e-4 * max(1.0, abs(b))
        sign = -1.0 if problem.sense[i] == "L" else 1.0
        slopes = []
        for direction in (+1.0, -1.0):
            # direction +1 tightens an L row (lower rhs) / raises an E row
            pert = solve(problem.with_rhs(i, b + sign * direction * step), backend=backend, verify=False)
            if not pert.optimal:
                slopes.append(math.nan)
                continue
            slopes.append(direction * (pert.objective - solution.objective) / step)
        tighten, relax = slopes
        dual = float(solution.duals[i])
        ref = max(1.0, abs(dual))
        nonunique = bool(
            np.isfinite(tighten) and np.isfinite(relax) and abs(tighten - relax) > rtol * ref
        )
        out.append(DegeneracyProbe(problem.row_names[i], dual, tighten, relax, nonunique))
    solution.flags["degenerate_rows"] = [p.row for p in out if p.nonunique]
    return out


def dump_solution_csv(solution: SolvedSystem, path: str | Path) -> None:
    """One line per named column (primal value) and per named row (dual)."""
    problem = solution.problem
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "name", "value"])
        if solution.x is not None:
            for name, v in zip(problem.col_names, solution.x):
                w.writerow(["primal", name, repr(float(v))])
            for name, v in zip(problem.row_names, solution.duals):
                w.writerow(["dual", name, repr(float(v))])
