"""Dense two-phase revised simplex with Bland's rule.

Meant for small problems (tens of rows): it recomputes the basis inverse
every iteration, which keeps it short and deterministic. Duals are the
basic multipliers ``c_B B^-1`` mapped back to the original rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

EPS = 1e-9


@dataclass
class DenseResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    x: np.ndarray | None
    objective: float
    y_eq: np.ndarray | None  # d objective / d b_eq
    y_ub: np.ndarray | None  # d objective / d b_ub  (<= 0)
    iterations: int


def _simplex(M, q, cost, basis, allowed, max_iter, it0=0):
    """Bland-rule primal simplex on ``min cost.z, M z = q, z >= 0`` from a feasible basis."""
    m, n = M.shape
    it = it0
    while True:
        B = M[:, basis]
        Binv = np.linalg.inv(B)
        zB = Binv @ q
        y = cost[basis] @ Binv
        reduced = cost - y @ M
        entering = -1
        for j in range(n):
            if allowed[j] and j not in basis and reduced[j] < -EPS:
                entering = j
                break
        if entering < 0:
            return "optimal", basis, Binv, it
        if it >= max_iter:
            return "iteration_limit", basis, Binv, it
        col = Binv @ M[:, entering]
        leave, best = -1, np.inf
        for r in range(m):
            if col[r] > EPS:
                ratio = max(zB[r], 0.0) / col[r]
                if ratio < best - EPS or (abs(ratio - best) <= EPS and basis[r] < basis[leave]):
                    leave, best = r, ratio
        if leave < 0:
            return "unbounded", basis, Binv, it
        basis = basis.copy()
        basis[leave] = entering
        it += 1


def solve_dense(c, A_eq, b_eq, A_ub, b_ub, lb, ub, max_iter: int = 10_000) -> DenseResult:
    """Solve ``min c.x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``lb <= x <= ub``."""
    c = np.asarray(c, float)
    n = len(c)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float)).reshape(-1, n)
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float)).reshape(-1, n)
    b_eq = np.asarray(b_eq if b_eq is not None else [], float)
    b_ub = np.asarray(b_ub if b_ub is not None else [], float)
    lb = np.asarray(lb, float)
    ub = np.asarray(ub, float)
    me, mu = len(b_eq), len(b_ub)

    # x_j = shift_j + sum_k T[j, k] z_k with z >= 0
    cols_T: list[tuple[int, float]] = []
    shift = np.zeros(n)
    bound_rows: list[tuple[int, float]] = []  # (z index, upper bound on z)
    for j in range(n):
        if np.isfinite(lb[j]):
            shift[j] = lb[j]
            cols_T.append((j, 1.0))
            if np.isfinite(ub[j]):
                bound_rows.append((len(cols_T) - 1, ub[j] - lb[j]))
        elif np.isfinite(ub[j]):
            shift[j] = ub[j]
            cols_T.append((j, -1.0))
        else:
            cols_T.append((j, 1.0))
            cols_T.append((j, -1.0))
    nz = len(cols_T)
    T = np.zeros((n, nz))
    for k, (j, s) in enumerate(cols_T):
        T[j, k] = s

    mb = len(bound_rows)
    m = me + mu + mb
    n_slack = mu + mb
    M = np.zeros((m, nz + n_slack))
    q = np.zeros(m)
    M[:me, :nz] = A_eq @ T
    q[:me] = b_eq - A_eq @ shift
    M[me:me + mu, :nz] = A_ub @ T
    q[me:me + mu] = b_ub - A_ub @ shift
    for r, (k, bound) in enumerate(bound_rows):
        M[me + mu + r, k] = 1.0
        q[me + mu + r] = bound
    M[me:, nz:] = np.eye(n_slack)
    cost = np.concatenate([c @ T, np.zeros(n_slack)])
    const = float(c @ shift)

    sign = np.where(q < 0, -1.0, 1.0)
    M *= sign[:, None]
    q *= sign

    # phase 1 with one artificial per row
    N = M.shape[1]
    M1 = np.hstack([M, np.eye(m)])
    cost1 = np.concatenate([np.zeros(N), np.ones(m)])
    basis = np.arange(N, N + m)
    allowed = np.ones(N + m, bool)
    status, basis, Binv, it = _simplex(M1, q, cost1, basis, allowed, max_iter)
    if status == "iteration_limit":
        return DenseResult(status, None, np.nan, None, None, it)
    if float(cost1[basis] @ (Binv @ q)) > 1e-7 * max(1.0, np.abs(q).max(initial=0.0)):
        return DenseResult("infeasible", None, np.nan, None, None, it)

    # drive artificials out of the basis; rows where that fails are redundant
    keep = np.ones(m, bool)
    for r in range(m):
        if basis[r] < N:
            continue
        row = (Binv @ M1)[r, :N]
        cand = [j for j in range(N) if abs(row[j]) > 1e-7 and j not in basis]
        if cand:
            basis = basis.copy()
            basis[r] = cand[0]
            Binv = np.linalg.inv(M1[:, basis])
        else:
            keep[r] = False
    if not keep.all():
        rows = np.flatnonzero(keep)
        basis = basis[keep]
        M_red, q_red = M[rows], q[rows]
    else:
        rows = np.arange(m)
        M_red, q_red = M, q

    allowed = np.ones(N, bool)
    status, basis, Binv, it = _simplex(M_red, q_red, cost, basis, allowed, max_iter, it)
    if status != "optimal":
        return DenseResult(status, None, np.nan, None, None, it)

    z = np.zeros(N)
    z[basis] = Binv @ q_red
    z = np.maximum(z, 0.0)
    x = shift + T @ z[:nz]
    y_red = cost[basis] @ Binv
    y = np.zeros(m)
    y[rows] = y_red
    y *= sign
    return DenseResult(
        "optimal",
        x,
        float(c @ x),
        y[:me].copy(),
        y[me:me + mu].copy(),
        it,
    )
