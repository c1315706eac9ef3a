"""Translate a network and CO2 policy into a named sparse linear program.

Variables are average MW over a timestep (capacities in MW or MWh); the
objective is in currency per year and emission rows in tCO2 per year, so
every operational term carries ``timestep_hours * year_weight``.

Row families and their dual meaning:

``balance:<node>:<t>``        nodal balance (=), dual is the nodal price
``dispatch:<gen>:<t>``        g - cf * G <= 0
``flow_fwd|flow_rev:<line>:<t>``  +-f - F <= 0
``charge_lim|discharge_lim|soc_lim:<sto>:<t>``  storage power/energy limits
``soc:<sto>:<t>``             cyclic state-of-charge recursion (=)
``co2:global``                single system-wide cap
``co2:national:<node>``       per-node target
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .system_model import (
    CO2Policy,
    NetworkInstance,
    annualized_capital_cost,
    annualized_investment,
    annuity_factor,
    electric_emission_intensity,
)

DEFAULT_DISCOUNT_RATE = 0.07


@dataclass(frozen=True, eq=False)
class LPProblem:
    """``min c.x + offset`` s.t. ``A x (=|<=) rhs``, ``lb <= x <= ub``.

    ``sense`` holds ``"E"`` or ``"L"`` per row. ``col_meta``/``row_meta`` map
    every column and row back to the domain object it represents.
    """

    c: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    col_names: tuple[str, ...]
    row_names: tuple[str, ...]
    col_meta: tuple[dict, ...]
    row_meta: tuple[dict, ...]
    offset: float = 0.0
    _row_index: dict = field(default_factory=dict, repr=False)
    _col_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        m, n = self.A.shape
        if not (len(self.c) == len(self.lb) == len(self.ub) == len(self.col_names) == n):
            raise ValueError("column dimension mismatch")
        if not (len(self.rhs) == len(self.sense) == len(self.row_names) == m):
            raise ValueError("row dimension mismatch")
        if np.any(self.lb > self.ub):
            bad = int(np.argmax(self.lb > self.ub))
            raise ValueError(f"lower bound exceeds upper bound for {self.col_names[bad]}")
        if not set(np.unique(self.sense)) <= {"E", "L"}:
            raise ValueError("row sense must be 'E' or 'L'")
        for arr in (self.c, self.sense, self.rhs, self.lb, self.ub):
            arr.setflags(write=False)
        self._row_index.update({name: i for i, name in enumerate(self.row_names)})
        self._col_index.update({name: j for j, name in enumerate(self.col_names)})

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def row(self, name: str) -> int:
        return self._row_index[name]

    def col(self, name: str) -> int:
        return self._col_index[name]

    def rows_with_prefix(self, prefix: str) -> list[int]:
        return [i for i, name in enumerate(self.row_names) if name.startswith(prefix)]

    def cols_with_prefix(self, prefix: str) -> list[int]:
        return [j for j, name in enumerate(self.col_names) if name.startswith(prefix)]

    def with_rhs(self, row: int, value: float) -> LPProblem:
        rhs = self.rhs.copy()
        rhs[row] = value
        return replace(self, rhs=rhs, _row_index={}, _col_index={})

    def with_objective(self, c: np.ndarray, offset: float | None = None) -> LPProblem:
        return replace(
            self,
            c=np.asarray(c, dtype=float).copy(),
            offset=self.offset if offset is None else offset,
            _row_index={},
            _col_index={},
        )

    @classmethod
    def from_arrays(
        cls,
        c,
        A,
        sense,
        rhs,
        lb=None,
        ub=None,
        col_names=None,
        row_names=None,
        offset: float = 0.0,
    ) -> LPProblem:
        """Convenience constructor for hand-written or random problems."""
        A = sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=float)) if not sp.issparse(A) else A)
        m, n = A.shape
        col_names = tuple(col_names or (f"x{j}" for j in range(n)))
        row_names = tuple(row_names or (f"r{i}" for i in range(m)))
        return cls(
            c=np.asarray(c, dtype=float).copy(),
            A=A,
            sense=np.asarray(list(sense) if isinstance(sense, str) else sense, dtype="<U1").copy(),
            rhs=np.asarray(rhs, dtype=float).copy(),
            lb=np.zeros(n) if lb is None else np.asarray(lb, dtype=float).copy(),
            ub=np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).copy(),
            col_names=col_names,
            row_names=row_names,
            col_meta=tuple({"family": "x"} for _ in range(n)),
            row_meta=tuple({"family": "r"} for _ in range(m)),
            offset=offset,
        )


@dataclass(frozen=True)
class BuildReport:
    variables: dict[str, int]
    constraints: dict[str, int]
    horizon: int
    policy_mode: str

    @property
    def n_variables(self) -> int:
        return sum(self.variables.values())

    @property
    def n_constraints(self) -> int:
        return sum(self.constraints.values())


@dataclass(frozen=True, eq=False)
class SystemSummary:
    """Domain-level view of one optimal solve, arrays ordered like ``nodes``.

    Emissions in tCO2/yr, production in MWh/yr, prices in currency/MWh and
    abatement costs in currency/tCO2 (the CO2 row duals).
    """

    nodes: tuple[str, ...]
    total_cost: float
    emissions: np.ndarray
    production: np.ndarray
    mean_price: np.ndarray
    mean_price_weighted: np.ndarray
    abatement_cost: np.ndarray
    policy_mode: str

    @property
    def total_emissions(self) -> float:
        return math.fsum(self.emissions)


def emissions_row_coefficients(network: NetworkInstance) -> dict[str, float]:
    """Dispatch column name -> tCO2 per year per MW of average dispatch.

    Carbon-free generators are omitted.
    """
    weight = network.timestep_hours * network.year_weight
    out: dict[str, float] = {}
    for g in network.generators:
        coef = electric_emission_intensity(g.tech) * weight
        if coef == 0.0:
            continue
        for t in range(network.horizon):
            out[f"gen:{g.name}:{t}"] = coef
    return out


class _Assembler:
    def __init__(self) -> None:
        self.cols: list[str] = []
        self.col_meta: list[dict] = []
        self.c: list[float] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.rows: list[str] = []
        self.row_meta: list[dict] = []
        self.sense: list[str] = []
        self.rhs: list[float] = []
        self.ri: list[int] = []
        self.ci: list[int] = []
        self.vals: list[float] = []

    def col(self, name: str, cost: float, lb: float, ub: float, **meta: Any) -> int:
        self.cols.append(name)
        self.col_meta.append(meta)
        self.c.append(cost)
        self.lb.append(lb)
        self.ub.append(ub)
        return len(self.cols) - 1

    def row(self, name: str, terms: list[tuple[int, float]], sense: str, rhs: float, **meta: Any) -> int:
        i = len(self.rows)
        self.rows.append(name)
        self.row_meta.append(meta)
        self.sense.append(sense)
        self.rhs.append(rhs)
        for j, v in terms:
            if v != 0.0:
                self.ri.append(i)
                self.ci.append(j)
                self.vals.append(v)
        return i


class ProblemFactory:
    """Builds the network part of the LP once and attaches CO2 rows per policy.

    ``build(network, policy)`` is the one-shot equivalent; the sampler keeps a
    factory around because only the CO2 rows change between evaluations.
    """

    def __init__(self, network: NetworkInstance, discount_rate: float = DEFAULT_DISCOUNT_RATE):
        self.network = network
        self.discount_rate = discount_rate
        self._core = self._assemble_core()
        self._emission_terms = self._emission_columns()
        self._gen_cols = [j for j, m in enumerate(self._core.col_meta) if m["family"] == "g"]
        # balance rows are emitted node-major, timestep-minor
        self._balance_rows = np.array(
            [i for i, m in enumerate(self._core.row_meta) if m["family"] == "balance"]
        )

    def _assemble_core(self) -> _Assembler:
        net = self.network
        r = self.discount_rate
        T = net.horizon
        w = net.timestep_hours * net.year_weight
        asm = _Assembler()
        inflow: dict[tuple[str, int], list[tuple[int, float]]] = {
            (n, t): [] for n in net.node_names for t in range(T)
        }
        self._offset = 0.0

        for g in net.generators:
            ub = g.max_capacity if g.tech.expandable else g.existing_capacity
            inv = annualized_investment(g.tech, r)
            cap = asm.col(
                f"cap:{g.name}",
                annualized_capital_cost(g.tech, r),
                g.existing_capacity,
                ub,
                family="G",
                generator=g.name,
                node=g.node,
                tech=g.tech.name,
            )
            self._offset -= inv * g.existing_capacity
            cost = g.tech.marginal_cost * w
            for t in range(T):
                j = asm.col(f"gen:{g.name}:{t}", cost, 0.0, math.inf, family="g",
                            generator=g.name, node=g.node, tech=g.tech.name, t=t)
                asm.row(f"dispatch:{g.name}:{t}", [(j, 1.0), (cap, -g.capacity_factor[t])], "L", 0.0,
                        family="dispatch", generator=g.name, node=g.node, t=t)
                inflow[(g.node, t)].append((j, 1.0))

        for ln in net.lines:
            inv = ln.capital_cost / annuity_factor(r, ln.lifetime_years)
            cap = asm.col(f"linecap:{ln.name}", inv, ln.existing_capacity, ln.max_capacity,
                          family="F", line=ln.name)
            self._offset -= inv * ln.existing_capacity
            for t in range(T):
                f = asm.col(f"flow:{ln.name}:{t}", 0.0, -math.inf, math.inf, family="f", line=ln.name, t=t)
                asm.row(f"flow_fwd:{ln.name}:{t}", [(f, 1.0), (cap, -1.0)], "L", 0.0,
                        family="flow_fwd", line=ln.name, t=t)
                asm.row(f"flow_rev:{ln.name}:{t}", [(f, -1.0), (cap, -1.0)], "L", 0.0,
                        family="flow_rev", line=ln.name, t=t)
                inflow[(ln.from_node, t)].append((f, -1.0))
                inflow[(ln.to_node, t)].append((f, 1.0))

        if net.storage_dynamics:
            dt = net.timestep_hours
            for s in net.storages:
                caps = {}
                for key, tech, lo, hi in (
                    ("charge", s.charge_tech, s.existing_power, s.max_power),
                    ("discharge", s.discharge_tech, s.existing_power, s.max_power),
                    ("energy", s.store_tech, s.existing_energy, s.max_energy),
                ):
                    caps[key] = asm.col(f"storcap_{key}:{s.name}", annualized_capital_cost(tech, r),
                                        lo, hi, family="S", storage=s.name, node=s.node, kind=key)
                    self._offset -= annualized_investment(tech, r) * lo
                ch, dis, soc = [], [], []
                for t in range(T):
                    ch.append(asm.col(f"charge:{s.name}:{t}", s.charge_tech.marginal_cost * w, 0.0,
                                      math.inf, family="charge", storage=s.name, node=s.node, t=t))
                    dis.append(asm.col(f"discharge:{s.name}:{t}", s.discharge_tech.marginal_cost * w, 0.0,
                                       math.inf, family="discharge", storage=s.name, node=s.node, t=t))
                    soc.append(asm.col(f"soc:{s.name}:{t}", 0.0, 0.0, math.inf,
                                       family="soc", storage=s.name, node=s.node, t=t))
                    inflow[(s.node, t)].append((dis[t], 1.0))
                    inflow[(s.node, t)].append((ch[t], -1.0))
                eta_c = s.charge_tech.efficiency
                eta_d = s.discharge_tech.efficiency
                for t in range(T):
                    meta = dict(storage=s.name, node=s.node, t=t)
                    asm.row(f"charge_lim:{s.name}:{t}", [(ch[t], 1.0), (caps["charge"], -1.0)], "L", 0.0,
                            family="charge_lim", **meta)
                    asm.row(f"discharge_lim:{s.name}:{t}", [(dis[t], 1.0), (caps["discharge"], -1.0)],
                            "L", 0.0, family="discharge_lim", **meta)
                    asm.row(f"soc_lim:{s.name}:{t}", [(soc[t], 1.0), (caps["energy"], -1.0)], "L", 0.0,
                            family="soc_lim", **meta)
                    prev = soc[t - 1]
                    terms = [(soc[t], 1.0), (ch[t], -eta_c * dt), (dis[t], dt / eta_d)]
                    if prev != soc[t]:
                        terms.append((prev, -1.0))
                    asm.row(f"soc:{s.name}:{t}", terms, "E", 0.0, family="soc", **meta)

        for n in net.nodes:
            for t in range(T):
                asm.row(f"balance:{n.name}:{t}", inflow[(n.name, t)], "E", n.demand[t] / net.timestep_hours,
                        family="balance", node=n.name, t=t)
        return asm

    def _emission_columns(self) -> dict[str, list[tuple[int, float]]]:
        coefs = emissions_row_coefficients(self.network)
        index = {name: j for j, name in enumerate(self._core.cols)}
        by_node: dict[str, list[tuple[int, float]]] = {n: [] for n in self.network.node_names}
        for name, coef in coefs.items():
            j = index[name]
            by_node[self._core.col_meta[j]["node"]].append((j, coef))
        return by_node

    def summarize(self, solution) -> SystemSummary:
        """Per-node emissions, production, prices and CO2 duals of an optimal solve."""
        net = self.network
        problem = solution.problem
        x = solution.x
        names = net.node_names
        idx = {n: i for i, n in enumerate(names)}
        k = len(names)
        T = net.horizon
        w = net.timestep_hours * net.year_weight

        emissions = np.zeros(k)
        for n, terms in self._emission_terms.items():
            for j, coef in terms:
                emissions[idx[n]] += coef * x[j]
        production = np.zeros(k)
        for j in self._gen_cols:
            production[idx[problem.col_meta[j]["node"]]] += x[j] * w

        lam = solution.duals[self._balance_rows].reshape(k, T) / w
        demand = np.array([n.demand for n in net.nodes])
        mean_price = lam.mean(axis=1)
        tot = demand.sum(axis=1)
        weighted = np.where(tot > 0, (lam * demand).sum(axis=1) / np.where(tot > 0, tot, 1.0), mean_price)

        abatement = np.zeros(k)
        mode = "none"
        if "co2:global" in problem._row_index:
            mode = "global"
            abatement[:] = solution.dual("co2:global")
        elif f"co2:national:{names[0]}" in problem._row_index:
            mode = "national"
            for n in names:
                abatement[idx[n]] = solution.dual(f"co2:national:{n}")
        return SystemSummary(
            nodes=tuple(names),
            total_cost=float(solution.objective),
            emissions=emissions,
            production=production,
            mean_price=mean_price,
            mean_price_weighted=weighted,
            abatement_cost=abatement,
            policy_mode=mode,
        )

    def build(self, policy: CO2Policy) -> tuple[LPProblem, BuildReport]:
        core = self._core
        rows = list(core.rows)
        row_meta = list(core.row_meta)
        sense = list(core.sense)
        rhs = list(core.rhs)
        ri, ci, vals = list(core.ri), list(core.ci), list(core.vals)

        def add(name: str, terms: list[tuple[int, float]], bound: float, **meta: Any) -> None:
            i = len(rows)
            rows.append(name)
            row_meta.append(meta)
            sense.append("L")
            rhs.append(bound)
            for j, v in terms:
                ri.append(i)
                ci.append(j)
                vals.append(v)

        if policy.mode == "global":
            terms = [tv for n in self.network.node_names for tv in self._emission_terms[n]]
            add("co2:global", terms, float(policy.cap), family="co2_global")
        elif policy.mode == "national":
            unknown = set(policy.targets) - set(self.network.node_names)
            if unknown:
                raise ValueError(f"policy targets reference unknown nodes: {sorted(unknown)}")
            missing = set(self.network.node_names) - set(policy.targets)
            if missing:
                raise ValueError(f"policy lacks targets for nodes: {sorted(missing)}")
            for n in self.network.node_names:
                add(f"co2:national:{n}", self._emission_terms[n], float(policy.targets[n]),
                    family="co2_national", node=n)

        A = sp.csr_matrix((vals, (ri, ci)), shape=(len(rows), len(core.cols)))
        problem = LPProblem(
            c=np.array(core.c),
            A=A,
            sense=np.array(sense, dtype="<U1"),
            rhs=np.array(rhs),
            lb=np.array(core.lb),
            ub=np.array(core.ub),
            col_names=tuple(core.cols),
            row_names=tuple(rows),
            col_meta=tuple(core.col_meta),
            row_meta=tuple(row_meta),
            offset=self._offset,
        )
        report = BuildReport(
            variables=dict(Counter(m["family"] for m in core.col_meta)),
            constraints=dict(Counter(m["family"] for m in row_meta)),
            horizon=self.network.horizon,
            policy_mode=policy.mode,
        )
        return problem, report


def build(
    network: NetworkInstance,
    policy: CO2Policy,
    discount_rate: float = DEFAULT_DISCOUNT_RATE,
) -> tuple[LPProblem, BuildReport]:
    """Build the capacity-expansion/dispatch LP for ``network`` under ``policy``."""
    return ProblemFactory(network, discount_rate).build(policy)


_LP_NAME_BAD = re.compile(r"[^A-Za-z0-9_.#\[\]]")


def _lp_name(name: str) -> str:
    out = _LP_NAME_BAD.sub("_", name.replace(":", "#"))
    return out if not out[0].isdigit() and out[0] != "." else "_" + out


def _fmt(v: float) -> str:
    return repr(float(v))


def write_lp(problem: LPProblem, path: str | Path) -> None:
    """Export ``problem`` in CPLEX LP text format for third-party solvers.

    The constant objective offset is written as a comment only.
    """
    cols = [_lp_name(n) for n in problem.col_names]
    rows = [_lp_name(n) for n in problem.row_names]
    out = [f"\\ objective offset {_fmt(problem.offset)}", "Minimize"]

    def expr(pairs) -> str:
        parts = []
        for j, v in pairs:
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {_fmt(abs(v))} {cols[j]}")
        return " ".join(parts) if parts else "0 " + cols[0]

    out.append(" obj: " + expr((j, v) for j, v in enumerate(problem.c) if v != 0.0))
    out.append("Subject To")
    A = problem.A.tocsr()
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        pairs = list(zip(A.indices[lo:hi], A.data[lo:hi]))
        op = "=" if problem.sense[i] == "E" else "<="
        out.append(f" {rows[i]}: {expr(pairs)} {op} {_fmt(problem.rhs[i])}")
    out.append("Bounds")
    for j, name in enumerate(cols):
        lo, hi = problem.lb[j], problem.ub[j]
        if lo == -math.inf and hi == math.inf:
            out.append(f" {name} free")
        elif lo == hi:
            out.append(f" {name} = {_fmt(lo)}")
        else:
            left = "-inf" if lo == -math.inf else _fmt(lo)
            right = "+inf" if hi == math.inf else _fmt(hi)
            out.append(f" {left} <= {name} <= {right}")
    out.append("End")
    Path(path).write_text("\n".join(out) + "\n")
