"""Post-processing of merged sample sets: reductions, utilization, intensities,
correlations, the cost/reduction Pareto front and CSV exports.

Undefined values (zero target, zero production, zero variance) are ``nan``
in arrays and empty cells in CSV files.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .lp_builder import DEFAULT_DISCOUNT_RATE, ProblemFactory
from .lp_solver import solve
from .sampler import (
    BELOW_JOINT_REDUCTION,
    COST_SLACK_EXCEEDED,
    INFEASIBLE,
    SUPER_EXPORTER,
    SampleSet,
    read_store,
)
from .system_model import CO2Policy, NetworkInstance

logger = logging.getLogger(__name__)

SUPER_EXPORTER_INTENSITY = 0.45  # tCO2/MWh, coal-equivalent
SUPER_EXPORTER_FACTOR = 1.5
DEFAULT_FRONT_GRID = tuple(round(0.55 + 0.05 * k, 2) for k in range(9))


class AnalysisError(ValueError):
    pass


def joint_reduction(emissions: Sequence[float], baseline_1990: float) -> float:
    if not baseline_1990 > 0:
        raise AnalysisError("baseline emissions must be positive")
    return 1.0 - math.fsum(emissions) / baseline_1990


def target_utilization(targets: Sequence[float], emissions: Sequence[float]) -> np.ndarray:
    """Realized over assigned emissions per node; nan where the target is 0."""
    t = np.asarray(targets, dtype=float)
    e = np.asarray(emissions, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, e / np.where(t > 0, t, 1.0), np.nan)


def emission_intensity(emissions: Sequence[float], production: Sequence[float]) -> np.ndarray:
    """tCO2 per MWh produced (not consumed); nan for nodes that produce nothing."""
    e = np.asarray(emissions, dtype=float)
    p = np.asarray(production, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, e / np.where(p > 0, p, 1.0), np.nan)


def abatement_costs(record: dict) -> np.ndarray:
    return np.asarray(record["abatement_cost"], dtype=float)


def mean_prices(record: dict, weighted: bool = False) -> np.ndarray:
    return np.asarray(record["mean_price_weighted" if weighted else "mean_price"], dtype=float)


def relative_cost_increase(cost: float, optimal_cost: float) -> float:
    return cost / optimal_cost - 1.0


@dataclass(frozen=True)
class Correlation:
    nodes: list[str]
    r: np.ndarray  # nan where undefined

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.r)

    def long_form(self, threshold: float | None = None) -> list[tuple[str, str, float]]:
        """``(node_a, node_b, r)`` triples; undefined or sub-threshold entries get nan."""
        out = []
        for i, a in enumerate(self.nodes):
            for j, b in enumerate(self.nodes):
                v = float(self.r[i, j])
                if threshold is not None and i != j and abs(v) < threshold:
                    v = math.nan
                out.append((a, b, v))
        return out


def correlation_matrix(samples: np.ndarray, nodes: Sequence[str] | None = None) -> Correlation:
    """Pearson correlation between columns of ``samples`` (one row per sample)."""
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2:
        raise AnalysisError("need at least 2 samples")
    k = s.shape[1]
    centered = s - s.mean(axis=0)
    ss = np.sqrt((centered**2).sum(axis=0))
    scale = np.maximum(np.abs(s).max(axis=0), 1.0)
    const = ss <= 1e-12 * scale * math.sqrt(s.shape[0])
    r = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(i, k):
            if const[i] or const[j]:
                continue
            v = float(centered[:, i] @ centered[:, j] / (ss[i] * ss[j]))
            v = min(1.0, max(-1.0, v))
            r[i, j] = r[j, i] = 1.0 if i == j else v
    return Correlation(list(nodes) if nodes is not None else [str(i) for i in range(k)], r)


def cost_quantiles(values: Sequence[float], qs: Sequence[float] = (0.25, 0.5, 0.75)) -> dict[float, float]:
    """Quantiles by linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise AnalysisError("no samples")
    return {float(q): float(np.quantile(v, q, method="linear")) for q in qs}


@dataclass(frozen=True)
class FrontPoint:
    reduction: float
    status: str
    cost: float = math.nan
    realized_reduction: float = math.nan
    co2_price: float = math.nan  # currency/tCO2, dual of the joint cap


def pareto_front(
    network: NetworkInstance,
    reduction_grid: Sequence[float] = DEFAULT_FRONT_GRID,
    solver: Callable = solve,
    discount_rate: float = DEFAULT_DISCOUNT_RATE,
    factory: ProblemFactory | None = None,
) -> list[FrontPoint]:
    """Least cost at each joint reduction level, from Global-policy solves.

    Reduction 0 (or below) means no cap. The first infeasible grid point is
    returned flagged and ends the sweep.
    """
    grid = [float(r) for r in reduction_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise AnalysisError("reduction grid must be strictly increasing")
    factory = factory or ProblemFactory(network, discount_rate)
    baseline = network.baseline_1990
    points: list[FrontPoint] = []
    for r in grid:
        policy = CO2Policy.unconstrained() if r <= 0 else CO2Policy.global_cap((1.0 - r) * baseline)
        sol = solver(factory.build(policy)[0])
        if not sol.optimal:
            points.append(FrontPoint(r, sol.status.value))
            logger.warning("front truncated at reduction %.4f (%s)", r, sol.status.value)
            break
        s = factory.summarize(sol)
        points.append(FrontPoint(r, "optimal", s.total_cost, 1.0 - s.total_emissions / baseline,
                                 float(s.abatement_cost[0]) if s.policy_mode == "global" else 0.0))
    costs = [p.cost for p in points if p.status == "optimal"]
    for a, b in zip(costs, costs[1:]):
        assert b >= a * (1.0 - 1e-9), "Pareto front is not monotone in the reduction"
    return points


def front_lower_bound(front: Sequence[FrontPoint], reduction: float, baseline_1990: float) -> float:
    """Lower bound on the least cost at ``reduction`` from the front's supporting lines.

    Least cost is convex in the cap, so every solved point with CO2 price
    ``mu`` gives ``cost(r) >= cost_i + mu * baseline * (r - r_i)``.
    """
    best = -math.inf
    for p in front:
        if p.status != "optimal":
            continue
        best = max(best, p.cost + p.co2_price * baseline_1990 * (reduction - p.reduction))
    return best


@dataclass(frozen=True)
class Violation:
    chain_id: int
    iteration: int
    criterion: str
    node: str | None
    detail: str


def check_record(record: dict, header: dict, network: NetworkInstance, rtol: float | None = None) -> list[Violation]:
    """Re-check an accepted record against the four acceptance criteria.

    Limits are recomputed from the network and header so this does not share
    code with the sampler's own evaluation.
    """
    cfg = header["config"]
    base = header["baseline"]
    rtol = cfg["criteria_rtol"] if rtol is None else rtol
    cid, it = record["chain_id"], record["iteration"]
    out: list[Violation] = []

    def bad(criterion: str, detail: str, node: str | None = None) -> None:
        out.append(Violation(cid, it, criterion, node, detail))

    if record["status"] != "optimal":
        bad("c", f"status {record['status']}")
        return out
    emissions = record["realized_emissions"]
    b1990 = math.fsum(n.historical_emissions_1990 for n in network.nodes)
    realized = 1.0 - math.fsum(emissions) / b1990
    need = cfg["min_joint_reduction"]
    # realized >= need  <=>  sum(e) <= (1 - need) * b1990, compared with the sampler's tolerance
    if math.fsum(emissions) > (1.0 - need) * b1990 * (1.0 + rtol):
        bad("a", f"realized reduction {realized:.9f} < {need}")
    limit_cost = (1.0 + cfg["cost_slack"]) * base["optimal_cost"]
    if record["total_cost"] > limit_cost * (1.0 + rtol):
        bad("b", f"cost {record['total_cost']:.6f} > {limit_cost:.6f}")
    for node, e in zip(header["nodes"], emissions):
        n = network.node(node)
        demand_mwh = math.fsum(n.demand) * network.year_weight
        limit = SUPER_EXPORTER_INTENSITY * SUPER_EXPORTER_FACTOR * demand_mwh
        if e > limit * (1.0 + rtol):
            bad("d", f"emissions {e:.3f} > {limit:.3f}", node)
    cap = (1.0 - need) * b1990
    for node, x, t, e in zip(header["nodes"], record["x"], record["targets"], emissions):
        if not math.isclose(t, x * cap, rel_tol=1e-12, abs_tol=1e-6):
            bad("targets", f"target {t} != x*cap {x * cap}", node)
        if e > t * (1.0 + 1e-6) + 1e-3:
            bad("national", f"emissions {e} exceed target {t}", node)
    return out


def check_stores(stores: Sequence[str | Path], network: NetworkInstance) -> tuple[int, list[Violation]]:
    """Re-check every accepted record (burn-in included) of the given chain stores.

    Returns the number of records checked and the violations found.
    """
    checked = 0
    violations: list[Violation] = []
    for p in stores:
        header, records = read_store(p)
        for rec in records:
            if rec["accepted"]:
                checked += 1
                violations += check_record(rec, header, network)
    return checked, violations


@dataclass
class AnalysisBundle:
    """Per-state quantities of a merged sample set, arrays shaped (samples, nodes)."""

    nodes: list[str]
    chain_id: np.ndarray
    iteration: np.ndarray
    joint_reduction: np.ndarray
    relative_cost: np.ndarray
    targets: np.ndarray
    emissions: np.ndarray
    intensity: np.ndarray
    utilization: np.ndarray
    abatement_cost: np.ndarray
    mean_price: np.ndarray
    mean_price_weighted: np.ndarray
    n_accepted: int

    @property
    def n_samples(self) -> int:
        return len(self.chain_id)

    def correlation(self) -> Correlation:
        return correlation_matrix(self.emissions, self.nodes)

    def cost_quantiles(self) -> dict[float, float]:
        return cost_quantiles(self.relative_cost)


def build_bundle(sample_set: SampleSet) -> AnalysisBundle:
    """Quantities for every post-burn-in chain state (rejections repeat the state)."""
    base = sample_set.baseline
    states = sample_set.states
    k = len(sample_set.nodes)

    def arr(attr: str) -> np.ndarray:
        return np.array([getattr(s, attr) for s in states], dtype=float).reshape(len(states), k)

    emissions = arr("emissions")
    targets = arr("targets")
    production = arr("production")
    return AnalysisBundle(
        nodes=list(sample_set.nodes),
        chain_id=np.array([s.chain_id for s in states], dtype=int),
        iteration=np.array([s.iteration for s in states], dtype=int),
        joint_reduction=np.array([joint_reduction(e, base["baseline_1990"]) for e in emissions]),
        relative_cost=np.array([relative_cost_increase(s.total_cost, base["optimal_cost"]) for s in states]),
        targets=targets,
        emissions=emissions,
        intensity=emission_intensity(emissions, production) if len(states) else np.zeros((0, k)),
        utilization=target_utilization(targets, emissions) if len(states) else np.zeros((0, k)),
        abatement_cost=arr("abatement_cost"),
        mean_price=arr("mean_price"),
        mean_price_weighted=arr("mean_price_weighted"),
        n_accepted=len(sample_set.accepted_records),
    )


def rejection_counts(records: Sequence[dict]) -> dict[str, int]:
    out = {k: 0 for k in (INFEASIBLE, BELOW_JOINT_REDUCTION, COST_SLACK_EXCEEDED, SUPER_EXPORTER)}
    for r in records:
        if not r["accepted"]:
            out[r["rejection_reason"]] += 1
    return out


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def _write(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def histogram2d(bundle: AnalysisBundle, bins: tuple[int, int] = (20, 20)):
    """Counts of (joint reduction, relative cost increase) over the samples."""
    if bundle.n_samples == 0:
        return np.zeros(bins, dtype=int), np.linspace(0, 1, bins[0] + 1), np.linspace(0, 1, bins[1] + 1)
    h, xe, ye = np.histogram2d(bundle.joint_reduction, bundle.relative_cost, bins=bins)
    return h.astype(int), xe, ye


FRONT_HEADER = ["reduction", "status", "cost", "realized_reduction", "co2_price"]


def write_front_csv(front: Sequence[FrontPoint], path: str | Path) -> Path:
    path = Path(path)
    _write(path, FRONT_HEADER, ([f.reduction, f.status, f.cost, f.realized_reduction, f.co2_price] for f in front))
    return path


EXPORT_FILES = ("front.csv", "intensity.csv", "utilization.csv", "correlation.csv",
                "abatement.csv", "prices.csv", "histogram2d.csv")


def write_exports(
    bundle: AnalysisBundle,
    out_dir: str | Path,
    front: Sequence[FrontPoint] = (),
    bins: tuple[int, int] = (20, 20),
    correlation_threshold: float | None = 0.2,
) -> list[Path]:
    """Write the CSV bundle. With no accepted samples only the histogram is written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    h, xe, ye = histogram2d(bundle, bins)
    p = out / "histogram2d.csv"
    _write(p, ["reduction_lo", "reduction_hi", "cost_increase_lo", "cost_increase_hi", "count"],
           ([xe[i], xe[i + 1], ye[j], ye[j + 1], int(h[i, j])] for i in range(h.shape[0]) for j in range(h.shape[1])))
    written.append(p)
    if bundle.n_accepted == 0:
        logger.warning("no accepted samples after burn-in; only the histogram was written")
        return written

    def per_node(arrays):
        for s in range(bundle.n_samples):
            for i, node in enumerate(bundle.nodes):
                yield [int(bundle.chain_id[s]), int(bundle.iteration[s]), node] + [a[s, i] for a in arrays]

    files = {
        "front.csv": (FRONT_HEADER,
                      ([f.reduction, f.status, f.cost, f.realized_reduction, f.co2_price] for f in front)),
        "intensity.csv": (["chain_id", "iteration", "node", "emissions", "intensity"],
                          per_node([bundle.emissions, bundle.intensity])),
        "utilization.csv": (["chain_id", "iteration", "node", "target", "emissions", "utilization"],
                            per_node([bundle.targets, bundle.emissions, bundle.utilization])),
        "abatement.csv": (["chain_id", "iteration", "node", "abatement_cost"], per_node([bundle.abatement_cost])),
        "prices.csv": (["chain_id", "iteration", "node", "mean_price", "mean_price_weighted"],
                       per_node([bundle.mean_price, bundle.mean_price_weighted])),
    }
    if bundle.n_samples >= 2:
        corr = bundle.correlation()
        shown = corr.long_form(correlation_threshold)
        files["correlation.csv"] = (["node_a", "node_b", "r", "r_shown"],
                                    ([a, b, float(corr.r[i // len(corr.nodes), i % len(corr.nodes)]), v]
                                     for i, (a, b, v) in enumerate(shown)))
    else:
        files["correlation.csv"] = (["node_a", "node_b", "r", "r_shown"], [])
    for name in EXPORT_FILES:
        if name in files:
            p = out / name
            _write(p, *files[name])
            written.append(p)
    return written
