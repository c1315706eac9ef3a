"""Adaptive Metropolis-Hastings exploration of national CO2 target configurations.

A configuration is a vector ``x`` of per-node fractions of the joint budget
``CAP = (1 - min_joint_reduction) * baseline_1990``; node ``i`` may emit at
most ``x_i * CAP``. Proposals are uniform boxes of width ``sigma`` around the
current state, clipped to [0, 1]. A proposal is accepted when the optimized
system satisfies four criteria, checked in this order:

(c) the LP has an optimal solution,
(a) realized joint reduction >= ``min_joint_reduction``,
(b) total cost <= (1 + ``cost_slack``) * efficiency-optimal cost,
(d) every node emits at most 0.45 * 1.5 tCO2 per MWh of its annual demand.

On rejection the chain repeats its previous state. ``sigma`` moves by
``+-epsilon`` after each batch depending on the batch acceptance rate.

Each chain writes one JSON-lines file: a header line followed by one line per
iteration. Proposals for iteration ``t`` use a generator seeded with
``(seed, chain_id, t)``, so a chain can be resumed from its last line and
reproduces the uninterrupted run exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import __version__
from .lp_builder import DEFAULT_DISCOUNT_RATE, ProblemFactory, SystemSummary
from .lp_solver import SolveStatus, solve
from .system_model import CO2Policy, NetworkInstance, coal_super_exporter_limit

logger = logging.getLogger(__name__)

STORE_FORMAT = 1


class ConfigError(ValueError):
    pass


class CheckpointError(RuntimeError):
    """A sample store is corrupt or does not match the requested run."""


class SamplerAbort(RuntimeError):
    """Too many consecutive solver failures; the store holds the last checkpoint."""


class MergeError(ValueError):
    pass


BELOW_JOINT_REDUCTION = "BelowJointReduction"
COST_SLACK_EXCEEDED = "CostSlackExceeded"
INFEASIBLE = "Infeasible"
SUPER_EXPORTER = "SuperExporter"


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 500
    n_chains: int = 1
    burn_in: int = 100
    sigma0: float = 0.2
    epsilon: float = 0.05
    target_acceptance: float = 0.80
    batch_size: int = 50
    cost_slack: float = 0.18
    min_joint_reduction: float = 0.55
    rng_seed: int = 0
    discount_rate: float = DEFAULT_DISCOUNT_RATE
    criteria_rtol: float = 1e-7
    retry_budget: int = 5
    require_unit_budget: bool = True

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.n_chains < 1:
            raise ConfigError("n_chains must be >= 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ConfigError("target_acceptance must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if not 0.0 < self.sigma0 <= 1.0:
            raise ConfigError("sigma0 must lie in (0, 1]")
        if not self.cost_slack >= 0:
            raise ConfigError("cost_slack must be >= 0")
        if not 0.0 < self.min_joint_reduction < 1.0:
            raise ConfigError("min_joint_reduction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def sigma_min(self) -> float:
        return self.epsilon / 10.0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def chain_hash(self) -> str:
        """Hash of every setting that shapes a single chain (chain count excluded)."""
        d = self.as_dict()
        d.pop("n_chains")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class Baseline:
    optimal_cost: float
    baseline_1990: float
    cap: float
    efficiency_emissions: tuple[float, ...]
    x0: tuple[float, ...]
    co2_price: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def compute_baseline(
    network: NetworkInstance,
    config: SamplerConfig,
    factory: ProblemFactory | None = None,
    solver: Callable = solve,
) -> Baseline:
    """Efficiency optimum at the joint cap; its realized shares are the chain start."""
    factory = factory or ProblemFactory(network, config.discount_rate)
    baseline = network.baseline_1990
    if baseline <= 0:
        raise ConfigError("network lacks historical 1990 emissions")
    cap = (1.0 - config.min_joint_reduction) * baseline
    sol = solver(factory.build(CO2Policy.global_cap(cap))[0])
    if not sol.optimal:
        raise ConfigError(f"efficiency baseline solve failed: {sol.status.value}")
    summary = factory.summarize(sol)
    total = summary.total_emissions
    k = len(summary.emissions)
    # realized shares; they equal emissions / cap whenever the cap binds
    x0 = tuple(float(e) / total if total > 0 else 1.0 / k for e in summary.emissions)
    return Baseline(
        optimal_cost=summary.total_cost,
        baseline_1990=baseline,
        cap=cap,
        efficiency_emissions=tuple(float(e) for e in summary.emissions),
        x0=x0,
        co2_price=float(summary.abatement_cost[0]),
    )


def propose(x_prev: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw in ``[max(x - sigma/2, 0), min(x + sigma/2, 1)]`` per component."""
    x_prev = np.asarray(x_prev, dtype=float)
    lo = np.maximum(x_prev - sigma / 2.0, 0.0)
    hi = np.minimum(x_prev + sigma / 2.0, 1.0)
    return lo + (hi - lo) * rng.random(x_prev.shape)


def adapt_sigma(sigma: float, batch_acceptance: float, config: SamplerConfig) -> float:
    """Widen after a batch above the target acceptance, narrow below it.

    A step that would leave ``(epsilon / 10, 1]`` is not taken.
    """
    if batch_acceptance > config.target_acceptance:
        new = sigma + config.epsilon
    elif batch_acceptance < config.target_acceptance:
        new = sigma - config.epsilon
    else:
        return sigma
    new = round(new, 12)
    if new <= config.sigma_min or new > 1.0:
        return sigma
    return new


@dataclass
class Evaluation:
    accepted: bool
    reason: str | None
    reason_node: str | None
    status: str
    targets: np.ndarray
    summary: SystemSummary | None = None
    fast_reject: bool = False
    diagnostic: str | None = None


class Evaluator:
    """Applies the acceptance criteria to one proposal. Owns its LP factory."""

    def __init__(
        self,
        network: NetworkInstance,
        baseline: Baseline,
        config: SamplerConfig,
        factory: ProblemFactory | None = None,
        solver: Callable = solve,
    ):
        self.network = network
        self.baseline = baseline
        self.config = config
        self.factory = factory or ProblemFactory(network, config.discount_rate)
        self.solver = solver
        self.limits = np.array([coal_super_exporter_limit(network, n) for n in network.node_names])

    def __call__(self, x: np.ndarray) -> Evaluation:
        cfg = self.config
        names = self.network.node_names
        targets = np.asarray(x, dtype=float) * self.baseline.cap
        if cfg.require_unit_budget and math.fsum(x) < 1.0 - cfg.criteria_rtol:
            return Evaluation(False, BELOW_JOINT_REDUCTION, None, "skipped", targets, fast_reject=True)
        policy = CO2Policy.national(dict(zip(names, targets.tolist())), dict(zip(names, x.tolist())))
        problem, _ = self.factory.build(policy)
        sol = self.solver(problem)
        diagnostic = None
        if sol.status is SolveStatus.NUMERICAL:
            sol = self.solver(problem, backend="highs-ipm")
            diagnostic = "numerical failure, retried with interior point"
            if sol.status is SolveStatus.NUMERICAL:
                return Evaluation(False, INFEASIBLE, None, sol.status.value, targets,
                                  diagnostic="numerical failure")
        if not sol.optimal:
            return Evaluation(False, INFEASIBLE, None, sol.status.value, targets, diagnostic=diagnostic)
        summary = self.factory.summarize(sol)
        ev = Evaluation(True, None, None, sol.status.value, targets, summary, diagnostic=diagnostic)
        rtol = cfg.criteria_rtol
        if summary.total_emissions > self.baseline.cap * (1.0 + rtol):
            ev.accepted, ev.reason = False, BELOW_JOINT_REDUCTION
        elif summary.total_cost > (1.0 + cfg.cost_slack) * self.baseline.optimal_cost * (1.0 + rtol):
            ev.accepted, ev.reason = False, COST_SLACK_EXCEEDED
        else:
            over = np.flatnonzero(summary.emissions > self.limits * (1.0 + rtol))
            if len(over):
                ev.accepted, ev.reason, ev.reason_node = False, SUPER_EXPORTER, names[int(over[0])]
        return ev


def _floats(a) -> list[float] | None:
    return None if a is None else [float(v) for v in a]


def _record(chain_id, iteration, x, state, ev: Evaluation, sigma, sigma_after, burn_in) -> dict:
    s = ev.summary
    return {
        "type": "record",
        "chain_id": chain_id,
        "iteration": iteration,
        "x": _floats(x),
        "state": _floats(state),
        "accepted": ev.accepted,
        "rejection_reason": ev.reason,
        "rejection_node": ev.reason_node,
        "status": ev.status,
        "fast_reject": ev.fast_reject,
        "diagnostic": ev.diagnostic,
        "targets": _floats(ev.targets),
        "total_cost": None if s is None else s.total_cost,
        "realized_emissions": None if s is None else _floats(s.emissions),
        "production": None if s is None else _floats(s.production),
        "abatement_cost": None if s is None else _floats(s.abatement_cost),
        "mean_price": None if s is None else _floats(s.mean_price),
        "mean_price_weighted": None if s is None else _floats(s.mean_price_weighted),
        "sigma_at_draw": sigma,
        "sigma_after": sigma_after,
        "burn_in": burn_in,
    }


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


@dataclass
class ChainState:
    x: np.ndarray
    sigma: float
    iteration: int = 0
    batch: list[bool] = field(default_factory=list)
    consecutive_failures: int = 0

    def rng(self, seed: int, chain_id: int, iteration: int) -> np.random.Generator:
        return np.random.default_rng([seed, chain_id, iteration])


def chain_header(config: SamplerConfig, network: NetworkInstance, baseline: Baseline,
                 chain_id: int, start: dict) -> dict:
    return {
        "type": "header",
        "format": STORE_FORMAT,
        "software_version": __version__,
        "chain_id": chain_id,
        "seed": config.rng_seed,
        "config": config.as_dict(),
        "config_hash": config.chain_hash(),
        "network_hash": network.content_hash(),
        "nodes": network.node_names,
        "baseline": baseline.as_dict(),
        "start": start,
    }


def read_store(path: str | Path, repair: bool = False) -> tuple[dict, list[dict]]:
    """Parse a chain store. A torn final line is dropped (and cut from the file if ``repair``)."""
    path = Path(path)
    raw = path.read_bytes()
    lines = raw.split(b"\n")
    torn = lines[-1] != b""
    body = lines[:-1]
    records: list[dict] = []
    header = None
    good_bytes = 0
    for k, line in enumerate(body):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            if k == len(body) - 1 and not torn:
                torn = True
                break
            raise CheckpointError(f"{path}: corrupt line {k + 1}") from None
        if k == 0:
            if obj.get("type") != "header":
                raise CheckpointError(f"{path}: missing header line")
            header = obj
        else:
            if obj.get("type") != "record":
                raise CheckpointError(f"{path}: unexpected line type on line {k + 1}")
            records.append(obj)
        good_bytes += len(line) + 1
    if header is None:
        raise CheckpointError(f"{path}: empty store")
    for k, rec in enumerate(records, start=1):
        if rec["iteration"] != k:
            raise CheckpointError(f"{path}: iteration sequence broken at line {k + 1}")
    if torn and repair:
        with path.open("r+b") as fh:
            fh.truncate(good_bytes)
    return header, records


def run_chain(
    config: SamplerConfig,
    network: NetworkInstance,
    baseline: Baseline,
    chain_id: int,
    store: str | Path | None = None,
    resume: bool = False,
    evaluator: Evaluator | None = None,
    stop_after: int | None = None,
) -> Iterator[dict]:
    """Run one chain, yielding a record per iteration and appending it to ``store``.

    With ``resume`` an existing store is continued from its last complete line.
    ``stop_after`` ends the run early after that many new iterations (used to
    simulate interruptions).
    """
    evaluator = evaluator or Evaluator(network, baseline, config)
    names = network.node_names
    x0 = np.array(baseline.x0)
    state = ChainState(x=x0.copy(), sigma=config.sigma0)
    fh = None
    if store is not None:
        store = Path(store)
        if resume and store.exists() and store.stat().st_size > 0:
            header, records = read_store(store, repair=True)
            if header["config_hash"] != config.chain_hash() or header["network_hash"] != network.content_hash():
                raise CheckpointError(f"{store}: store was written for a different config or network")
            if header["chain_id"] != chain_id:
                raise CheckpointError(f"{store}: store belongs to chain {header['chain_id']}")
            if records:
                last = records[-1]
                state.x = np.array(last["state"])
                state.sigma = last["sigma_after"]
                state.iteration = last["iteration"]
                done_in_batch = state.iteration % config.batch_size
                if done_in_batch:
                    state.batch = [r["accepted"] for r in records[-done_in_batch:]]
            fh = store.open("a")
        else:
            start_ev = evaluator(x0)
            if not start_ev.accepted:
                raise SamplerAbort(f"start point rejected ({start_ev.reason})")
            start = _record(chain_id, 0, x0, x0, start_ev, config.sigma0, config.sigma0, True)
            store.parent.mkdir(parents=True, exist_ok=True)
            fh = store.open("w")
            fh.write(_dumps(chain_header(config, network, baseline, chain_id, start)) + "\n")
            fh.flush()
    new = 0
    try:
        while state.iteration < config.n_samples:
            if stop_after is not None and new >= stop_after:
                return
            t = state.iteration + 1
            rng = state.rng(config.rng_seed, chain_id, t)
            x_new = propose(state.x, state.sigma, rng)
            ev = evaluator(x_new)
            if ev.diagnostic == "numerical failure":
                state.consecutive_failures += 1
            else:
                state.consecutive_failures = 0
            if ev.accepted:
                state.x = x_new
            state.batch.append(ev.accepted)
            sigma_draw = state.sigma
            if len(state.batch) == config.batch_size:
                state.sigma = adapt_sigma(state.sigma, sum(state.batch) / len(state.batch), config)
                state.batch = []
            rec = _record(chain_id, t, x_new, state.x, ev, sigma_draw, state.sigma, t <= config.burn_in)
            if fh is not None:
                fh.write(_dumps(rec) + "\n")
                fh.flush()
            state.iteration = t
            new += 1
            yield rec
            if state.consecutive_failures > config.retry_budget:
                raise SamplerAbort(f"chain {chain_id}: solver failed {state.consecutive_failures} times in a row")
    finally:
        if fh is not None:
            fh.close()
    logger.debug("chain %d finished with %d nodes", chain_id, len(names))


def chain_store_path(out_dir: str | Path, chain_id: int) -> Path:
    return Path(out_dir) / f"chain_{chain_id:03d}.jsonl"


def run_chain_to_store(args: tuple) -> str:
    """Process-pool entry point: ``(config, network, baseline, chain_id, path, resume)``."""
    config, network, baseline, chain_id, path, resume = args
    for _ in run_chain(config, network, baseline, chain_id, store=path, resume=resume):
        pass
    return str(path)


def run_campaign(
    config: SamplerConfig,
    network: NetworkInstance,
    out_dir: str | Path,
    resume: bool = False,
    workers: int | None = None,
    baseline: Baseline | None = None,
) -> list[Path]:
    """Run ``config.n_chains`` independent chains into ``out_dir``."""
    baseline = baseline or compute_baseline(network, config)
    paths = [chain_store_path(out_dir, c) for c in range(config.n_chains)]
    jobs = [(config, network, baseline, c, p, resume) for c, p in enumerate(paths)]
    workers = workers or min(config.n_chains, os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chain_to_store, jobs))
    else:
        for job in jobs:
            run_chain_to_store(job)
    return paths


@dataclass(frozen=True)
class StateSample:
    """The chain state at one iteration together with the solve that produced it."""

    chain_id: int
    iteration: int
    x: tuple[float, ...]
    targets: tuple[float, ...]
    total_cost: float
    emissions: tuple[float, ...]
    production: tuple[float, ...]
    abatement_cost: tuple[float, ...]
    mean_price: tuple[float, ...]
    mean_price_weighted: tuple[float, ...]
    source_iteration: int


@dataclass
class SampleSet:
    nodes: list[str]
    header: dict
    states: list[StateSample]
    records: list[dict]

    @property
    def baseline(self) -> dict:
        return self.header["baseline"]

    @property
    def accepted_records(self) -> list[dict]:
        return [r for r in self.records if r["accepted"]]


def _state_from(rec: dict, chain_id: int, iteration: int, source: int) -> StateSample:
    return StateSample(
        chain_id=chain_id,
        iteration=iteration,
        x=tuple(rec["x"]),
        targets=tuple(rec["targets"]),
        total_cost=rec["total_cost"],
        emissions=tuple(rec["realized_emissions"]),
        production=tuple(rec["production"]),
        abatement_cost=tuple(rec["abatement_cost"]),
        mean_price=tuple(rec["mean_price"]),
        mean_price_weighted=tuple(rec["mean_price_weighted"]),
        source_iteration=source,
    )


def merge_chains(stores: list[str | Path], drop_burn_in: bool = True) -> SampleSet:
    """Concatenate chain stores, ordered by (chain_id, iteration), burn-in dropped.

    Every post-burn-in iteration contributes the state it left the chain in;
    rejected iterations repeat the previous state.
    """
    if not stores:
        raise MergeError("no stores given")
    loaded = [read_store(p) for p in stores]
    ref = loaded[0][0]
    for header, _ in loaded[1:]:
        if header["config_hash"] != ref["config_hash"] or header["network_hash"] != ref["network_hash"]:
            raise MergeError("stores come from different configs or networks")
    ids = [h["chain_id"] for h, _ in loaded]
    if len(set(ids)) != len(ids):
        raise MergeError("duplicate chain ids")
    states: list[StateSample] = []
    records: list[dict] = []
    for header, recs in sorted(loaded, key=lambda hr: hr[0]["chain_id"]):
        cid = header["chain_id"]
        current = header["start"]
        source = 0
        for rec in recs:
            if rec["accepted"]:
                current, source = rec, rec["iteration"]
            if drop_burn_in and rec["burn_in"]:
                continue
            records.append(rec)
            states.append(_state_from(current, cid, rec["iteration"], source))
    return SampleSet(nodes=list(ref["nodes"]), header=ref, states=states, records=records)
