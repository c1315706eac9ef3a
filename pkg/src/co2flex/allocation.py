"""Burden-sharing schemes that split a joint CO2 budget into national targets."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .lp_builder import DEFAULT_DISCOUNT_RATE, ProblemFactory
from .lp_solver import SolvedSystem, solve
from .system_model import CO2Policy, NetworkInstance

logger = logging.getLogger(__name__)


class Scheme(str, enum.Enum):
    GRANDFATHERING = "grandfathering"
    SOVEREIGNTY = "sovereignty"
    EFFICIENCY = "efficiency"
    EGALITARIANISM = "egalitarianism"
    ABILITY_TO_PAY = "ability_to_pay"


@dataclass(frozen=True)
class AllocationScheme:
    kind: Scheme
    budget: float

    def __post_init__(self) -> None:
        if not self.budget >= 0:
            raise ValueError("budget must be >= 0")
        object.__setattr__(self, "kind", Scheme(self.kind))


class AllocationError(ValueError):
    pass


class NonBracketingError(AllocationError):
    """The realized-emission target is not reachable for any budget."""


def scheme_weights(kind: Scheme, network: NetworkInstance) -> list[float]:
    kind = Scheme(kind)
    if kind is Scheme.GRANDFATHERING:
        w = [n.historical_emissions_1990 for n in network.nodes]
    elif kind is Scheme.SOVEREIGNTY:
        w = [network.annual_demand(n.name) for n in network.nodes]
    elif kind is Scheme.EGALITARIANISM:
        w = [n.population for n in network.nodes]
    elif kind is Scheme.ABILITY_TO_PAY:
        missing = [n.name for n in network.nodes if n.gdp_per_capita <= 0]
        if missing:
            raise AllocationError(f"gdp_per_capita missing for {missing}")
        w = [1.0 / n.gdp_per_capita for n in network.nodes]
    else:
        raise AllocationError("efficiency has no national weights")
    return w


def proportional_split(weights: Sequence[float], budget: float) -> list[float]:
    """Split ``budget`` proportionally to ``weights``; the last element absorbs rounding."""
    if any(w < 0 for w in weights):
        raise AllocationError("weights must be non-negative")
    total = math.fsum(weights)
    if total <= 0:
        raise AllocationError("all-zero weight vector")
    shares = [budget * w / total for w in weights]
    shares[-1] = budget - math.fsum(shares[:-1])
    if shares[-1] < 0:
        # only reachable through rounding when the last weight is zero
        shares[-1] = 0.0
    return shares


def allocate(scheme: AllocationScheme, network: NetworkInstance) -> CO2Policy:
    if scheme.kind is Scheme.EFFICIENCY:
        return CO2Policy.global_cap(scheme.budget, scheme=scheme.kind.value)
    weights = scheme_weights(scheme.kind, network)
    if math.fsum(weights) <= 0:
        raise AllocationError(f"all-zero weight vector for {scheme.kind.value}")
    targets = proportional_split(weights, scheme.budget)
    names = network.node_names
    fractions = {n: (t / scheme.budget if scheme.budget > 0 else 0.0) for n, t in zip(names, targets)}
    return CO2Policy.national(dict(zip(names, targets)), fractions, scheme=scheme.kind.value)


@dataclass
class RescaleResult:
    policy: CO2Policy
    budget: float
    realized_reduction: float
    solution: SolvedSystem
    trace: list[tuple[float, float]] = field(default_factory=list)  # (budget, realized reduction)

    @property
    def iterations(self) -> int:
        return len(self.trace)


def rescale_to_realized(
    scheme: Scheme | AllocationScheme,
    network: NetworkInstance,
    target_reduction: float,
    solver: Callable = solve,
    discount_rate: float = DEFAULT_DISCOUNT_RATE,
    tolerance: float = 0.005,
    max_iter: int = 30,
    factory: ProblemFactory | None = None,
) -> RescaleResult:
    """Find a budget whose realized joint reduction is ``target_reduction`` +- ``tolerance``.

    Bisection on the budget, starting from the nominal budget
    ``(1 - target_reduction) * baseline``. Realized emissions must be
    non-decreasing in the budget; a violation raises ``AllocationError``.
    """
    kind = scheme.kind if isinstance(scheme, AllocationScheme) else Scheme(scheme)
    if not 0.0 < target_reduction < 1.0:
        raise NonBracketingError("target_reduction must lie in (0, 1)")
    baseline = network.baseline_1990
    if baseline <= 0:
        raise AllocationError("baseline 1990 emissions unknown")
    factory = factory or ProblemFactory(network, discount_rate)
    goal = (1.0 - target_reduction) * baseline
    trace: list[tuple[float, float]] = []
    solved: dict[float, tuple[CO2Policy, SolvedSystem, float]] = {}

    def evaluate(budget: float) -> float:
        policy = allocate(AllocationScheme(kind, budget), network)
        sol = solver(factory.build(policy)[0])
        if not sol.optimal:
            raise AllocationError(f"solve failed at budget {budget:.6g}: {sol.status.value}")
        realized = factory.summarize(sol).total_emissions
        reduction = 1.0 - realized / baseline
        trace.append((budget, reduction))
        solved[budget] = (policy, sol, reduction)
        return realized

    def done(budget: float) -> RescaleResult:
        policy, sol, red = solved[budget]
        return RescaleResult(policy, budget, red, sol, trace)

    def close(realized: float) -> bool:
        return abs(realized - goal) / baseline <= tolerance

    lo, hi = 0.0, goal
    r_hi = evaluate(hi)
    if close(r_hi):
        return done(hi)
    if r_hi > goal:
        r_lo = evaluate(lo)
        if r_lo > goal and not close(r_lo):
            raise NonBracketingError("even a zero budget over-shoots the realized target")
        if close(r_lo):
            return done(lo)
    else:
        lo, r_lo = hi, r_hi
        hi = goal
        while True:
            if len(trace) >= max_iter:
                raise NonBracketingError("no budget reaches the realized target")
            hi *= 2.0
            prev = r_hi
            r_hi = evaluate(hi)
            if r_hi < prev - 1e-6 * baseline:
                raise AllocationError("realized emissions decreased with a larger budget")
            if close(r_hi):
                return done(hi)
            if r_hi > goal:
                break
            if r_hi - prev <= 1e-9 * baseline and hi > 16 * baseline:
                raise NonBracketingError("unlimited budget under-shoots the realized target")
            lo, r_lo = hi, r_hi

    while len(trace) < max_iter:
        mid = 0.5 * (lo + hi)
        r_mid = evaluate(mid)
        if not (r_lo - 1e-6 * baseline <= r_mid <= r_hi + 1e-6 * baseline):
            raise AllocationError("realized emissions are not monotone in the budget")
        if close(r_mid):
            return done(mid)
        if r_mid < goal:
            lo, r_lo = mid, r_mid
        else:
            hi, r_hi = mid, r_mid
    raise AllocationError(f"bisection did not converge in {max_iter} iterations")
