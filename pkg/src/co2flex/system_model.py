"""Domain types for power networks, technologies and CO2 policies.

Also holds the cost and emission arithmetic shared by the LP builder and the
sampler, and the reader/writer for the TOML system description format.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import tomli
import tomli_w

HOURS_PER_YEAR = 8760.0
COAL_EQUIVALENT_INTENSITY = 0.45  # tCO2 per MWh of demand served by coal
SUPER_EXPORTER_FACTOR = 1.5


class NetworkError(ValueError):
    """Raised when a system description is malformed or inconsistent."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


def _check(cond: bool, message: str, location: str | None = None) -> None:
    if not cond:
        raise NetworkError(message, location)


@dataclass(frozen=True)
class TechnologySpec:
    """Cost and performance data of one technology.

    ``fuel_emission_intensity`` is tCO2 per MWh of *fuel* input; the electric
    side value is obtained with :func:`electric_emission_intensity`.
    ``capital_cost`` is per MW of power (per MWh for storage energy).
    """

    name: str
    capital_cost: float = 0.0
    fom_pct: float = 0.0
    vom: float = 0.0
    lifetime_years: int = 25
    efficiency: float = 1.0
    fuel_emission_intensity: float = 0.0
    expandable: bool = False
    fuel_price: float = 0.0

    def __post_init__(self) -> None:
        loc = f"technologies.{self.name}"
        _check(0.0 < self.efficiency <= 1.0, "efficiency must lie in (0, 1]", loc)
        _check(int(self.lifetime_years) >= 1, "lifetime_years must be >= 1", loc)
        for attr in ("capital_cost", "fom_pct", "vom", "fuel_emission_intensity", "fuel_price"):
            _check(getattr(self, attr) >= 0.0, f"negative quantity '{attr}'", loc)

    @property
    def marginal_cost(self) -> float:
        """Operating cost per MWh electric (VOM plus fuel over efficiency)."""
        return self.vom + self.fuel_price / self.efficiency


@dataclass(frozen=True)
class GeneratorAsset:
    name: str
    node: str
    tech: TechnologySpec
    existing_capacity: float
    max_capacity: float
    capacity_factor: tuple[float, ...]

    @property
    def expandable(self) -> bool:
        return self.tech.expandable and self.max_capacity > self.existing_capacity


@dataclass(frozen=True)
class StorageAsset:
    """Storage unit with separate charge/discharge power and energy capacities.

    Charge and discharge power capacities are independent variables sharing
    the same brownfield/potential bounds.
    """

    name: str
    node: str
    charge_tech: TechnologySpec
    discharge_tech: TechnologySpec
    store_tech: TechnologySpec
    existing_power: float = 0.0
    max_power: float = 0.0
    existing_energy: float = 0.0
    max_energy: float = 0.0


@dataclass(frozen=True)
class TransmissionLine:
    name: str
    from_node: str
    to_node: str
    existing_capacity: float
    max_capacity: float
    capital_cost: float = 0.0
    lifetime_years: int = 40


@dataclass(frozen=True)
class Node:
    name: str
    demand: tuple[float, ...]
    historical_emissions_1990: float = 0.0
    population: float = 0.0
    gdp_per_capita: float = 0.0


@dataclass(frozen=True)
class NetworkInstance:
    """A validated multi-node system description. Immutable after load."""

    name: str
    nodes: tuple[Node, ...]
    technologies: tuple[TechnologySpec, ...]
    generators: tuple[GeneratorAsset, ...]
    storages: tuple[StorageAsset, ...]
    lines: tuple[TransmissionLine, ...]
    timestep_hours: float
    horizon: int
    year_weight: float
    storage_dynamics: bool = True

    @property
    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def annual_demand(self, node: str) -> float:
        """Demand of ``node`` in MWh per year."""
        return math.fsum(self.node(node).demand) * self.year_weight

    @property
    def baseline_1990(self) -> float:
        return math.fsum(n.historical_emissions_1990 for n in self.nodes)

    def incidence(self) -> np.ndarray:
        """Node x line incidence matrix: +1 at the sending end, -1 at the receiving end."""
        idx = {n: i for i, n in enumerate(self.node_names)}
        K = np.zeros((len(self.nodes), len(self.lines)))
        for j, line in enumerate(self.lines):
            K[idx[line.from_node], j] = 1.0
            K[idx[line.to_node], j] = -1.0
        return K

    def content_hash(self) -> str:
        return hashlib.sha256(dump_network(self).encode()).hexdigest()


@dataclass(frozen=True)
class CO2Policy:
    """No CO2 constraint, a single global cap, or one target per node (tCO2/yr)."""

    mode: str = "none"
    cap: float | None = None
    targets: Mapping[str, float] | None = None
    fractions: Mapping[str, float] | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode == "global":
            if self.cap is None or not self.cap >= 0.0:
                raise ValueError("global cap must be >= 0")
        elif self.mode == "national":
            if not self.targets:
                raise ValueError("national policy needs targets")
            if any(not v >= 0.0 for v in self.targets.values()):
                raise ValueError("national targets must be >= 0")
        elif self.mode != "none":
            raise ValueError(f"unknown policy mode {self.mode!r}")

    @classmethod
    def unconstrained(cls) -> CO2Policy:
        return cls("none")

    @classmethod
    def global_cap(cls, cap: float, **meta: Any) -> CO2Policy:
        return cls("global", cap=float(cap), meta=meta)

    @classmethod
    def national(
        cls,
        targets: Mapping[str, float],
        fractions: Mapping[str, float] | None = None,
        **meta: Any,
    ) -> CO2Policy:
        return cls(
            "national",
            targets={k: float(v) for k, v in targets.items()},
            fractions=None if fractions is None else {k: float(v) for k, v in fractions.items()},
            meta=meta,
        )

    @property
    def total(self) -> float:
        if self.mode == "global":
            return float(self.cap)
        if self.mode == "national":
            return math.fsum(self.targets.values())
        return math.inf


# ---------------------------------------------------------------------------
# cost and emission arithmetic


def annuity_factor(discount_rate: float, lifetime: float) -> float:
    """Present value of one currency unit per year over ``lifetime`` years.

    ``(1 - (1 + r)**-n) / r``, with the analytic limit ``n`` at ``r = 0``.
    """
    if discount_rate < 0:
        raise ValueError("discount rate must be non-negative")
    if lifetime < 1:
        raise ValueError("lifetime must be at least one year")
    if discount_rate == 0:
        return float(lifetime)
    # expm1/log1p keep full precision for rates close to zero
    return -math.expm1(-lifetime * math.log1p(discount_rate)) / discount_rate


def annualized_capital_cost(spec: TechnologySpec, discount_rate: float) -> float:
    """Annualized capital plus fixed O&M, currency per MW per year."""
    return (
        spec.capital_cost / annuity_factor(discount_rate, spec.lifetime_years)
        + spec.capital_cost * spec.fom_pct / 100.0
    )


def annualized_investment(spec: TechnologySpec, discount_rate: float) -> float:
    """The annuity part of :func:`annualized_capital_cost` alone (no FOM)."""
    return spec.capital_cost / annuity_factor(discount_rate, spec.lifetime_years)


def electric_emission_intensity(spec: TechnologySpec) -> float:
    """tCO2 per MWh of electricity produced."""
    if spec.efficiency <= 0:
        raise ValueError("efficiency must be positive")
    return spec.fuel_emission_intensity / spec.efficiency


def coal_super_exporter_limit(network: NetworkInstance, node: str) -> float:
    """Upper bound on a node's annual emissions: 150% of its demand served by coal."""
    return network.annual_demand(node) * COAL_EQUIVALENT_INTENSITY * SUPER_EXPORTER_FACTOR


# ---------------------------------------------------------------------------
# system description files

_TECH_FIELDS = (
    "capital_cost",
    "fom_pct",
    "vom",
    "lifetime_years",
    "efficiency",
    "fuel_emission_intensity",
    "expandable",
    "fuel_price",
)


def _read_csv_series(path: Path) -> dict[str, list[float]]:
    if not path.exists():
        raise NetworkError(f"series file not found: {path}", "series.files")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise NetworkError("empty series file", str(path)) from None
        cols: dict[str, list[float]] = {h.strip(): [] for h in header}
        names = [h.strip() for h in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            _check(len(row) == len(names), "wrong number of columns", f"{path}:{lineno}")
            for name, value in zip(names, row):
                try:
                    cols[name].append(float(value))
                except ValueError:
                    raise NetworkError(f"not a number: {value!r}", f"{path}:{lineno}") from None
    return cols


def _resolve_series(
    value: Any, series: Mapping[str, Sequence[float]], horizon: int, location: str
) -> tuple[float, ...]:
    if isinstance(value, bool):
        raise NetworkError("series must be a number, list or series id", location)
    if isinstance(value, (int, float)):
        out = (float(value),) * horizon
    elif isinstance(value, str):
        if value not in series:
            raise NetworkError(f"unknown series '{value}'", location)
        out = tuple(float(v) for v in series[value])
    elif isinstance(value, list):
        out = tuple(float(v) for v in value)
    else:
        raise NetworkError("series must be a number, list or series id", location)
    _check(len(out) == horizon, f"series length {len(out)} != horizon {horizon}", location)
    _check(all(math.isfinite(v) for v in out), "non-finite series value", location)
    return out


def _get(table: Mapping[str, Any], key: str, location: str, default: Any = ...) -> Any:
    if key in table:
        return table[key]
    if default is ...:
        raise NetworkError(f"missing field '{key}'", location)
    return default


def _nonneg(table: Mapping[str, Any], key: str, location: str, default: Any = ...) -> float:
    value = _get(table, key, location, default)
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise NetworkError(f"field '{key}' must be a number", location) from None
    _check(math.isfinite(value) and value >= 0.0, f"negative quantity '{key}'", location)
    return value


def parse_network(doc: Mapping[str, Any], base_dir: Path | None = None) -> NetworkInstance:
    """Build a validated :class:`NetworkInstance` from a parsed TOML document."""
    meta = _get(doc, "network", "network")
    timestep_hours = _nonneg(meta, "timestep_hours", "network")
    _check(timestep_hours > 0, "timestep_hours must be positive", "network")
    horizon = int(_get(meta, "horizon", "network"))
    _check(horizon >= 1, "horizon must be >= 1", "network")
    year_weight = _nonneg(
        meta, "year_weight", "network", HOURS_PER_YEAR / (horizon * timestep_hours)
    )
    _check(year_weight > 0, "year_weight must be positive", "network")

    series: dict[str, list[float]] = {}
    sec = doc.get("series", {})
    for fname in sec.get("files", []):
        path = Path(fname)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        series.update(_read_csv_series(path))
    for key, values in sec.get("inline", {}).items():
        series[key] = values

    nodes = []
    seen: set[str] = set()
    for i, nd in enumerate(_get(doc, "nodes", "nodes")):
        loc = f"nodes[{i}]"
        name = str(_get(nd, "name", loc))
        _check(name not in seen, f"duplicate node '{name}'", loc)
        seen.add(name)
        demand = _resolve_series(_get(nd, "demand", loc), series, horizon, f"{loc}.demand")
        _check(all(v >= 0 for v in demand), "negative quantity 'demand'", f"{loc}.demand")
        nodes.append(
            Node(
                name=name,
                demand=demand,
                historical_emissions_1990=_nonneg(nd, "historical_emissions_1990", loc, 0.0),
                population=_nonneg(nd, "population", loc, 0.0),
                gdp_per_capita=_nonneg(nd, "gdp_per_capita", loc, 0.0),
            )
        )
    _check(len(nodes) >= 1, "at least one node required", "nodes")

    techs: dict[str, TechnologySpec] = {}
    for name, td in _get(doc, "technologies", "technologies").items():
        loc = f"technologies.{name}"
        unknown = set(td) - set(_TECH_FIELDS)
        _check(not unknown, f"unknown fields {sorted(unknown)}", loc)
        kwargs = {k: td[k] for k in _TECH_FIELDS if k in td}
        try:
            techs[name] = TechnologySpec(name=name, **kwargs)
        except TypeError as exc:
            raise NetworkError(str(exc), loc) from None

    def tech_ref(ref: Any, loc: str) -> TechnologySpec:
        _check(ref in techs, f"unknown technology '{ref}'", loc)
        return techs[ref]

    def node_ref(ref: Any, loc: str) -> str:
        _check(ref in seen, f"unknown node '{ref}'", loc)
        return ref

    names: set[str] = set()

    def asset_name(table: Mapping[str, Any], loc: str) -> str:
        name = str(_get(table, "name", loc))
        _check(name not in names, f"duplicate asset name '{name}'", loc)
        names.add(name)
        return name

    generators = []
    for i, gd in enumerate(doc.get("generators", [])):
        loc = f"generators[{i}]"
        existing = _nonneg(gd, "existing_capacity", loc, 0.0)
        cap_max = _nonneg(gd, "max_capacity", loc, existing)
        _check(existing <= cap_max, "existing_capacity exceeds max_capacity", loc)
        cf = _resolve_series(gd.get("capacity_factor", 1.0), series, horizon, f"{loc}.capacity_factor")
        _check(all(0.0 <= v <= 1.0 for v in cf), "capacity factor outside [0, 1]", f"{loc}.capacity_factor")
        generators.append(
            GeneratorAsset(
                name=asset_name(gd, loc),
                node=node_ref(_get(gd, "node", loc), f"{loc}.node"),
                tech=tech_ref(_get(gd, "tech", loc), f"{loc}.tech"),
                existing_capacity=existing,
                max_capacity=cap_max,
                capacity_factor=cf,
            )
        )

    storages = []
    for i, sd in enumerate(doc.get("storage", [])):
        loc = f"storage[{i}]"
        ep = _nonneg(sd, "existing_power", loc, 0.0)
        mp = _nonneg(sd, "max_power", loc, ep)
        ee = _nonneg(sd, "existing_energy", loc, 0.0)
        me = _nonneg(sd, "max_energy", loc, ee)
        _check(ep <= mp, "existing_power exceeds max_power", loc)
        _check(ee <= me, "existing_energy exceeds max_energy", loc)
        storages.append(
            StorageAsset(
                name=asset_name(sd, loc),
                node=node_ref(_get(sd, "node", loc), f"{loc}.node"),
                charge_tech=tech_ref(_get(sd, "charge_tech", loc), f"{loc}.charge_tech"),
                discharge_tech=tech_ref(_get(sd, "discharge_tech", loc), f"{loc}.discharge_tech"),
                store_tech=tech_ref(_get(sd, "store_tech", loc), f"{loc}.store_tech"),
                existing_power=ep,
                max_power=mp,
                existing_energy=ee,
                max_energy=me,
            )
        )

    lines = []
    for i, ld in enumerate(doc.get("lines", [])):
        loc = f"lines[{i}]"
        a = node_ref(_get(ld, "from_node", loc), f"{loc}.from_node")
        b = node_ref(_get(ld, "to_node", loc), f"{loc}.to_node")
        _check(a != b, "from_node equals to_node", loc)
        existing = _nonneg(ld, "existing_capacity", loc, 0.0)
        cap_max = _nonneg(ld, "max_capacity", loc, existing)
        _check(existing <= cap_max, "existing_capacity exceeds max_capacity", loc)
        lifetime = int(_get(ld, "lifetime_years", loc, 40))
        _check(lifetime >= 1, "lifetime_years must be >= 1", loc)
        lines.append(
            TransmissionLine(
                name=asset_name(ld, loc),
                from_node=a,
                to_node=b,
                existing_capacity=existing,
                max_capacity=cap_max,
                capital_cost=_nonneg(ld, "capital_cost", loc, 0.0),
                lifetime_years=lifetime,
            )
        )

    return NetworkInstance(
        name=str(meta.get("name", "network")),
        nodes=tuple(nodes),
        technologies=tuple(techs.values()),
        generators=tuple(generators),
        storages=tuple(storages),
        lines=tuple(lines),
        timestep_hours=timestep_hours,
        horizon=horizon,
        year_weight=year_weight,
        storage_dynamics=bool(meta.get("storage_dynamics", True)),
    )


def load_network(path: str | Path) -> NetworkInstance:
    """Read and validate a TOML system description.

    Bundled systems can be addressed by name (e.g. ``"testsys5"``).
    """
    path = Path(path)
    if not path.exists() and path.suffix == "" and (_DATA / f"{path}.toml").exists():
        path = _DATA / f"{path}.toml"
    try:
        with path.open("rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError:
        raise NetworkError(f"file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise NetworkError(f"parse error: {exc}", str(path)) from None
    return parse_network(doc, base_dir=path.parent)


def _compact(values: tuple[float, ...]) -> float | list[float]:
    if all(v == values[0] for v in values):
        return values[0]
    return list(values)


def network_to_dict(network: NetworkInstance) -> dict[str, Any]:
    """Self-contained document form of ``network`` with all series inline."""
    inline: dict[str, Any] = {}

    def series_ref(key: str, values: tuple[float, ...]) -> Any:
        compact = _compact(values)
        if isinstance(compact, float):
            return compact
        inline[key] = compact
        return key

    doc: dict[str, Any] = {
        "network": {
            "name": network.name,
            "timestep_hours": network.timestep_hours,
            "horizon": network.horizon,
            "year_weight": network.year_weight,
            "storage_dynamics": network.storage_dynamics,
        },
        "technologies": {
            t.name: {k: getattr(t, k) for k in _TECH_FIELDS} for t in network.technologies
        },
        "nodes": [
            {
                "name": n.name,
                "demand": series_ref(f"{n.name}:demand", n.demand),
                "historical_emissions_1990": n.historical_emissions_1990,
                "population": n.population,
                "gdp_per_capita": n.gdp_per_capita,
            }
            for n in network.nodes
        ],
        "generators": [
            {
                "name": g.name,
                "node": g.node,
                "tech": g.tech.name,
                "existing_capacity": g.existing_capacity,
                "max_capacity": g.max_capacity,
                "capacity_factor": series_ref(f"{g.name}:cf", g.capacity_factor),
            }
            for g in network.generators
        ],
        "storage": [
            {
                "name": s.name,
                "node": s.node,
                "charge_tech": s.charge_tech.name,
                "discharge_tech": s.discharge_tech.name,
                "store_tech": s.store_tech.name,
                "existing_power": s.existing_power,
                "max_power": s.max_power,
                "existing_energy": s.existing_energy,
                "max_energy": s.max_energy,
            }
            for s in network.storages
        ],
        "lines": [
            {
                "name": ln.name,
                "from_node": ln.from_node,
                "to_node": ln.to_node,
                "existing_capacity": ln.existing_capacity,
                "max_capacity": ln.max_capacity,
                "capital_cost": ln.capital_cost,
                "lifetime_years": ln.lifetime_years,
            }
            for ln in network.lines
        ],
    }
    if inline:
        doc["series"] = {"inline": inline}
    return doc


def dump_network(network: NetworkInstance) -> str:
    return tomli_w.dumps(network_to_dict(network))


def save_network(network: NetworkInstance, path: str | Path) -> None:
    Path(path).write_text(dump_network(network))


_DATA = Path(__file__).parent / "data"


def bundled_network(name: str = "testsys5") -> NetworkInstance:
    return load_network(_DATA / f"{name}.toml")
