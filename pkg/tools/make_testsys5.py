"""Regenerate the bundled ``testsys5`` system description.

Technology costs, efficiencies, emission factors and brownfield capacities
follow the published 2030 technology tables; demand levels, potentials,
line capacities, fuel prices and all time series are illustrative and
synthetic (fixed seed).

    python tools/make_testsys5.py
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import tomli_w

OUT = Path(__file__).resolve().parents[1] / "src" / "co2flex" / "data"
HORIZON = 168
DT = 3.0
SEED = 20301990

NODES = {
    # annual demand TWh, 1990 power-sector tCO2 (illustrative), population, GDP per capita EUR
    "DE": dict(demand_twh=524.0, hist=350e6, population=83.2e6, gdp_per_capita=40500.0),
    "DK": dict(demand_twh=34.0, hist=26e6, population=5.8e6, gdp_per_capita=53500.0),
    "FR": dict(demand_twh=473.0, hist=45e6, population=67.4e6, gdp_per_capita=34000.0),
    "PL": dict(demand_twh=170.0, hist=140e6, population=38.0e6, gdp_per_capita=13800.0),
    "SE": dict(demand_twh=134.0, hist=10e6, population=10.3e6, gdp_per_capita=45600.0),
}

# existing MW by 2030
BROWNFIELD = {
    "DE": dict(offwind=6396.0, onwind=52447.0, ror=2997.0, solar=45179.0, CCGT=18120.9,
               OCGT=8044.3, coal=28069.4, lignite=20833.5, nuclear=15788.4, oil=3696.4),
    "DK": dict(offwind=1708.1, onwind=4431.2, ror=0.0, solar=991.0, CCGT=100.0,
               OCGT=1427.4, coal=3629.9, lignite=0.0, nuclear=0.0, oil=665.0),
    "FR": dict(offwind=0.0, onwind=14898.1, ror=5780.8, solar=9604.0, CCGT=5611.0,
               OCGT=1066.0, coal=4293.3, lignite=0.0, nuclear=63130.0, oil=7172.1),
    "PL": dict(offwind=0.0, onwind=5762.1, ror=14.4, solar=562.0, CCGT=326.0,
               OCGT=1032.9, coal=21588.5, lignite=9406.0, nuclear=0.0, oil=345.0),
    "SE": dict(offwind=204.0, onwind=7097.0, ror=1955.9, solar=481.0, CCGT=708.0,
               OCGT=0.0, coal=130.0, lignite=0.0, nuclear=9532.0, oil=2135.0),
}

# expansion potentials in MW (illustrative)
POTENTIAL = {
    "DE": dict(onwind=120e3, offwind=40e3, solar=150e3),
    "DK": dict(onwind=15e3, offwind=40e3, solar=15e3),
    "FR": dict(onwind=100e3, offwind=30e3, solar=120e3),
    "PL": dict(onwind=60e3, offwind=15e3, solar=60e3),
    "SE": dict(onwind=60e3, offwind=20e3, solar=20e3),
}
SOLAR_YIELD = {"DE": 0.9, "DK": 0.8, "FR": 1.1, "PL": 0.85, "SE": 0.7}
WIND_YIELD = {"DE": 1.0, "DK": 1.2, "FR": 0.95, "PL": 0.9, "SE": 1.05}


def electric_to_fuel(intensity_electric: float, efficiency: float) -> float:
    return round(intensity_electric * efficiency, 6)


TECHS = {
    # capital EUR/MW (EUR/MWh for energy stores), FOM %/yr, VOM EUR/MWh, lifetime
    "OCGT": dict(capital_cost=435200.0, fom_pct=1.78, vom=4.5, lifetime_years=25, efficiency=0.41,
                 fuel_emission_intensity=electric_to_fuel(0.49, 0.41), expandable=True, fuel_price=21.6),
    "CCGT": dict(efficiency=0.58, fuel_emission_intensity=electric_to_fuel(0.34, 0.58), fuel_price=21.6),
    "coal": dict(efficiency=0.33, fuel_emission_intensity=electric_to_fuel(1.00, 0.33), fuel_price=8.0),
    "lignite": dict(efficiency=0.33, fuel_emission_intensity=electric_to_fuel(1.24, 0.33), fuel_price=2.9),
    "oil": dict(efficiency=0.35, fuel_emission_intensity=electric_to_fuel(0.77, 0.35), fuel_price=50.0),
    "nuclear": dict(efficiency=0.33, fuel_price=2.6),
    "ror": dict(),
    "offwind": dict(capital_cost=1573200.0 + 250000.0, fom_pct=2.29, vom=2.67, lifetime_years=30, expandable=True),
    "onwind": dict(capital_cost=1035600.0, fom_pct=1.22, vom=1.35, lifetime_years=30, expandable=True),
    "solar": dict(capital_cost=376300.0, fom_pct=1.93, lifetime_years=40, expandable=True),
    "electrolysis": dict(capital_cost=550000.0, fom_pct=5.0, lifetime_years=25, efficiency=0.66, expandable=True),
    "fuel_cell": dict(capital_cost=1100000.0, fom_pct=5.0, lifetime_years=10, efficiency=0.50, expandable=True),
    "H2_tank": dict(capital_cost=44000.0, fom_pct=1.11, lifetime_years=30, expandable=True),
    "battery_inverter": dict(capital_cost=160000.0, fom_pct=0.34, lifetime_years=25, efficiency=0.96,
                             expandable=True),
    "battery_discharger": dict(efficiency=0.96, lifetime_years=25, expandable=True),
    "battery_storage": dict(capital_cost=142000.0, lifetime_years=25, expandable=True),
}

LINES = [
    ("DE", "DK", 3500.0),
    ("DE", "FR", 4800.0),
    ("DE", "PL", 3000.0),
    ("DE", "SE", 615.0),
    ("DK", "SE", 2440.0),
    ("PL", "SE", 600.0),
]


def synth_series(rng: np.random.Generator) -> dict[str, np.ndarray]:
    steps_per_day = int(24 / DT)
    days = HORIZON // steps_per_day
    hour = np.arange(HORIZON) % steps_per_day
    day = np.arange(HORIZON) // steps_per_day
    out: dict[str, np.ndarray] = {}

    load_shape = np.array([0.80, 0.74, 0.92, 1.08, 1.10, 1.06, 1.12, 0.96])
    load_shape /= load_shape.mean()
    weekend = np.where(day % 7 >= 5, 0.9, 1.0)
    for n, attrs in NODES.items():
        mean_mw = attrs["demand_twh"] * 1e6 / 8760.0
        profile = load_shape[hour] * weekend * (1 + 0.02 * rng.standard_normal(HORIZON))
        profile /= profile.mean()
        out[f"{n}_load"] = np.round(mean_mw * profile * DT, 1)

    sun = np.array([0.0, 0.0, 0.18, 0.62, 0.66, 0.28, 0.0, 0.0])
    clouds_common = rng.uniform(0.45, 1.0, days)
    weather = np.zeros(HORIZON)
    for t in range(1, HORIZON):
        weather[t] = 0.85 * weather[t - 1] + 0.35 * rng.standard_normal()
    for n in NODES:
        clouds = np.clip(clouds_common[day] + 0.15 * rng.standard_normal(days)[day], 0.2, 1.0)
        out[f"{n}_solar_cf"] = np.round(np.clip(sun[hour] * clouds * SOLAR_YIELD[n], 0, 1), 4)
        local = np.zeros(HORIZON)
        for t in range(1, HORIZON):
            local[t] = 0.8 * local[t - 1] + 0.3 * rng.standard_normal()
        z = 0.7 * weather + 0.5 * local
        on = 0.30 * WIND_YIELD[n] * np.exp(0.55 * z - 0.15)
        off = 0.45 * WIND_YIELD[n] * np.exp(0.45 * z - 0.10)
        out[f"{n}_onwind_cf"] = np.round(np.clip(on, 0.01, 0.95), 4)
        out[f"{n}_offwind_cf"] = np.round(np.clip(off, 0.02, 0.97), 4)
        ror = 0.5 + 0.08 * np.sin(np.arange(HORIZON) / 40.0 + rng.uniform(0, 6)) + 0.02 * rng.standard_normal(HORIZON)
        out[f"{n}_ror_cf"] = np.round(np.clip(ror, 0, 1), 4)
    return out


def main() -> None:
    rng = np.random.default_rng(SEED)
    series = synth_series(rng)
    OUT.mkdir(parents=True, exist_ok=True)
    names = list(series)
    with (OUT / "testsys5_series.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for t in range(HORIZON):
            w.writerow([repr(float(series[k][t])) for k in names])

    generators = []
    for n, caps in BROWNFIELD.items():
        for tech, existing in caps.items():
            pot = POTENTIAL[n].get(tech)
            if tech == "OCGT":
                pot = existing + 20e3
            if existing == 0.0 and pot is None:
                continue
            gen = dict(name=f"{n}_{tech}", node=n, tech=tech, existing_capacity=existing,
                       max_capacity=max(existing, pot) if pot is not None else existing)
            if f"{n}_{tech}_cf" in series:
                gen["capacity_factor"] = f"{n}_{tech}_cf"
            generators.append(gen)

    storage = []
    for n in NODES:
        storage.append(dict(name=f"{n}_battery", node=n, charge_tech="battery_inverter",
                            discharge_tech="battery_discharger", store_tech="battery_storage",
                            max_power=30e3, max_energy=300e3))
        storage.append(dict(name=f"{n}_H2", node=n, charge_tech="electrolysis",
                            discharge_tech="fuel_cell", store_tech="H2_tank",
                            max_power=30e3, max_energy=3e6))

    doc = {
        "network": dict(name="testsys5", timestep_hours=DT, horizon=HORIZON,
                        year_weight=8760.0 / (HORIZON * DT), storage_dynamics=True),
        "series": {"files": ["testsys5_series.csv"]},
        "technologies": TECHS,
        "nodes": [
            dict(name=n, demand=f"{n}_load", historical_emissions_1990=a["hist"],
                 population=a["population"], gdp_per_capita=a["gdp_per_capita"])
            for n, a in NODES.items()
        ],
        "generators": generators,
        "storage": storage,
        "lines": [
            dict(name=f"{a}-{b}", from_node=a, to_node=b, existing_capacity=cap,
                 max_capacity=1.5 * cap, capital_cost=250000.0, lifetime_years=40)
            for a, b, cap in LINES
        ],
    }
    header = (
        "# testsys5: 5-node desk-scale test system, 168 x 3h steps.\n"
        "# Costs/efficiencies/emissions/brownfield from the 2030 technology tables;\n"
        "# demand, potentials, lines, fuel prices and series are illustrative.\n"
        "# Regenerate with tools/make_testsys5.py\n\n"
    )
    (OUT / "testsys5.toml").write_text(header + tomli_w.dumps(doc))


if __name__ == "__main__":
    main()
