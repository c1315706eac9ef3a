"""Shared builders for small hand-checkable systems."""

from __future__ import annotations

import copy

import numpy as np

from co2flex.lp_builder import SystemSummary
from co2flex.sampler import COST_SLACK_EXCEEDED, Baseline, Evaluation

OCGT = dict(capital_cost=435200.0, fom_pct=1.78, vom=4.5, lifetime_years=25, efficiency=0.41,
            fuel_emission_intensity=0.2009, expandable=True)
COAL = dict(capital_cost=0.0, vom=2.0, efficiency=0.33, fuel_emission_intensity=0.33)
WIND = dict(capital_cost=1035600.0, fom_pct=1.22, vom=1.35, lifetime_years=30, expandable=True)


def tiny_doc(**overrides) -> dict:
    """Two nodes, two steps of 1 h, year weight 1: small enough to reason about by hand."""
    doc = {
        "network": {"name": "tiny", "timestep_hours": 1.0, "horizon": 2, "year_weight": 1.0,
                    "storage_dynamics": False},
        "technologies": {"OCGT": dict(OCGT), "coal": dict(COAL), "wind": dict(WIND)},
        "nodes": [
            {"name": "A", "demand": [10.0, 14.0], "historical_emissions_1990": 60.0,
             "population": 3.0, "gdp_per_capita": 20000.0},
            {"name": "B", "demand": [6.0, 4.0], "historical_emissions_1990": 40.0,
             "population": 1.0, "gdp_per_capita": 40000.0},
        ],
        "generators": [
            {"name": "A_coal", "node": "A", "tech": "coal", "existing_capacity": 30.0},
            {"name": "A_wind", "node": "A", "tech": "wind", "max_capacity": 100.0,
             "capacity_factor": [0.2, 0.6]},
            {"name": "B_OCGT", "node": "B", "tech": "OCGT", "existing_capacity": 5.0, "max_capacity": 50.0},
            {"name": "B_wind", "node": "B", "tech": "wind", "max_capacity": 100.0,
             "capacity_factor": [0.7, 0.3]},
        ],
        "lines": [{"name": "A-B", "from_node": "A", "to_node": "B", "existing_capacity": 3.0,
                   "max_capacity": 10.0, "capital_cost": 50000.0}],
    }
    for key, value in overrides.items():
        doc[key] = value
    return copy.deepcopy(doc)


class BoxEvaluator:
    """Accepts configurations inside a box; quantities are smooth functions of x."""

    def __init__(self, names, cap=45.0):
        self.names, self.cap = names, cap

    def __call__(self, x):
        x = np.asarray(x, float)
        t = x * self.cap
        e = 0.9 * t
        k = len(x)
        # 90% utilization everywhere, so every national row is slack (zero abatement cost)
        summary = SystemSummary(tuple(self.names), 100.0 + float(x.sum()), e, np.full(k, 10.0),
                                30.0 + x, 31.0 + x, np.zeros(k), "national")
        ok = bool(np.all(np.abs(x - 0.5) < 0.3))
        return Evaluation(ok, None if ok else COST_SLACK_EXCEEDED, None, "optimal", t, summary)


def box_baseline():
    return Baseline(100.0, 100.0, 45.0, (22.5, 22.5), (0.5, 0.5), 1.0)


# criterion number -> (passed, title, detail); filled by the acceptance suite
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str, str]] = {}
