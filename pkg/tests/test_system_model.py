import math

import mpmath
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from co2flex.system_model import (
    NetworkError,
    TechnologySpec,
    annualized_capital_cost,
    annuity_factor,
    coal_super_exporter_limit,
    dump_network,
    electric_emission_intensity,
    load_network,
    parse_network,
)

from helpers import tiny_doc


def mp_annuity(r, n):
    mpmath.mp.dps = 50
    r = mpmath.mpf(r)
    return float((1 - (1 + r) ** (-n)) / r)


@pytest.mark.parametrize("n, expected", [(25, 11.6536), (30, 12.4090)])
def test_annuity_factor_examples(n, expected):
    assert annuity_factor(0.07, n) == pytest.approx(mp_annuity("0.07", n), abs=1e-12)
    assert annuity_factor(0.07, n) == pytest.approx(expected, abs=1e-4)


def test_annuity_zero_rate_is_lifetime():
    assert annuity_factor(0.0, 25) == 25


@pytest.mark.parametrize("r, n", [(-0.01, 10), (0.07, 0), (0.07, -3)])
def test_annuity_domain_errors(r, n):
    with pytest.raises(ValueError):
        annuity_factor(r, n)


@given(st.floats(0.001, 0.3), st.floats(0.001, 0.3), st.integers(1, 200))
def test_annuity_decreasing_in_rate(r1, r2, n):
    if abs(r1 - r2) < 1e-6:
        return
    lo, hi = sorted((r1, r2))
    assert annuity_factor(lo, n) > annuity_factor(hi, n)


@given(st.floats(0.0, 0.3), st.integers(1, 199))
def test_annuity_increasing_in_lifetime(r, n):
    # beyond this the increment (1+r)^-(n+1)/r is below double resolution
    assume((1 + r) ** -(n + 1) > 1e-13)
    assert annuity_factor(r, n + 1) > annuity_factor(r, n)


def test_ocgt_annualized_cost():
    spec = TechnologySpec("OCGT", 435200.0, 1.78, 4.5, 25, 0.41, 0.2009, True)
    oracle = 435200.0 / mp_annuity("0.07", 25) + 435200.0 * 0.0178
    assert annualized_capital_cost(spec, 0.07) == pytest.approx(oracle, rel=1e-12)
    assert annualized_capital_cost(spec, 0.07) == pytest.approx(45088, rel=2e-4)


def test_annualized_cost_trivial_cases():
    s = TechnologySpec("x", 1000.0, 0.0, 0.0, 20, 1.0, 0.0, True)
    assert annualized_capital_cost(s, 0.0) == pytest.approx(50.0)
    s0 = TechnologySpec("y", 0.0, 3.0, 0.0, 20, 1.0, 0.0, True)
    assert annualized_capital_cost(s0, 0.07) == 0.0


@pytest.mark.parametrize("fuel, eta, electric", [(0.33, 0.33, 1.00), (0.2009, 0.41, 0.49), (0.0, 0.5, 0.0)])
def test_electric_emission_intensity(fuel, eta, electric):
    spec = TechnologySpec("t", 0.0, 0.0, 0.0, 1, eta, fuel, False)
    assert electric_emission_intensity(spec) == pytest.approx(electric, abs=1e-12)


def test_technology_invariants():
    with pytest.raises(ValueError):
        TechnologySpec("bad", 0.0, 0.0, 0.0, 1, 0.0, 0.0, False)
    with pytest.raises(ValueError):
        TechnologySpec("bad", -1.0, 0.0, 0.0, 1, 0.5, 0.0, False)
    with pytest.raises(ValueError):
        TechnologySpec("bad", 1.0, 0.0, 0.0, 0, 0.5, 0.0, False)


def test_super_exporter_limit():
    def net(demand):
        doc = tiny_doc()
        doc["network"]["horizon"] = 1
        doc["nodes"] = [{"name": "A", "demand": demand}]
        doc["generators"] = [{"name": "g", "node": "A", "tech": "coal", "existing_capacity": 1e7}]
        doc["lines"] = []
        return parse_network(doc)

    assert coal_super_exporter_limit(net(100.0), "A") == pytest.approx(67.5)
    assert coal_super_exporter_limit(net(0.0), "A") == 0.0
    assert coal_super_exporter_limit(net(1e6), "A") == pytest.approx(675000.0)
    assert coal_super_exporter_limit(net(2e6), "A") == pytest.approx(2 * coal_super_exporter_limit(net(1e6), "A"))


def test_bundled_testsys5(testsys5):
    assert testsys5.node_names == ["DE", "DK", "FR", "PL", "SE"]
    assert testsys5.horizon == 168
    assert testsys5.timestep_hours == 3.0
    assert all(len(g.capacity_factor) == 168 for g in testsys5.generators)


def test_load_errors_carry_location(tmp_path):
    doc = tiny_doc()
    doc["generators"][0]["node"] = "Z"
    with pytest.raises(NetworkError, match="unknown node") as exc:
        parse_network(doc)
    assert "generators[0]" in str(exc.value)

    doc = tiny_doc()
    doc["nodes"][0]["demand"] = [1.0]
    with pytest.raises(NetworkError, match="series length"):
        parse_network(doc)

    doc = tiny_doc()
    doc["lines"][0]["capital_cost"] = -5.0
    with pytest.raises(NetworkError, match="negative quantity"):
        parse_network(doc)

    bad = tmp_path / "bad.toml"
    bad.write_text("[network\n")
    with pytest.raises(NetworkError, match="parse error"):
        load_network(bad)


def test_round_trip_is_fixed_point(tmp_path, testsys5):
    text = dump_network(testsys5)
    p = tmp_path / "copy.toml"
    p.write_text(text)
    again = load_network(p)
    assert dump_network(again) == text
    assert again.content_hash() == testsys5.content_hash()


def test_roundtrip_electric_times_efficiency(testsys5):
    for spec in testsys5.technologies:
        back = electric_emission_intensity(spec) * spec.efficiency
        assert math.isclose(back, spec.fuel_emission_intensity, rel_tol=4e-16, abs_tol=0.0)
