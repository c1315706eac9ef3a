import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from co2flex.allocation import (
    AllocationError,
    AllocationScheme,
    NonBracketingError,
    Scheme,
    allocate,
    proportional_split,
    rescale_to_realized,
    scheme_weights,
)
from co2flex.system_model import parse_network

from helpers import tiny_doc


def nodes_with(**node_attrs):
    """One node per value in the attribute lists; a single coal plant keeps the network valid."""
    doc = tiny_doc()
    doc["network"]["horizon"] = 1
    count = len(next(iter(node_attrs.values())))
    doc["nodes"] = [dict(name=f"N{i}", demand=0.0) for i in range(count)]
    for key, values in node_attrs.items():
        for node, v in zip(doc["nodes"], values):
            node[key] = v
    doc["generators"] = [{"name": "g", "node": "N0", "tech": "coal", "existing_capacity": 1e9}]
    doc["lines"] = []
    return parse_network(doc)


def targets(policy, net):
    return [policy.targets[n] for n in net.node_names]


def test_sovereignty_proportional_to_demand():
    net = nodes_with(demand=[2e6, 1e6, 1e6])
    pol = allocate(AllocationScheme(Scheme.SOVEREIGNTY, 100.0), net)
    assert targets(pol, net) == pytest.approx([50.0, 25.0, 25.0], abs=1e-12)
    assert pol.fractions["N0"] == pytest.approx(0.5)


def test_grandfathering_split():
    net = nodes_with(historical_emissions_1990=[90.0, 10.0])
    pol = allocate(AllocationScheme("grandfathering", 666.85e6), net)
    assert targets(pol, net) == pytest.approx([600.165e6, 66.685e6], rel=1e-12)


def test_ability_to_pay_inverse_gdp():
    net = nodes_with(gdp_per_capita=[40000.0, 20000.0])
    pol = allocate(AllocationScheme("ability_to_pay", 99.0), net)
    assert targets(pol, net) == pytest.approx([33.0, 66.0], abs=1e-12)


def test_egalitarianism_population():
    net = nodes_with(population=[1.0, 3.0])
    pol = allocate(AllocationScheme("egalitarianism", 8.0), net)
    assert targets(pol, net) == pytest.approx([2.0, 6.0])


def test_efficiency_is_global():
    net = nodes_with(population=[1.0, 3.0])
    pol = allocate(AllocationScheme("efficiency", 8.0), net)
    assert pol.mode == "global" and pol.cap == 8.0


def test_errors():
    with pytest.raises(AllocationError):
        allocate(AllocationScheme("grandfathering", 10.0), nodes_with(historical_emissions_1990=[0.0, 0.0]))
    with pytest.raises(AllocationError, match="gdp_per_capita"):
        scheme_weights(Scheme.ABILITY_TO_PAY, nodes_with(gdp_per_capita=[1.0, 0.0]))
    with pytest.raises(ValueError):
        AllocationScheme("sovereignty", -1.0)
    with pytest.raises(AllocationError):
        proportional_split([1.0, -1.0], 1.0)


weights = st.lists(st.floats(1e-6, 1e9, allow_subnormal=False), min_size=1, max_size=40)


@given(weights, st.floats(0.0, 1e12))
def test_split_conserves_budget(w, budget):
    shares = proportional_split(w, budget)
    assert math.fsum(shares) == pytest.approx(budget, rel=1e-9, abs=1e-9)
    assert all(s >= 0 for s in shares)


@given(weights, st.floats(1.0, 1e9), st.randoms(use_true_random=False))
def test_split_permutation_and_scale(w, budget, rnd):
    base = proportional_split(w, budget)
    perm = list(range(len(w)))
    rnd.shuffle(perm)
    permuted = proportional_split([w[i] for i in perm], budget)
    np.testing.assert_allclose(permuted, [base[i] for i in perm], rtol=1e-9, atol=1e-9 * budget)
    np.testing.assert_allclose(proportional_split([2 * v for v in w], budget), base, rtol=1e-9,
                               atol=1e-9 * budget)


def test_rescale_efficiency_single_iteration(testsys5):
    res = rescale_to_realized(Scheme.EFFICIENCY, testsys5, 0.55)
    assert res.iterations == 1
    assert res.realized_reduction == pytest.approx(0.55, abs=1e-6)


def test_rescale_grandfathering_needs_larger_budget(testsys5):
    eff = rescale_to_realized(Scheme.EFFICIENCY, testsys5, 0.55)
    gf = rescale_to_realized(Scheme.GRANDFATHERING, testsys5, 0.55)
    assert abs(gf.realized_reduction - 0.55) <= 0.005
    assert gf.budget > eff.budget
    assert gf.iterations <= 30


def test_rescale_zero_target_does_not_bracket(testsys5):
    with pytest.raises(NonBracketingError):
        rescale_to_realized(Scheme.GRANDFATHERING, testsys5, 0.0)
