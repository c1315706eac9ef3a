import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from co2flex.lp_builder import SystemSummary
from co2flex.lp_solver import SolveStatus
from co2flex.sampler import (
    BELOW_JOINT_REDUCTION,
    COST_SLACK_EXCEEDED,
    INFEASIBLE,
    SUPER_EXPORTER,
    Baseline,
    CheckpointError,
    ConfigError,
    Evaluator,
    MergeError,
    SamplerConfig,
    adapt_sigma,
    compute_baseline,
    merge_chains,
    propose,
    read_store,
    run_chain,
)
from co2flex.system_model import coal_super_exporter_limit, parse_network

from helpers import BoxEvaluator, box_baseline, tiny_doc


def test_propose_clips_to_unit_box():
    rng = np.random.default_rng(0)
    draws = np.array([propose(np.array([0.02]), 0.1, rng)[0] for _ in range(2000)])
    assert draws.min() >= 0.0 and draws.max() <= 0.07
    assert draws.max() > 0.069


def test_propose_zero_width():
    assert propose(np.array([0.5, 0.2]), 0.0, np.random.default_rng(1)).tolist() == [0.5, 0.2]


def test_propose_mean():
    rng = np.random.default_rng(2)
    x = np.full(100_000, 0.5)
    assert propose(x, 0.2, rng).mean() == pytest.approx(0.5, abs=0.002)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_propose_support(x, sigma, seed):
    out = propose(np.array(x), sigma, np.random.default_rng(seed))
    assert np.all(out >= 0.0) and np.all(out <= 1.0)
    assert np.all(np.abs(out - np.array(x)) <= sigma / 2 + 1e-15)


CFG = SamplerConfig()


@pytest.mark.parametrize("acc, expected", [(0.90, 0.35), (0.50, 0.25), (0.80, 0.30)])
def test_adapt_sigma_examples(acc, expected):
    assert adapt_sigma(0.30, acc, CFG) == pytest.approx(expected, abs=1e-12)


def test_adapt_sigma_stays_in_range():
    assert adapt_sigma(0.05, 0.1, CFG) == 0.05  # 0.0 would leave (eps/10, 1]
    assert adapt_sigma(1.0, 0.99, CFG) == 1.0
    assert adapt_sigma(0.98, 0.99, CFG) == 0.98


@pytest.mark.parametrize("kw", [dict(n_samples=0), dict(target_acceptance=1.0), dict(epsilon=0.0),
                                dict(sigma0=0.0), dict(sigma0=1.5), dict(cost_slack=-0.1)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SamplerConfig(**kw)


# -- evaluation against a scripted solver -----------------------------------


class _Sol:
    def __init__(self, status):
        self.status = status

    @property
    def optimal(self):
        return self.status is SolveStatus.OPTIMAL


class ScriptedFactory:
    """Returns a fixed summary regardless of the policy."""

    def __init__(self, nodes, emissions, cost):
        self.nodes, self.emissions, self.cost = nodes, np.array(emissions, float), cost
        self.policies = []

    def build(self, policy):
        self.policies.append(policy)
        return object(), None

    def summarize(self, sol):
        k = len(self.nodes)
        z = np.zeros(k)
        return SystemSummary(tuple(self.nodes), self.cost, self.emissions, np.ones(k), z, z, z, "national")


@pytest.fixture
def tiny_net():
    doc = tiny_doc()
    doc["network"]["year_weight"] = 1.0
    return parse_network(doc)


def make_eval(net, emissions, cost, status=SolveStatus.OPTIMAL):
    base = Baseline(optimal_cost=100.0, baseline_1990=100.0, cap=45.0, efficiency_emissions=(30.0, 15.0),
                    x0=(2 / 3, 1 / 3), co2_price=1.0)
    fac = ScriptedFactory(net.node_names, emissions, cost)
    return Evaluator(net, base, SamplerConfig(), factory=fac, solver=lambda p, **kw: _Sol(status)), fac


def test_cost_boundary_inclusive(tiny_net):
    ev, fac = make_eval(tiny_net, [5.0, 2.0], 118.0)
    r = ev(np.array([0.6, 0.5]))
    assert r.accepted and r.reason is None
    assert fac.policies[0].targets == pytest.approx({"A": 27.0, "B": 22.5})
    ev, _ = make_eval(tiny_net, [5.0, 2.0], 118.0 * (1 + 1e-6))
    assert ev(np.array([0.6, 0.5])).reason == COST_SLACK_EXCEEDED


def test_below_joint_reduction(tiny_net):
    ev, _ = make_eval(tiny_net, [30.0, 16.0], 101.0)  # 54% reduction
    r = ev(np.array([0.7, 0.5]))
    assert not r.accepted and r.reason == BELOW_JOINT_REDUCTION and not r.fast_reject


def test_fast_reject_below_unit_budget(tiny_net):
    ev, fac = make_eval(tiny_net, [1.0, 1.0], 101.0)
    r = ev(np.array([0.4, 0.5]))
    assert r.reason == BELOW_JOINT_REDUCTION and r.fast_reject
    assert fac.policies == []


def test_super_exporter(tiny_net):
    # 1.6x the coal-equivalent emissions of its demand is above the 1.5x bound
    coal_equivalent = 0.45 * tiny_net.annual_demand("B")
    assert 1.6 * coal_equivalent > coal_super_exporter_limit(tiny_net, "B")
    ev, _ = make_eval(tiny_net, [0.0, 1.6 * coal_equivalent], 101.0)
    r = ev(np.array([0.5, 0.6]))
    assert r.reason == SUPER_EXPORTER and r.reason_node == "B"


def test_infeasible(tiny_net):
    ev, _ = make_eval(tiny_net, [0.0, 0.0], 0.0, status=SolveStatus.INFEASIBLE)
    r = ev(np.array([0.5, 0.6]))
    assert r.reason == INFEASIBLE and r.status == "infeasible"


def test_numerical_failure_flagged(tiny_net):
    ev, _ = make_eval(tiny_net, [0.0, 0.0], 0.0, status=SolveStatus.NUMERICAL)
    r = ev(np.array([0.5, 0.6]))
    assert r.reason == INFEASIBLE and r.diagnostic == "numerical failure"


# -- chains driven by a synthetic acceptance rule ---------------------------


def run(cfg, net, chain_id, path, **kw):
    return list(run_chain(cfg, net, box_baseline(), chain_id, store=path,
                          evaluator=BoxEvaluator(net.node_names), **kw))


SMALL = SamplerConfig(n_samples=300, burn_in=100, batch_size=25, sigma0=0.3, rng_seed=11)


def test_chain_semantics(tiny_net, tmp_path):
    recs = run(SMALL, tiny_net, 0, tmp_path / "c.jsonl")
    assert [r["iteration"] for r in recs] == list(range(1, 301))
    prev = [0.5, 0.5]
    for r in recs:
        assert r["state"] == (r["x"] if r["accepted"] else prev)
        prev = r["state"]
        assert r["burn_in"] == (r["iteration"] <= 100)
    sig = [recs[0]["sigma_at_draw"]] + [r["sigma_after"] for r in recs]
    steps = np.round(np.diff(sig), 12)
    assert set(np.unique(np.abs(steps))) <= {0.0, 0.05}
    assert min(sig) > SMALL.sigma_min and max(sig) <= 1.0
    changes = [i for i, r in enumerate(recs, start=1) if r["sigma_after"] != r["sigma_at_draw"]]
    assert all(i % SMALL.batch_size == 0 for i in changes)


def test_chain_is_deterministic(tiny_net, tmp_path):
    run(SMALL, tiny_net, 0, tmp_path / "a.jsonl")
    run(SMALL, tiny_net, 0, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_resume_after_kill_matches(tiny_net, tmp_path):
    full = tmp_path / "full.jsonl"
    part = tmp_path / "part.jsonl"
    run(SMALL, tiny_net, 0, full)
    run(SMALL, tiny_net, 0, part, stop_after=137)
    # simulate a torn write
    with part.open("a") as fh:
        fh.write('{"type":"record","chain_id":0,"iter')
    run(SMALL, tiny_net, 0, part, resume=True)
    assert part.read_bytes() == full.read_bytes()


def test_resume_rejects_other_config(tiny_net, tmp_path):
    p = tmp_path / "c.jsonl"
    run(SMALL, tiny_net, 0, p, stop_after=5)
    other = SamplerConfig(n_samples=300, burn_in=100, batch_size=25, sigma0=0.3, rng_seed=12)
    with pytest.raises(CheckpointError):
        run(other, tiny_net, 0, p, resume=True)


def test_corrupt_store_detected(tiny_net, tmp_path):
    p = tmp_path / "c.jsonl"
    run(SMALL, tiny_net, 0, p, stop_after=10)
    lines = p.read_text().splitlines(keepends=True)
    lines[4] = "garbage\n"
    p.write_text("".join(lines))
    with pytest.raises(CheckpointError, match="corrupt line 5"):
        read_store(p)


def test_merge(tiny_net, tmp_path):
    a, b = tmp_path / "chain_000.jsonl", tmp_path / "chain_001.jsonl"
    run(SMALL, tiny_net, 0, a)
    run(SMALL, tiny_net, 1, b)
    merged = merge_chains([b, a])
    assert len(merged.states) == 400
    keys = [(s.chain_id, s.iteration) for s in merged.states]
    assert keys == sorted(keys) and keys[0] == (0, 101)
    single = merge_chains([a])
    assert len(single.states) == 200
    assert [r["iteration"] for r in single.records] == list(range(101, 301))
    for s in single.states:
        assert all(abs(v - 0.5) < 0.3 for v in s.x)


def test_merge_refuses_mismatch(tiny_net, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run(SMALL, tiny_net, 0, a, stop_after=3)
    doc = tiny_doc()
    doc["nodes"][0]["demand"] = [11.0, 14.0]
    other = parse_network(doc)
    run(SMALL, other, 1, b, stop_after=3)
    with pytest.raises(MergeError):
        merge_chains([a, b])
    c = tmp_path / "c.jsonl"
    run(SamplerConfig(n_samples=300, burn_in=100, batch_size=25, sigma0=0.3, rng_seed=99), tiny_net, 1, c,
        stop_after=3)
    with pytest.raises(MergeError):
        merge_chains([a, c])


def test_header_contents(tiny_net, tmp_path):
    p = tmp_path / "c.jsonl"
    run(SMALL, tiny_net, 3, p, stop_after=2)
    header = json.loads(p.read_text().splitlines()[0])
    assert header["chain_id"] == 3 and header["seed"] == 11
    assert header["network_hash"] == tiny_net.content_hash()
    assert header["config_hash"] == SMALL.chain_hash()
    assert header["nodes"] == ["A", "B"]
    assert header["start"]["accepted"]


def test_testsys5_start_point_is_accepted(testsys5):
    cfg = SamplerConfig()
    base = compute_baseline(testsys5, cfg)
    assert sum(base.x0) == pytest.approx(1.0, abs=1e-7)
    assert base.cap == pytest.approx(0.45 * testsys5.baseline_1990)
    r = Evaluator(testsys5, base, cfg)(np.array(base.x0))
    assert r.accepted
    assert r.summary.total_cost == pytest.approx(base.optimal_cost, rel=1e-6)
