import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from co2flex.lp_builder import LPProblem, ProblemFactory, build
from co2flex.lp_solver import (
    SolveStatus,
    Tolerances,
    dump_solution_csv,
    probe_degeneracy,
    solve,
    verify_certificate,
)
from co2flex.system_model import CO2Policy, parse_network

from helpers import tiny_doc


def random_lp(seed, m=6, n=8):
    """Random feasible bounded LP: feasible point x0 inside the box, c > 0 on a bounded box."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n)).round(3)
    x0 = rng.uniform(0.5, 2.0, n)
    me = rng.integers(0, 3)
    sense = ["E"] * me + ["L"] * (m - me)
    rhs = A @ x0 + np.where(np.array(sense) == "L", rng.uniform(0.0, 1.0, m), 0.0)
    c = rng.normal(size=n).round(3)
    ub = np.full(n, 5.0)
    ub[rng.integers(0, n)] = np.inf
    c[np.isinf(ub)] = abs(c[np.isinf(ub)]) + 0.1
    return LPProblem.from_arrays(c, A, sense, rhs, lb=np.zeros(n), ub=ub)


def test_min_x_at_least_three():
    p = LPProblem.from_arrays([1.0], [[-1.0]], "L", [-3.0], lb=[-np.inf], ub=[np.inf])
    for backend in ("highs", "simplex"):
        sol = solve(p, backend=backend)
        assert sol.value("x0") == pytest.approx(3.0)
        assert sol.dual("r0") == pytest.approx(1.0)


def test_single_node_price_is_vom():
    doc = tiny_doc()
    doc["network"].update(horizon=1, year_weight=1.0, timestep_hours=1.0)
    doc["nodes"] = [{"name": "A", "demand": 10.0}]
    doc["generators"] = [{"name": "g", "node": "A", "tech": "OCGT", "existing_capacity": 100.0}]
    doc["lines"] = []
    net = parse_network(doc)
    f = ProblemFactory(net)
    sol = solve(f.build(CO2Policy.unconstrained())[0])
    assert sol.value("gen:g:0") == pytest.approx(10.0)
    assert sol.dual("balance:A:0") == pytest.approx(4.5)
    assert f.summarize(sol).mean_price[0] == pytest.approx(4.5)


def test_national_co2_dual_matches_finite_difference():
    net = parse_network(tiny_doc())
    f = ProblemFactory(net)
    targets = {"A": 5.0, "B": 2.0}
    sol = solve(f.build(CO2Policy.national(targets))[0])
    mu = sol.dual("co2:national:A")
    assert mu > 0
    relaxed = solve(f.build(CO2Policy.national({"A": 6.0, "B": 2.0}))[0])
    assert sol.objective - relaxed.objective == pytest.approx(mu * 1.0, rel=0.01)


@pytest.mark.parametrize("seed", range(40))
def test_backends_agree_on_random_lps(seed):
    p = random_lp(seed)
    a = solve(p, backend="highs")
    b = solve(p, backend="simplex")
    assert a.status == b.status
    if a.optimal:
        assert a.objective == pytest.approx(b.objective, rel=1e-7, abs=1e-7)
        assert verify_certificate(p, a).passed
        assert verify_certificate(p, b).passed


def test_certificate_detects_corruption(tiny):
    problem, _ = build(tiny, CO2Policy.global_cap(20.0))
    sol = solve(problem)
    assert verify_certificate(problem, sol).passed
    bad = solve(problem)
    j = problem.col("gen:A_coal:0")
    bad.x = bad.x.copy()
    bad.x[j] += 5.0
    rep = verify_certificate(problem, bad)
    assert not rep.primal_ok
    flipped = solve(problem)
    i = problem.row("co2:global")
    assert flipped.duals[i] > 0
    flipped.duals = flipped.duals.copy()
    flipped.duals[i] *= -1
    assert not verify_certificate(problem, flipped).dual_sign_ok


def test_objective_scaling_invariance(tiny):
    problem, _ = build(tiny, CO2Policy.global_cap(20.0))
    a = solve(problem)
    b = solve(problem.with_objective(problem.c * 7.0, problem.offset * 7.0))
    np.testing.assert_allclose(a.x, b.x, rtol=1e-7, atol=1e-7)
    np.testing.assert_allclose(b.duals, 7.0 * a.duals, rtol=1e-6, atol=1e-6)


def test_infeasible_and_unbounded():
    infeas = LPProblem.from_arrays([1.0], [[1.0], [-1.0]], "LL", [1.0, -2.0])
    assert solve(infeas).status is SolveStatus.INFEASIBLE
    assert solve(infeas, backend="simplex").status is SolveStatus.INFEASIBLE
    unb = LPProblem.from_arrays([-1.0], [[-1.0]], "L", [0.0])
    assert solve(unb).status is SolveStatus.UNBOUNDED
    assert solve(unb, backend="simplex").status is SolveStatus.UNBOUNDED


def test_degeneracy_probe_flags_duplicate_rows():
    p = LPProblem.from_arrays([1.0], [[-1.0], [-1.0]], "LL", [-1.0, -1.0])
    sol = solve(p)
    probes = probe_degeneracy(p, sol, rows=[0, 1])
    assert all(pr.nonunique for pr in probes)
    assert sol.flags["degenerate_rows"] == ["r0", "r1"]
    assert sol.flags["primal_degenerate"]
    # the total multiplier is still the unit price
    assert sol.duals.sum() == pytest.approx(1.0)


def test_probe_clean_row(tiny):
    p, _ = build(tiny, CO2Policy.global_cap(20.0))
    sol = solve(p)
    (pr,) = probe_degeneracy(p, sol)
    assert pr.row == "co2:global"
    assert not pr.nonunique
    assert pr.slope_tighten == pytest.approx(pr.dual, rel=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_dual_is_a_subgradient(seed):
    """Any optimal dual of a <= row lies between its one-sided finite-difference slopes."""
    p = random_lp(seed)
    sol = solve(p)
    if not sol.optimal:
        return
    rows = [i for i in range(p.shape[0]) if p.sense[i] == "L"]
    for pr in probe_degeneracy(p, sol, rows=rows, delta=1e-5):
        lo = pr.slope_relax if np.isfinite(pr.slope_relax) else -np.inf
        hi = pr.slope_tighten if np.isfinite(pr.slope_tighten) else np.inf
        tol = 1e-3 * max(1.0, abs(pr.dual))
        assert lo - tol <= pr.dual <= hi + tol


def test_tolerances_from_env(monkeypatch):
    monkeypatch.setenv("CO2FLEX_TOL_FEAS", "1e-8")
    monkeypatch.setenv("CO2FLEX_TOL_GAP", "1e-9")
    t = Tolerances.from_env()
    assert (t.feas, t.cs, t.gap) == (1e-8, 1e-6, 1e-9)


def test_solution_dump(tmp_path, tiny):
    p, _ = build(tiny, CO2Policy.global_cap(20.0))
    sol = solve(p)
    path = tmp_path / "sol.csv"
    dump_solution_csv(sol, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "kind,name,value"
    assert len(lines) == 1 + p.shape[0] + p.shape[1]
