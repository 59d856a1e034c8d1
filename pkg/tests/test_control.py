import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adoptdyn.control import (
    ControlPolicy, Kind, Rule, allocate, apply_dissatisfaction_control, apply_opinion_control, budget_sweep, compare,
    control_for, run_policy, standard_policies,
)
from adoptdyn.dynamics import CommunityModel, simulate
from adoptdyn.errors import MissingGraph

from _gen import random_model, random_state

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def uniform_model(n=4):
    return CommunityModel(f=np.full(n, 1 / n), m=np.ones(n), beta=0.1, gamma=0.1, delta=np.full(n, 0.2),
                          lam=np.zeros(n), xi=np.zeros(n), W=np.full((n, n), 1 / n))


# --- allocation ------------------------------------------------------------

def test_allocate_examples():
    model = uniform_model(4)
    np.testing.assert_array_equal(allocate(Rule.SIZE, 4.0, model), [1.0, 1.0, 1.0, 1.0])
    two = CommunityModel(f=[0.25, 0.75], m=[1.0, 1.0], beta=0.1, gamma=0.1, delta=[0.1, 0.1], lam=[0.0, 0.0],
                         xi=[0.0, 0.0], W=np.eye(2))
    np.testing.assert_allclose(allocate(Rule.SIZE, 1.0, two), [0.25, 0.75], atol=1e-15)
    assert np.all(allocate(Rule.MOBILITY, 0.0, two) == 0)


def test_mobility_rule_weights_by_m_times_f():
    model = CommunityModel(f=[0.5, 0.5], m=[1.0, 3.0], beta=0.05, gamma=0.1, delta=[0.1, 0.1], lam=[0.0, 0.0],
                           xi=[0.0, 0.0], W=np.eye(2))
    np.testing.assert_allclose(allocate(Rule.MOBILITY, 2.0, model), [0.5, 1.5], atol=1e-15)


def test_centrality_rules_need_graph():
    model = uniform_model()
    for rule in (Rule.INDEGREE, Rule.PAGERANK):
        with pytest.raises(MissingGraph):
            allocate(rule, 1.0, model)
        np.testing.assert_allclose(allocate(rule, 2.0, model, model.W), 0.5, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=seeds, budget=st.floats(0.0, 50.0), rule=st.sampled_from(list(Rule)))
def test_allocation_conserves_budget(seed, budget, rule):
    rng = np.random.default_rng(seed)
    model, _ = random_model(rng)
    u = allocate(rule, budget, model, model.W)
    assert u.min() >= 0
    assert abs(u.sum() - budget) <= 1e-12 * max(1.0, budget)


# --- transforms -------------------------------------------------------------

def test_apply_examples():
    x, clipped = apply_opinion_control([0.9, 0.2], [0.4, 0.1])
    np.testing.assert_allclose(x, [1.0, 0.3])
    assert clipped == pytest.approx(0.3)
    delta, stranded = apply_dissatisfaction_control([0.2, 0.4], [0.25, 1.5])
    np.testing.assert_allclose(delta, [0.15, 0.0])
    assert stranded == pytest.approx(0.5)


def test_zero_budget_matches_baseline():
    rng = np.random.default_rng(0)
    model, x0 = random_model(rng, 5)
    init = random_state(rng, 5, x0)
    base = simulate(init, model, 200, x0=x0)
    for kind in (Kind.OPINION, Kind.DISSATISFACTION):
        out = run_policy(ControlPolicy(kind, Rule.SIZE, 0.0), model, x0, init, 200)
        np.testing.assert_array_equal(out.trace.a, base.a)


def test_none_kind_has_no_control():
    model = uniform_model()
    assert control_for(ControlPolicy(), model, np.full(4, 0.5)) is None
    assert ControlPolicy().label == "baseline"
    assert ControlPolicy("opinion", "pagerank", 2.5).label == "opinion-pagerank-2.5"
    with pytest.raises(ValueError):
        ControlPolicy(Kind.OPINION, Rule.SIZE, -1.0)


# --- comparison ------------------------------------------------------------

def test_compare_baseline_only_reproduces_simulation():
    rng = np.random.default_rng(1)
    model, x0 = random_model(rng, 4)
    init = random_state(rng, 4, x0)
    [out] = compare(model, x0, init, 300, [ControlPolicy()])
    base = simulate(init, model, 300, x0=x0)
    assert out.final_adopters == base.final_aggregates[1]


def test_compare_ranks_and_records_failures():
    rng = np.random.default_rng(2)
    model, x0 = random_model(rng, 5, delta=np.full(5, 0.3), weighted=True)
    init = random_state(rng, 5, x0)
    policies = [ControlPolicy()] + standard_policies(5) + [ControlPolicy(Kind.OPINION, Rule.PAGERANK, 1.0)]
    ranked = compare(model, x0, init, 300, policies, graph=model.W)
    assert all(o.ok for o in ranked)
    vals = [o.final_adopters for o in ranked]
    assert vals == sorted(vals, reverse=True)
    ranked = compare(model, x0, init, 300, policies, graph=None)
    failed = [o for o in ranked if not o.ok]
    assert len(failed) == 5 and all("MissingGraph" in o.error for o in failed)
    assert ranked[-5:] == failed
    assert failed[0].summary()["final_adopters"] is None


def test_raised_anchor_can_break_literal_headroom():
    # headroom is sized for x0; anchors pushed to 1 leave none under the literal pressure
    rng = np.random.default_rng(2)
    model, x0 = random_model(rng, 5, delta=np.full(5, 0.3))
    init = random_state(rng, 5, x0)
    ranked = compare(model, x0, init, 300, [ControlPolicy(Kind.OPINION, Rule.SIZE, 5.0), ControlPolicy()])
    assert ranked[0].policy.kind is Kind.NONE
    assert "InvariantViolation" in ranked[1].error


def test_dissatisfaction_control_helps_adoption():
    rng = np.random.default_rng(3)
    model, x0 = random_model(rng, 4, delta=np.full(4, 0.3), beta_frac=0.9, x0=np.full(4, 0.8))
    init = random_state(rng, 4, x0)
    best, worst = compare(model, x0, init, 500, [ControlPolicy(), ControlPolicy(Kind.DISSATISFACTION, Rule.SIZE, 3.0)])
    assert best.policy.kind is Kind.DISSATISFACTION and worst.policy.kind is Kind.NONE
    assert best.final_adopters > worst.final_adopters


# --- sweep -----------------------------------------------------------------

def test_budget_sweep_monotone_for_dissatisfaction():
    rng = np.random.default_rng(4)
    model, x0 = random_model(rng, 5, delta=np.full(5, 0.3), beta_frac=0.8, x0=np.full(5, 0.7))
    init = random_state(rng, 5, x0)
    res = budget_sweep(model, x0, init, 400, Kind.DISSATISFACTION, graph=model.W)
    assert res.budgets == [0.0, 1.25, 2.5, 3.75, 5.0]
    assert res.monotone
    d = res.to_dict()
    assert d["monotone"] and set(d["final_adopters"]) == {r.value for r in Rule}
    # zero budget equals the baseline for every rule
    base = simulate(init, model, 400, x0=x0).final_aggregates[1]
    assert all(v[0] == base for v in res.adopters.values())


def test_sweep_records_missing_graph():
    rng = np.random.default_rng(5)
    model, x0 = random_model(rng, 3)
    res = budget_sweep(model, x0, random_state(rng, 3, x0), 10, Kind.OPINION, budgets=[0.0, 1.0],
                       rules=[Rule.PAGERANK])
    assert res.adopters[Rule.PAGERANK] == [None, None]
    assert "MissingGraph" in res.errors[Rule.PAGERANK][0]
