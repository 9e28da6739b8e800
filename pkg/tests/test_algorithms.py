from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import bfs_levels, dijkstra, max_gap, power_pagerank
from layph.algorithms import (
    ExactFixpoint,
    Threshold,
    agg,
    bfs,
    converged,
    ge,
    make_spec,
    pagerank,
    php,
    sssp,
)
from layph.batch import (
    ActivationCounter,
    NonConvergenceError,
    initial_states,
    run_fixpoint,
    run_from_scratch,
    states_digest,
)
from layph.generators import FIXTURE_OLD_STATES, fixture_graph, random_graph
from layph.graph import Graph, SenderContext

INF = math.inf
finite = st.floats(0, 1e6, allow_nan=False)
signed = st.floats(-1e3, 1e3, allow_nan=False)


def test_generate_examples():
    assert ge(sssp(0), 3.0, 2.0, SenderContext(1, 2.0)) == 5.0
    assert ge(bfs(0), 3.0, 9.0, SenderContext(1, 9.0)) == 4.0
    assert ge(pagerank(), 0.15, 1.0, SenderContext(3, 3.0)) == pytest.approx(0.0425)
    assert ge(php(0), 1.0, 2.0, SenderContext(2, 4.0)) == pytest.approx(0.425)
    assert ge(pagerank(), 1.0, 1.0, SenderContext(0, 0.0)) == 0.0


def test_aggregate_examples():
    assert agg(sssp(0), 4.0, INF) == 4.0
    assert agg(pagerank(), 0.25, 0.5) == 0.75


def test_convergence_predicates():
    assert converged(sssp(0), 3.0, 3.0)
    assert not converged(sssp(0), 3.0, 2.0)
    assert converged(pagerank(eps=1e-6), 1.0, 1.0 + 5e-7)
    assert not converged(pagerank(eps=1e-6), 1.0, 1.0 + 5e-6)
    assert isinstance(sssp(0).convergence, ExactFixpoint)
    assert isinstance(php(0).convergence, Threshold)


def test_make_spec():
    assert make_spec("sssp", source=3).source == 3
    assert make_spec("pagerank", eps=1e-7).eps == 1e-7
    with pytest.raises(ValueError):
        make_spec("nope")


@given(finite, finite, finite)
def test_min_aggregate_laws(a, b, c):
    s = sssp(0)
    assert agg(s, a, b) == agg(s, b, a)
    assert agg(s, agg(s, a, b), c) == agg(s, a, agg(s, b, c))
    assert agg(s, a, a) == a
    assert agg(s, a, INF) == a


@given(signed, signed, signed)
def test_sum_aggregate_laws(a, b, c):
    s = pagerank()
    assert agg(s, a, b) == agg(s, b, a)
    assert agg(s, agg(s, a, b), c) == pytest.approx(agg(s, a, agg(s, b, c)), abs=1e-9)
    assert agg(s, a, 0.0) == a


@given(signed, signed, st.integers(1, 20), st.floats(0.5, 10))
def test_sum_generate_is_linear(a, b, deg, w):
    for s in (pagerank(), php(0)):
        ctx = SenderContext(deg, deg * w)
        assert ge(s, a + b, w, ctx) == pytest.approx(ge(s, a, w, ctx) + ge(s, b, w, ctx), abs=1e-9)
        assert ge(s, -a, w, ctx) == pytest.approx(-ge(s, a, w, ctx), abs=1e-12)


@given(finite, finite, st.floats(0, 100))
def test_min_generate_distributes_over_min(a, b, w):
    for s in (sssp(0), bfs(0)):
        ctx = SenderContext(1, w)
        assert ge(s, agg(s, a, b), w, ctx) == agg(s, ge(s, a, w, ctx), ge(s, b, w, ctx))
        assert ge(s, a, w, ctx) >= a


def test_fixture_sssp_states():
    rep, _ = run_from_scratch(fixture_graph(), sssp(0))
    assert tuple(rep.states[v] for v in range(9)) == FIXTURE_OLD_STATES


def test_pagerank_three_cycle_is_one():
    g = Graph.from_edges([(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)], 3)
    rep, _ = run_from_scratch(g, pagerank(eps=1e-10))
    for v in range(3):
        assert rep.states[v] == pytest.approx(1.0, abs=1e-8)


def test_unreachable_vertices_stay_infinite():
    g = Graph.from_edges([(0, 1, 1.0)], 3)
    rep, _ = run_from_scratch(g, sssp(0))
    assert rep.states == {0: 0.0, 1: 1.0, 2: INF}


@pytest.mark.parametrize("seed", range(5))
def test_sssp_and_bfs_match_queue_oracles(seed):
    g = random_graph(120, 480, seed)
    assert run_from_scratch(g, sssp(0))[0].states == dijkstra(g, 0)
    assert run_from_scratch(g, bfs(0))[0].states == bfs_levels(g, 0)


@pytest.mark.parametrize("seed", range(3))
def test_pagerank_matches_power_iteration(seed):
    g = random_graph(150, 600, seed)
    rep, _ = run_from_scratch(g, pagerank(eps=1e-10))
    oracle = power_pagerank(g)
    assert sum(abs(rep.states[v] - oracle[v]) for v in oracle) < 1e-6


def _php_solve(g: Graph, s: int, c: float = 0.85) -> dict[int, float]:
    vs = sorted(g.vertices())
    idx = {v: i for i, v in enumerate(vs)}
    A = np.eye(len(vs))
    for u in vs:
        tot = sum(g.out[u].values())
        for v, w in g.out[u].items():
            if v != s:
                A[idx[v], idx[u]] -= c * w / tot
    rhs = np.zeros(len(vs))
    rhs[idx[s]] = 1.0
    x = np.linalg.solve(A, rhs)
    return {v: float(x[idx[v]]) for v in vs}


@pytest.mark.parametrize("seed", range(3))
def test_php_matches_linear_solve(seed):
    g = random_graph(100, 400, seed)
    rep, _ = run_from_scratch(g, php(0, eps=1e-10))
    assert max_gap(rep.states, _php_solve(g, 0)) < 1e-7
    assert rep.states[0] == 1.0


@pytest.mark.parametrize("spec", [sssp(0), bfs(0), pagerank(eps=1e-9), php(0, eps=1e-9)],
                         ids=lambda s: s.name)
def test_schedule_order_does_not_change_fixpoint(spec):
    g = random_graph(80, 320, 11)
    base, _ = run_from_scratch(g, spec)
    for seed in range(3):
        shuffled, _ = run_from_scratch(g, spec, schedule="random", seed=seed)
        gap = max_gap(base.states, shuffled.states)
        assert gap == 0.0 if spec.is_min else gap < 1e-6


def test_runs_are_deterministic():
    g = random_graph(80, 320, 4)
    a, _ = run_from_scratch(g, pagerank())
    b, _ = run_from_scratch(g, pagerank())
    assert states_digest(a.states) == states_digest(b.states)
    assert a.activations == b.activations


@pytest.mark.parametrize("spec", [sssp(0), pagerank()], ids=lambda s: s.name)
def test_activation_count_equals_generate_calls(spec):
    calls = [0]
    inner = spec.generate

    def counted(m, w, ctx):
        calls[0] += 1
        return inner(m, w, ctx)

    wrapped = dataclasses.replace(spec, generate=counted)
    g = random_graph(60, 240, 2)
    counter = ActivationCounter()
    run_fixpoint(g, wrapped, initial_states(g, wrapped), counter)
    assert counter.edge_activations == calls[0] > 0


def test_activation_budget_raises():
    g = random_graph(60, 240, 2)
    with pytest.raises(NonConvergenceError):
        run_fixpoint(g, pagerank(eps=1e-12), initial_states(g, pagerank()),
                     ActivationCounter(max_activations=100))
