from __future__ import annotations

import json
import math

import pytest

from helpers import states_match
from layph.algorithms import pagerank, php, sssp
from layph.batch import run_from_scratch
from layph.container import (
    ContainerError,
    dumps_layered,
    graph_digest,
    load_layered,
    loads_layered,
    save_layered,
)
from layph.generators import FIXTURE_SUBGRAPHS, fixture_graph, planted_partition, random_update_batch
from layph.graph import DeleteEdge, UpdateBatch, apply_update_batch
from layph.incremental import (
    ConsistencyError,
    build_layph,
    layered_from_groups,
    memo_from_scratch,
    run_incremental_layered,
)
from layph.shortcuts import compute_shortcuts


@pytest.fixture(scope="module")
def planted():
    g, _ = planted_partition(150, 3, 0.35, 0.01, 3)
    return g


@pytest.mark.parametrize("spec", [sssp(0), pagerank(eps=1e-7), php(0, eps=1e-7)], ids=lambda s: s.name)
def test_round_trip_preserves_layered_graph(planted, spec):
    lg, _ = build_layph(planted, spec, K=60, threshold=1, seed=2)
    assert lg.routed.host, "want proxies in the round trip"
    lg2 = loads_layered(dumps_layered(lg), planted)
    assert lg2.partition.subgraphs == lg.partition.subgraphs
    assert lg2.routed == lg.routed and lg2.routed.host == lg.routed.host
    assert lg2.store.rows == lg.store.rows
    assert lg2.spec.name == spec.name and lg2.K == lg.K and lg2.seed == 2
    assert lg2.stats() == lg.stats()


def test_loaded_container_runs_incrementally(planted):
    spec = sssp(0)
    lg, _ = build_layph(planted, spec, K=60, seed=2)
    lg2 = loads_layered(dumps_layered(lg), planted)
    batch = random_update_batch(planted, 10, 10, seed=5, protect={0})
    rep, _, _ = run_incremental_layered(lg2, memo_from_scratch(lg2.routed, spec), batch)
    oracle, _ = run_from_scratch(apply_update_batch(planted, batch), spec)
    assert states_match(spec, rep.states, oracle.states)


def test_pending_rows_are_settled_before_saving(planted):
    spec = sssp(0)
    lg, memo = build_layph(planted, spec, K=60, threshold=math.inf, seed=2)
    sub = next(iter(lg.partition.subgraphs.values()))
    internal = [(u, v) for u in sorted(sub.vertices) for v in planted.out[u] if v in sub.vertices]
    batch = UpdateBatch.of(*(DeleteEdge(*e) for e in internal[:4]))
    _, _, lg2 = run_incremental_layered(lg, memo, batch)
    lg3 = loads_layered(dumps_layered(lg2), apply_update_batch(planted, batch))
    assert not lg3.store.stale
    for sid, s in lg3.partition.subgraphs.items():
        want, _ = compute_shortcuts(lg3.routed, s, spec)
        assert lg3.store.rows[sid] == want


def test_threshold_inf_round_trip():
    g = fixture_graph()
    lg, _ = layered_from_groups(g, FIXTURE_SUBGRAPHS, sssp(0))
    lg.threshold = math.inf
    assert loads_layered(dumps_layered(lg), g).threshold == math.inf


def test_digest_mismatch_is_rejected(planted):
    lg, _ = build_layph(planted, sssp(0), K=60)
    other = apply_update_batch(planted, random_update_batch(planted, 1, 0, seed=1))
    assert graph_digest(other) != graph_digest(planted)
    with pytest.raises(ConsistencyError):
        loads_layered(dumps_layered(lg), other)


def test_bad_magic_and_version():
    g = fixture_graph()
    data = dumps_layered(layered_from_groups(g, FIXTURE_SUBGRAPHS, sssp(0))[0])
    with pytest.raises(ContainerError, match="magic"):
        loads_layered(b"X" + data[1:], g)
    bumped = data[:8] + (99).to_bytes(2, "little") + data[10:]
    with pytest.raises(ContainerError, match="version"):
        loads_layered(bumped, g)


@pytest.mark.parametrize("cut", [13, 40, -5])
def test_truncation_is_detected(cut):
    g = fixture_graph()
    data = dumps_layered(layered_from_groups(g, FIXTURE_SUBGRAPHS, sssp(0))[0])
    with pytest.raises(ContainerError):
        loads_layered(data[:cut], g)


def test_save_writes_stats_sidecar(tmp_path):
    g = fixture_graph()
    lg, _ = layered_from_groups(g, FIXTURE_SUBGRAPHS, sssp(0))
    side = save_layered(lg, tmp_path / "fixture.lg", {"elapsed_ms": 1.0})
    stats = json.loads(side.read_text())
    assert side.name == "fixture.lg.stats.json"
    assert stats["schema"] == 1 and stats["upper_vertices"] == 3 and stats["upper_edges"] == 3
    assert load_layered(tmp_path / "fixture.lg", g).partition.subgraphs == lg.partition.subgraphs
