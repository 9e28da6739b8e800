"""Synthetic graphs, random update batches and the worked SSSP fixture."""
from __future__ import annotations

import random
from typing import Iterable

import numpy as np

from .graph import (
    DeleteEdge,
    DeleteVertex,
    Graph,
    InsertEdge,
    InsertVertex,
    UnitUpdate,
    UpdateBatch,
)


def random_graph(n: int, m: int, seed: int = 0, weighted: bool = True, wmax: int = 10) -> Graph:
    """Uniform random digraph with ``n`` vertices and ``m`` distinct edges.

    Self-loops are excluded; weights are integers uniform in ``[1, wmax]``.
    """
    rng = random.Random(seed)
    m = min(m, n * (n - 1))
    edges: dict[tuple[int, int], float] = {}
    while len(edges) < m:
        u, v = rng.randrange(n), rng.randrange(n)
        if u != v and (u, v) not in edges:
            edges[(u, v)] = float(rng.randint(1, wmax)) if weighted else 1.0
    return Graph.from_edges([(u, v, w) for (u, v), w in edges.items()], n, weighted)


def planted_partition(
    n: int,
    communities: int,
    p_in: float,
    p_out: float,
    seed: int = 0,
    weighted: bool = True,
    wmax: int = 10,
) -> tuple[Graph, list[int]]:
    """Directed planted-partition graph; returns the graph and ground-truth labels.

    Vertex ``v`` belongs to community ``v * communities // n``.  Each
    ordered intra-community pair is an edge with probability ``p_in`` and
    each inter-community pair with probability ``p_out``.
    """
    rng = np.random.default_rng(seed)
    labels = [v * communities // n for v in range(n)]
    bounds = [0]
    for c in range(communities):
        bounds.append(next(v for v in range(bounds[-1], n + 1) if v == n or labels[v] > c))
    src, dst = [], []
    for c in range(communities):
        lo, hi = bounds[c], bounds[c + 1]
        size = hi - lo
        mask = rng.random((size, size)) < p_in
        np.fill_diagonal(mask, False)
        us, vs = np.nonzero(mask)
        src.append(us + lo)
        dst.append(vs + lo)
    lab = np.asarray(labels)
    inter_pairs = n * n - sum((bounds[c + 1] - bounds[c]) ** 2 for c in range(communities))
    k = rng.binomial(inter_pairs, p_out) if inter_pairs else 0
    if k:
        us = rng.integers(0, n, size=4 * k + 16)
        vs = rng.integers(0, n, size=4 * k + 16)
        keep = lab[us] != lab[vs]
        pairs = list(dict.fromkeys(zip(us[keep].tolist(), vs[keep].tolist())))[:k]
        if pairs:
            a, b = zip(*pairs)
            src.append(np.asarray(a))
            dst.append(np.asarray(b))
    su = np.concatenate(src) if src else np.zeros(0, int)
    sv = np.concatenate(dst) if dst else np.zeros(0, int)
    ws = rng.integers(1, wmax + 1, size=len(su)) if weighted else np.ones(len(su))
    g = Graph.from_edges(zip(su.tolist(), sv.tolist(), ws.astype(float).tolist()), n, weighted)
    return g, labels


def random_update_batch(
    g: Graph,
    n_add: int,
    n_del: int,
    n_vadd: int = 0,
    n_vdel: int = 0,
    seed: int = 0,
    protect: Iterable[int] = (),
    wmax: int = 10,
    attach_edges: int = 0,
) -> UpdateBatch:
    """Random batch in the usual mixed form.

    Deletions are distinct existing edges; insertions join uniform random
    unconnected pairs; added vertices get ids past the current maximum
    and, when ``attach_edges`` > 0, that many random out- and in-edges;
    deleted vertices (never in ``protect``) take all incident edges.
    """
    rng = random.Random(seed)
    protect = set(protect)
    verts = sorted(g.vertices())
    edges = sorted((u, v) for u, v, _ in g.edges() if not g.is_proxy(u) and not g.is_proxy(v))
    if n_del > len(edges):
        raise ValueError(f"cannot delete {n_del} edges from a graph with {len(edges)}")
    if n_vdel > len([v for v in verts if v not in protect]):
        raise ValueError("not enough deletable vertices")
    ups: list[UnitUpdate] = []
    dels = rng.sample(edges, n_del)
    gone = set(dels)
    ups.extend(DeleteEdge(u, v) for u, v in dels)
    n = len(verts)
    added: set[tuple[int, int]] = set()
    tries = 0
    while len(added) < n_add:
        tries += 1
        if tries > 100 * (n_add + 10):
            raise ValueError("could not find enough unconnected vertex pairs")
        u, v = verts[rng.randrange(n)], verts[rng.randrange(n)]
        if u == v or (u, v) in added:
            continue
        if g.has_edge(u, v) and (u, v) not in gone:
            continue
        added.add((u, v))
        ups.append(InsertEdge(u, v, float(rng.randint(1, wmax)) if g.weighted else 1.0))
    next_id = (max(verts) + 1) if verts else 0
    for i in range(n_vadd):
        v = next_id + i
        ups.append(InsertVertex(v))
        for _ in range(attach_edges):
            t = verts[rng.randrange(n)] if n else v
            s = verts[rng.randrange(n)] if n else v
            w = float(rng.randint(1, wmax)) if g.weighted else 1.0
            if t != v:
                ups.append(InsertEdge(v, t, w))
            if s != v:
                ups.append(InsertEdge(s, v, w))
    cand = [v for v in verts if v not in protect]
    for v in rng.sample(cand, n_vdel):
        ups.append(DeleteVertex(v))
    return _dedupe_edges(UpdateBatch(tuple(ups)))


def _dedupe_edges(batch: UpdateBatch) -> UpdateBatch:
    """Drop edge updates that became invalid because a vertex was deleted earlier or later."""
    dead: set[int] = set()
    for up in batch:
        if isinstance(up, DeleteVertex):
            dead.add(up.v)
    out: list[UnitUpdate] = []
    for up in batch:
        if isinstance(up, (InsertEdge, DeleteEdge)) and (up.u in dead or up.v in dead):
            continue
        if isinstance(up, InsertEdge) and out and isinstance(out[-1], InsertEdge) and (out[-1].u, out[-1].v) == (up.u, up.v):
            continue
        out.append(up)
    return UpdateBatch(tuple(out))


# ---- worked SSSP fixture ------------------------------------------------------

FIXTURE_EDGES = (
    (0, 1, 1.0), (0, 2, 4.0), (0, 3, 1.0), (3, 4, 1.0), (2, 4, 1.0),
    (4, 5, 3.0), (5, 0, 2.0), (5, 6, 1.0), (6, 7, 1.0), (6, 8, 1.0),
)
FIXTURE_SUBGRAPHS = ((0, 1, 2, 3, 4), (5, 6, 7, 8))
FIXTURE_OLD_STATES = (0, 1, 4, 1, 2, 5, 6, 7, 7)
FIXTURE_NEW_STATES = (0, 1, 3, 1, 4, 7, 8, 9, 9)


def fixture_graph() -> Graph:
    return Graph.from_edges(FIXTURE_EDGES, 9)


def fixture_batch() -> UpdateBatch:
    return UpdateBatch.of(DeleteEdge(3, 4), InsertEdge(3, 2, 2.0))
