"""Shared oracles and comparison helpers for the test suite."""
from __future__ import annotations

import heapq
import math
from collections import deque

import numpy as np

from layph.graph import Graph

INF = math.inf


def max_gap(a: dict[int, float], b: dict[int, float]) -> float:
    """L-infinity distance, treating matching infinities as equal."""
    if set(a) != set(b):
        return INF
    worst = 0.0
    for v, x in a.items():
        y = b[v]
        if x == y:
            continue
        worst = max(worst, abs(x - y))
    return worst


def states_match(spec, a: dict[int, float], b: dict[int, float], tol: float = 1e-5) -> bool:
    gap = max_gap(a, b)
    return gap == 0.0 if spec.is_min else gap <= tol


def dijkstra(g: Graph, s: int) -> dict[int, float]:
    dist = {v: INF for v in g.vertices()}
    dist[s] = 0.0
    pq = [(0.0, s)]
    while pq:
        d, u = heapq.heappop(pq)
        if d > dist[u]:
            continue
        for v, w in g.out[u].items():
            if d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(pq, (d + w, v))
    return dist


def bfs_levels(g: Graph, s: int) -> dict[int, float]:
    lvl = {v: INF for v in g.vertices()}
    lvl[s] = 0.0
    q = deque([s])
    while q:
        u = q.popleft()
        for v in g.out[u]:
            if lvl[v] == INF:
                lvl[v] = lvl[u] + 1
                q.append(v)
    return lvl


def power_pagerank(g: Graph, d: float = 0.85, tol: float = 1e-13) -> dict[int, float]:
    """Unnormalised PageRank x = (1-d) + d * sum x_u / deg(u); dangling mass is dropped."""
    vs = sorted(g.vertices())
    idx = {v: i for i, v in enumerate(vs)}
    n = len(vs)
    x = np.full(n, 1.0 - d)
    src, dst, coef = [], [], []
    for u in vs:
        deg = len(g.out[u])
        for v in g.out[u]:
            src.append(idx[u])
            dst.append(idx[v])
            coef.append(d / deg)
    src, dst, coef = np.array(src, int), np.array(dst, int), np.array(coef)
    for _ in range(10_000):
        nxt = np.full(n, 1.0 - d)
        np.add.at(nxt, dst, coef * x[src])
        if np.abs(nxt - x).sum() < tol:
            x = nxt
            break
        x = nxt
    return {v: float(x[idx[v]]) for v in vs}


def min_paths_within(g: Graph, vs, u: int, weighted: bool = True) -> dict[int, float]:
    """Brute-force shortest walks from ``u`` using only edges inside ``vs``.

    Bellman-Ford over the induced subgraph; the entry itself is excluded
    unless a cycle returns to it.
    """
    vs = set(vs)
    best = {}
    frontier = {u: 0.0}
    for _ in range(len(vs) + 1):
        nxt = {}
        for a, da in frontier.items():
            for b, w in g.out[a].items():
                if b not in vs:
                    continue
                c = da + (w if weighted else 1.0)
                if c < best.get(b, INF) and c < nxt.get(b, INF):
                    nxt[b] = c
        for b, c in nxt.items():
            best[b] = c
        frontier = nxt
        if not frontier:
            break
    return best


def touched_subgraphs(lg_old, lg_new, batch) -> set[int]:
    """Subgraph ids holding a vertex the batch touches, proxies of touched hosts included."""
    from layph.graph import diff_summary

    touched = diff_summary(batch, lg_old.base)
    for rg in (lg_old.routed, lg_new.routed):
        touched |= {pid for pid, h in rg.host.items() if h in touched}
    sids = set()
    for p in (lg_old.partition, lg_new.partition):
        sids |= {p.membership[v] for v in touched if v in p.membership}
    return sids


def containment_violations(lg_old, lg_new, batch, trace) -> tuple[list, list]:
    """GE calls on internal edges of untouched subgraphs during upload, and on
    lower-layer edges (internal target) during upper iteration."""
    hot = touched_subgraphs(lg_old, lg_new, batch)
    mem, subs = lg_new.partition.membership, lg_new.partition.subgraphs
    upload, upper = [], []
    for phase, kind, a, b in trace:
        sa = mem.get(a)
        if sa is None or sa != mem.get(b):
            continue
        if phase == "upload" and kind in ("edge", "revision") and sa not in hot:
            upload.append((a, b))
        if phase == "upper_iter" and kind == "edge" and b in subs[sa].internals:
            upper.append((a, b))
    return upload, upper
