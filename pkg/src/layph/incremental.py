"""Incremental engines: the plain whole-graph baseline and the layered workflow.

Both engines start from a :class:`Memo` (converged states, pending
residuals and, for min specs, dependency parents) and an update batch.

Revision messages follow the spec's family:

* min specs reset every vertex whose dependency chain used a deleted
  edge back to its initial state, then re-seed reset vertices from
  their intact in-neighbours and relax over inserted edges;
* sum specs cancel what a changed sender emitted over its old edges
  (``-GE(acc)``) and compensate over its new ones (``+GE(acc)``), where
  ``acc`` is everything the sender has consumed so far.

The layered engine runs the same revision in four phases: layer update
(routed graph, partition roles, shortcut rows), upload inside changed
subgraphs, iteration on the upper layer only, and one-hop assignment
from entry caches to internal vertices.
"""
from __future__ import annotations

import logging
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .algorithms import INF, AlgorithmSpec
from .batch import (
    PHASES,
    ActivationCounter,
    RunReport,
    StateVector,
    initial_states,
    run_fixpoint,
)
from .graph import (
    DeleteEdge,
    EdgeDiff,
    Graph,
    InsertEdge,
    UpdateBatch,
    apply_update_batch,
    edge_diff,
)
from .layering import (
    DEFAULT_REBUILD_THRESHOLD,
    DEFAULT_REPLICATION_THRESHOLD,
    Partition,
    RoutedGraph,
    apply_routed,
    default_k,
    partition_from_groups,
    plain_routed,
    preprocess_partition,
    refresh_partition,
)
from .shortcuts import ShortcutStore, build_store, ensure_row, update_shortcuts

log = logging.getLogger(__name__)


class ConsistencyError(RuntimeError):
    """Memo or layered structure does not match the graph it is used with."""


@dataclass
class Memo:
    """Converged run state carried from one batch to the next."""

    x: dict[int, float]
    m: dict[int, float] = field(default_factory=dict)
    parent: dict[int, object] = field(default_factory=dict)
    # layered runs only: amounts already in x that still owe cross-edge emission
    up: dict[int, float] = field(default_factory=dict)

    @classmethod
    def from_states(cls, sv: StateVector) -> "Memo":
        return cls(dict(sv.x), dict(sv.m), dict(sv.parent))

    def copy(self) -> "Memo":
        return Memo(dict(self.x), dict(self.m), dict(self.parent), dict(self.up))


def memo_from_scratch(g: Graph, spec: AlgorithmSpec, counter: ActivationCounter | None = None) -> Memo:
    return Memo.from_states(run_fixpoint(g, spec, initial_states(g, spec), counter))


def _parent_key(p) -> int:
    return p[1] if isinstance(p, tuple) else p


def children_index(parent: dict[int, object]) -> dict[int, list[int]]:
    ch: dict[int, list[int]] = defaultdict(list)
    for v, p in parent.items():
        if p is not None:
            ch[_parent_key(p)].append(v)
    return ch


def reset_closure(roots, parent: dict[int, object]) -> set[int]:
    """Roots plus every vertex depending on them through ``parent``."""
    ch = children_index(parent)
    seen: set[int] = set()
    stack = list(roots)
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        stack.extend(ch.get(v, ()))
    return seen


def changed_emitters(g_old: Graph, g_new: Graph, cand, uses_ctx: bool) -> set[int]:
    """Vertices among ``cand`` whose out-edges (or sender context) differ."""
    em = set()
    for a in cand:
        ro = g_old.out.get(a)
        rn = g_new.out.get(a)
        if ro is None:
            continue
        if ro != rn or (uses_ctx and rn is not None and g_old.ctx(a) != g_new.ctx(a)):
            em.add(a)
    return em


def sum_revisions(g_old: Graph, g_new: Graph, emitters, x: dict, spec: AlgorithmSpec,
                  counter: ActivationCounter, sink) -> None:
    """Cancellation/compensation pairs for every changed emitter.

    ``sink(a, b, msg, inserted)`` receives each revision message.
    """
    gen = spec.generate
    absorbing = spec.absorbing
    acts = 0
    for a in emitters:
        acc = x.get(a, 0.0) - spec.initial_state(a)
        if acc == 0.0:
            continue
        ro = g_old.out.get(a, {})
        rn = g_new.out.get(a, {}) if a in g_new.out else {}
        co = g_old.ctx(a)
        cn = g_new.ctx(a) if a in g_new.out else co
        full = spec.uses_ctx and co != cn
        for b, w in ro.items():
            if b in absorbing or b not in g_new.out:
                continue
            if full or b not in rn or rn[b] != w:
                acts += 1
                counter.log("revision", a, b)
                sink(a, b, -(acc if w is None else gen(acc, w, co)), False)
        for b, w in rn.items():
            if b in absorbing:
                continue
            if full or b not in ro or ro[b] != w:
                acts += 1
                counter.log("revision", a, b)
                sink(a, b, acc if w is None else gen(acc, w, cn), True)
    counter.add(acts, "revision")


# ---- plain incremental baseline --------------------------------------------


def run_incremental_plain(
    g_old: Graph,
    memo: Memo,
    batch: UpdateBatch,
    spec: AlgorithmSpec,
    counter: ActivationCounter | None = None,
    g_new: Graph | None = None,
) -> tuple[RunReport, Memo, Graph]:
    """Deduce revision messages, then propagate them over the whole graph."""
    counter = counter if counter is not None else ActivationCounter()
    t0 = time.perf_counter()
    g_new = g_new if g_new is not None else apply_update_batch(g_old, batch)
    diff = edge_diff(g_old, g_new, batch)
    x, m, parent = dict(memo.x), dict(memo.m), dict(memo.parent)
    if memo.up:
        log.info("plain-inc ignores %d layered cross-emission residuals", len(memo.up))
    for v in diff.died:
        x.pop(v, None)
        m.pop(v, None)
        parent.pop(v, None)
    for v in diff.born:
        x[v] = spec.initial_state(v)
    counter.phase = "deduce"
    seeds: dict[int, float] = {}
    if spec.is_min:
        roots = [b for (a, b) in diff.deleted if parent.get(b) == a and b in g_new.out]
        roots += [v for v, p in parent.items() if p in diff.died]
        reset = reset_closure(roots, parent) if roots else set()
        for v in reset:
            x[v] = spec.initial_state(v)
            parent.pop(v, None)
        gen, ctx = spec.generate, g_new.ctx
        acts = 0
        for v in reset:
            for a, w in g_new.inn[v].items():
                if a in reset or x[a] == INF:
                    continue
                c = x[a] if w is None else gen(x[a], w, ctx(a))
                acts += 1
                if c < x[v]:
                    x[v], parent[v] = c, a
                    seeds[v] = c
        for (a, b), w in diff.inserted.items():
            if a in reset or x.get(a, INF) == INF:
                continue
            c = x[a] if w is None else gen(x[a], w, ctx(a))
            acts += 1
            if c < x.get(b, INF):
                x[b], parent[b] = c, a
                seeds[b] = c
        counter.add(acts, "revision")
        for v in diff.born:
            mv = spec.initial_message(v)
            if mv < INF:
                seeds[v] = min(mv, seeds.get(v, INF))
    else:
        def sink(a, b, msg, inserted):
            m[b] = m.get(b, 0.0) + msg

        cand = {a for (a, _) in diff.deleted} | {a for (a, _) in diff.inserted}
        emitters = changed_emitters(g_old, g_new, cand, spec.uses_ctx)
        sum_revisions(g_old, g_new, emitters, memo.x, spec, counter, sink)
        for v in diff.born:
            mv = spec.initial_message(v)
            if mv:
                m[v] = m.get(v, 0.0) + mv
        seeds = m
    deduce_acts = counter.edge_activations
    counter.phase = "propagate"
    sv = StateVector(x, seeds, parent)
    run_fixpoint(g_new, spec, sv, counter)
    if not spec.is_min:
        m = sv.m
    else:
        m = {}
    ms = (time.perf_counter() - t0) * 1e3
    rep = RunReport(
        algorithm=spec.name,
        mode="plain-inc",
        states=dict(sv.x),
        activations={"deduce": deduce_acts, "propagate": counter.edge_activations - deduce_acts},
        phase_times_ms={"total": ms},
        iterations=counter.iterations,
        total_ms=ms,
    )
    return rep, Memo(sv.x, m, sv.parent), g_new


# ---- layered structure -----------------------------------------------------


def _pmap(threads: int, fn, items) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


@dataclass
class LayeredGraph:
    """Routed graph, partition and shortcut rows, bound to one spec.

    Upper vertices are outliers plus every subgraph's entries and exits.
    Edges fall into three families: cross edges (``upper``), internal
    edges ending at an internal vertex (``lower``) and internal edges
    ending at a boundary vertex (``up_low``).
    """

    spec: AlgorithmSpec
    routed: RoutedGraph
    partition: Partition
    store: ShortcutStore
    K: int
    threshold: float = DEFAULT_REPLICATION_THRESHOLD
    seed: int = 0
    rebuild_threshold: int = DEFAULT_REBUILD_THRESHOLD
    updates_since_build: int = 0

    @property
    def base(self) -> Graph:
        return self.routed.base

    def upper_vertices(self) -> set[int]:
        up = self.partition.outliers(self.routed)
        for sub in self.partition.subgraphs.values():
            up |= sub.boundary
        return up

    def edge_families(self) -> dict[str, int]:
        counts = {"upper": 0, "lower": 0, "up_low": 0}
        mem, subs = self.partition.membership, self.partition.subgraphs
        for u, v, _ in self.routed.edges():
            su, sv = mem.get(u), mem.get(v)
            if su is None or su != sv:
                counts["upper"] += 1
            elif v in subs[sv].boundary:
                counts["up_low"] += 1
            else:
                counts["lower"] += 1
        return counts

    def shortcut_upper_edges(self) -> int:
        """Rows from an entry to another boundary vertex of its subgraph."""
        n = 0
        for sid, sub in self.partition.subgraphs.items():
            for u, row in self.store.entry_rows(sid).items():
                n += sum(1 for b in row if b != u and b in sub.boundary)
        return n

    def stats(self) -> dict:
        fam = self.edge_families()
        subs = self.partition.subgraphs.values()
        return {
            "vertices": self.base.vertex_count,
            "edges": self.base.edge_count,
            "subgraphs": len(self.partition.subgraphs),
            "proxies": len(self.routed.host),
            "upper_vertices": len(self.upper_vertices()),
            "upper_edges": fam["upper"] + self.shortcut_upper_edges(),
            "cross_edges": fam["upper"],
            "lower_edges": fam["lower"],
            "up_low_edges": fam["up_low"],
            "internal_vertices": sum(len(s.internals) for s in subs),
            "shortcuts": self.store.row_count(),
        }


def build_layered_graph(g: Graph, p: Partition, store: ShortcutStore, spec: AlgorithmSpec,
                        K: int | None = None, **kw) -> LayeredGraph:
    """Bundle a partition and its shortcut rows.

    Every subgraph needs a row table; rows of individual entries may be
    pending and are then computed on first use.
    """
    rg = g if isinstance(g, RoutedGraph) else plain_routed(g)
    for sid in p.subgraphs:
        if sid not in store.rows:
            raise ConsistencyError(f"no shortcut rows for subgraph {sid}")
    return LayeredGraph(spec, rg, p, store, K if K is not None else default_k(rg.base.vertex_count), **kw)


def build_layph(
    g: Graph,
    spec: AlgorithmSpec,
    K: int | None = None,
    threshold: float = DEFAULT_REPLICATION_THRESHOLD,
    seed: int = 0,
    counter: ActivationCounter | None = None,
    threads: int = 1,
    rebuild_threshold: int = DEFAULT_REBUILD_THRESHOLD,
) -> tuple[LayeredGraph, Memo]:
    """Preprocess ``g`` for ``spec`` and converge once from scratch."""
    counter = counter if counter is not None else ActivationCounter(phase="preprocess")
    K = K if K is not None else default_k(g.vertex_count)
    pinned = [spec.source] if spec.source is not None and g.has_vertex(spec.source) else []
    p, rg = preprocess_partition(g, K, threshold, seed, pinned)
    store = ShortcutStore(spec.name)
    subs = sorted(p.subgraphs.values(), key=lambda s: s.id)

    def work(sub):
        c = counter.child()
        part = build_store(rg, [sub], spec, c)
        return sub.id, part, c

    for sid, part, c in _pmap(threads, work, subs):
        store.rows[sid] = part.rows[sid]
        if spec.is_min:
            store.parents[sid] = part.parents[sid]
        counter.merge(c)
    lg = LayeredGraph(spec, rg, p, store, K, threshold, seed, rebuild_threshold)
    memo = memo_from_scratch(rg, spec)
    return lg, memo


def layered_from_groups(g: Graph, groups, spec: AlgorithmSpec, K: int | None = None) -> tuple[LayeredGraph, Memo]:
    """Layered graph over given vertex groups (no discovery, no proxies)."""
    pinned = [spec.source] if spec.source is not None and g.has_vertex(spec.source) else []
    p = partition_from_groups(g, groups, pinned)
    rg = plain_routed(g)
    store = build_store(rg, p.subgraphs.values(), spec)
    K = K if K is not None else max([len(s.vertices) for s in p.subgraphs.values()] + [2])
    return build_layered_graph(rg, p, store, spec, K), memo_from_scratch(rg, spec)


# ---- layered incremental run ----------------------------------------------


@dataclass
class RevisionSet:
    """Revision messages sorted by where they enter the layered workflow.

    ``full`` messages sit on outliers or entries and travel over cross
    edges and entry rows.  ``up`` amounts are already folded into the
    state of a boundary vertex and still owe emission over cross edges.
    ``upload`` holds, per subgraph, messages that enter over internal
    edges.  ``late`` lists (min specs) reset internal vertices of intact
    subgraphs, recomputed from entry rows at assignment.
    """

    full: dict[int, float] = field(default_factory=dict)
    up: dict[int, float] = field(default_factory=dict)
    upload: dict[int, dict[int, float]] = field(default_factory=dict)
    reset: set[int] = field(default_factory=set)
    late: dict[int, set[int]] = field(default_factory=dict)
    touched_subgraphs: set[int] = field(default_factory=set)

    def is_empty(self) -> bool:
        return not (self.full or self.up or self.upload or self.reset)


@dataclass
class LayphRun:
    """Working state of one layered run, shared by the step functions."""

    lg_old: LayeredGraph
    lg: LayeredGraph
    diff: EdgeDiff
    touched: set[int]
    affected: set[int]  # old subgraphs holding touched or dead vertices
    changed: set[int]  # affected subgraphs that survived the refresh
    old_parents: dict[int, dict]  # min specs: local parent tables before the update
    memo_x: dict[int, float]
    x: dict[int, float]
    m: dict[int, float]
    parent: dict[int, object]
    up: dict[int, float]
    counter: ActivationCounter
    threads: int = 1
    times: dict[str, float] = field(default_factory=dict)
    arrivals: Optional[list] = None  # (entry, message) log of full arrivals

    @property
    def spec(self) -> AlgorithmSpec:
        return self.lg.spec


def prepare_layered(lg: LayeredGraph, memo: Memo, batch: UpdateBatch,
                    counter: ActivationCounter | None = None, threads: int = 1) -> LayphRun:
    """Layer update: routed graph, partition roles and shortcut rows."""
    counter = counter if counter is not None else ActivationCounter()
    spec = lg.spec
    t0 = time.perf_counter()
    counter.phase = "layer_update"
    rg_old = lg.routed
    rg_new, ups = apply_routed(rg_old, batch)
    diff = edge_diff(rg_old, rg_new, ups)
    touched: set[int] = set()
    for up in ups:
        if isinstance(up, (InsertEdge, DeleteEdge)):
            touched.update((up.u, up.v))
        else:
            touched.add(up.v)
    proxies_of: dict[int, list[int]] = defaultdict(list)
    for pid, h in rg_old.host.items():
        proxies_of[h].append(pid)
    # a proxy shares its host's context, so both sides count as touched
    for v in list(touched):
        h = rg_old.host.get(v)
        if h is not None:
            touched.add(h)
            touched.update(proxies_of.get(h, ()))
        touched.update(proxies_of.get(v, ()))
    p_old = lg.partition
    rr = refresh_partition(rg_new, p_old, touched, diff.died)
    affected = {p_old.sub_of(v) for v in touched | set(diff.died)} - {None}
    changed = affected - set(rr.dissolved)
    old_store = lg.store
    store = old_store.copy()
    old_parents = {sid: old_store.parents.get(sid, {}) for sid in affected} if spec.is_min else {}
    for sid in affected:
        store.drop(sid)
    for sid in changed:
        if sid in old_store.rows:
            store.rows[sid] = {u: dict(r) for u, r in old_store.rows[sid].items()}
        if sid in old_store.parents:
            store.parents[sid] = {u: dict(t) for u, t in old_store.parents[sid].items()}
        if sid in old_store.stale:
            store.stale[sid] = dict(old_store.stale[sid])

    def work(sid):
        c = counter.child()
        update_shortcuts(store, rg_old, rg_new, p_old.subgraphs[sid], rr.partition.subgraphs[sid],
                         spec, touched, c, eager=False)
        return c

    for c in _pmap(threads, work, sorted(changed)):
        counter.merge(c)
    lg_new = LayeredGraph(spec, rg_new, rr.partition, store, lg.K, lg.threshold, lg.seed,
                          lg.rebuild_threshold, lg.updates_since_build + len(batch))
    x, m, parent, upm = dict(memo.x), dict(memo.m), dict(memo.parent), dict(memo.up)
    for v in diff.died:
        for d in (x, m, parent, upm):
            d.pop(v, None)
    for v in diff.born:
        x[v] = spec.initial_state(v)
    run = LayphRun(lg, lg_new, diff, touched, affected, changed, old_parents, memo.x,
                   x, m, parent, upm, counter, threads,
                   arrivals=[] if counter.trace is not None else None)
    run.times["layer_update"] = (time.perf_counter() - t0) * 1e3
    return run


def _row(run: LayphRun, sid: int, u: int) -> dict[int, float]:
    """Row of entry ``u``; a pending row is built now and charged to layer update."""
    store = run.lg.store
    if store.is_ready(sid, u):
        return store.rows[sid][u]
    counter = run.counter
    saved = counter.phase
    counter.phase = "layer_update"
    try:
        return ensure_row(run.lg.store, run.lg.routed, run.lg.partition.subgraphs[sid], u, run.spec, counter)
    finally:
        counter.phase = saved


def deduce_revision(run: LayphRun) -> RevisionSet:
    """Revision messages for the batch, classified by layer."""
    t0 = time.perf_counter()
    run.counter.phase = "upload"
    rs = _deduce_min(run) if run.spec.is_min else _deduce_sum(run)
    rs.touched_subgraphs = set(run.changed)
    if run.spec.is_min:
        _localize_entries(run, rs)
    run.times["upload"] = run.times.get("upload", 0.0) + (time.perf_counter() - t0) * 1e3
    return rs


def _deduce_min(run: LayphRun) -> RevisionSet:
    spec, lg, counter = run.spec, run.lg, run.counter
    g, p = lg.routed, lg.partition
    x, parent = run.x, run.parent
    gen, ctx = spec.generate, g.ctx
    p_old = run.lg_old.partition
    died = run.diff.died
    # a row parent inside an affected subgraph becomes its local in-edge, so
    # deleted internal edges are seen by the dependency walk below
    for v, par in list(parent.items()):
        if isinstance(par, tuple):
            u = par[1]
            sid = p_old.sub_of(u)
            if sid in run.affected:
                lp = run.old_parents.get(sid, {}).get(u, {}).get(v)
                if lp is None:
                    raise ConsistencyError(f"row parent of {v} via entry {u} has no local path")
                parent[v] = lp
    roots = [b for (a, b) in run.diff.deleted if parent.get(b) == a and b in g.out]
    roots += [v for v, q in parent.items() if q is not None and _parent_key(q) in died]
    reset = reset_closure(roots, parent) if roots else set()
    rs = RevisionSet(reset=reset)
    for v in reset:
        x[v] = spec.initial_state(v)
        parent.pop(v, None)
    acts = row_acts = 0
    for v in sorted(reset):
        if x[v] < INF:
            rs.full[v] = x[v]
            continue
        sid = p.sub_of(v)
        sub = p.subgraphs[sid] if sid is not None else None
        intact = sub is not None and sid not in run.changed
        if intact and v in sub.internals:
            rs.late.setdefault(sid, set()).add(v)
            continue
        best, bp, kind = INF, None, None
        for a, w in g.inn[v].items():
            if a in reset or x.get(a, INF) == INF:
                continue
            inside = sub is not None and a in sub.vertices
            if intact and inside:
                continue  # intact internal paths are summarised by the entry rows
            c = x[a] if w is None else gen(x[a], w, ctx(a))
            acts += 1
            counter.log("revision", a, v)
            if c < best:
                best, bp, kind = c, a, ("upload" if inside else "full")
        if intact:
            for u in sorted(sub.entries):
                w = _row(run, sid, u).get(v)
                if w is None or u in reset or x[u] == INF:
                    continue
                row_acts += 1
                c = spec.extend(x[u], w)
                if c < best:
                    best, bp, kind = c, ("r", u), "up"
        if bp is None:
            continue
        x[v], parent[v] = best, bp
        if kind == "upload":
            rs.upload.setdefault(sid, {})[v] = best
        elif kind == "up":
            rs.up[v] = best
        else:
            rs.full[v] = best
    for (a, b), w in run.diff.inserted.items():
        if a in reset or x.get(a, INF) == INF or b not in g.out:
            continue
        c = x[a] if w is None else gen(x[a], w, ctx(a))
        acts += 1
        counter.log("revision", a, b)
        if c < x.get(b, INF):
            x[b], parent[b] = c, a
            sb = p.sub_of(b)
            if sb is not None and sb == p.sub_of(a):
                rs.upload.setdefault(sb, {})[b] = c
            else:
                rs.full[b] = c
    for v in run.diff.born:
        if g.is_proxy(v):
            continue
        mv = spec.initial_message(v)
        if mv < INF:
            x[v] = min(mv, x[v])
            rs.full[v] = x[v]
    counter.add(acts, "revision")
    counter.phase = "upper_iter"
    counter.add(row_acts, "row")
    counter.phase = "upload"
    return rs


def _localize_entries(run: LayphRun, rs: RevisionSet) -> None:
    # min specs: an entry of a changed subgraph spreads its message by
    # upload, which only relaxes what improves, instead of through its row
    p = run.lg.partition
    for v in sorted(rs.full):
        sid = p.sub_of(v)
        if sid in run.changed and v in p.subgraphs[sid].entries:
            seeds = rs.upload.setdefault(sid, {})
            seeds[v] = min(rs.full.pop(v), seeds.get(v, INF))


def _deduce_sum(run: LayphRun) -> RevisionSet:
    spec, lg, counter = run.spec, run.lg, run.counter
    g, p = lg.routed, lg.partition
    p_old = run.lg_old.partition
    rs = RevisionSet()

    def sink(a, b, msg, inserted):
        sb = p.sub_of(b)
        if sb is None:
            rs.full[b] = rs.full.get(b, 0.0) + msg
            return
        sub = p.subgraphs[sb]
        inside = a in sub.vertices or (a not in g.out and p_old.sub_of(a) == sb)
        if inside or b not in sub.entries:
            seeds = rs.upload.setdefault(sb, {})
            seeds[b] = seeds.get(b, 0.0) + msg
        else:
            rs.full[b] = rs.full.get(b, 0.0) + msg

    emitters = changed_emitters(run.lg_old.routed, g, run.touched, spec.uses_ctx)
    sum_revisions(run.lg_old.routed, g, emitters, run.memo_x, spec, counter, sink)
    for v in run.diff.born:
        if g.is_proxy(v):
            continue
        mv = spec.initial_message(v)
        if mv:
            rs.full[v] = rs.full.get(v, 0.0) + mv
    # pending residuals join the run wherever they can be processed
    for v, r in list(run.m.items()):
        sid = p.sub_of(v)
        if sid is None or v in p.subgraphs[sid].entries:
            rs.full[v] = rs.full.get(v, 0.0) + r
        elif sid in rs.upload:
            rs.upload[sid][v] = rs.upload[sid].get(v, 0.0) + r
        else:
            continue
        del run.m[v]
    # amounts still owed on the old cross edges are sent over the old graph,
    # since a reshaped partition may have turned those edges internal
    g_old, acts = run.lg_old.routed, 0
    for v, r in sorted(run.up.items()):
        if v not in g_old.out:
            continue
        sv, cv = p_old.sub_of(v), g_old.ctx(v)
        vs = p_old.subgraphs[sv].vertices if sv is not None else ()
        for b, w in g_old.out[v].items():
            if b in vs or b in spec.absorbing or b not in g.out:
                continue
            acts += 1
            counter.log("revision", v, b)
            sink(v, b, r if w is None else spec.generate(r, w, cv), False)
    counter.add(acts, "revision")
    run.up.clear()
    return rs


def upload_messages(run: LayphRun, rs: RevisionSet) -> tuple[dict[int, float], dict[int, float]]:
    """Propagate internal revision messages inside their subgraphs.

    Internal edges only; states are updated on the way.  Min specs relax
    through the whole subgraph.  Sum specs stop at entries, whose rows
    carry the message further in the upper layer.  Returns the upper-layer
    messages ``(full, up)``: ``full`` adds the sum arrivals at entries to
    ``rs.full``, ``up`` adds the arrivals at exits.
    """
    t0 = time.perf_counter()
    counter = run.counter
    counter.phase = "upload"
    lg, spec = run.lg, run.spec
    g, subs = lg.routed, lg.partition.subgraphs

    def work(sid):
        c = counter.child()
        if spec.is_min:
            res = _upload_min(g, subs[sid], rs.upload[sid], run.x, run.parent, spec, c)
        else:
            res = _upload_sum(g, subs[sid], rs.upload[sid], run.x, spec, c)
        return res, c

    full, up = dict(rs.full), dict(rs.up)
    for (f_arr, u_arr, resid), c in _pmap(run.threads, work, sorted(rs.upload)):
        counter.merge(c)
        for tgt, arr in ((full, f_arr), (up, u_arr)):
            for v, val in arr.items():
                if spec.is_min:
                    tgt[v] = min(val, tgt.get(v, INF))
                else:
                    tgt[v] = tgt.get(v, 0.0) + val
        run.m.update(resid)
    run.times["upload"] = run.times.get("upload", 0.0) + (time.perf_counter() - t0) * 1e3
    return full, up


def _upload_min(g: Graph, sub, seeds: dict[int, float], x: dict, parent: dict,
                spec: AlgorithmSpec, counter: ActivationCounter) -> tuple[dict, dict, dict]:
    gen, ctx, out = spec.generate, g.ctx, g.out
    vs, exits = sub.vertices, sub.exits
    up = {v: x[v] for v in seeds if v in exits}
    frontier = sorted(seeds)
    tracing = counter.trace is not None
    while frontier:
        counter.iterations += 1
        nxt: list[int] = []
        queued: set[int] = set()
        acts = 0
        for a in frontier:
            xa = x[a]
            ca = ctx(a)
            for b, w in out[a].items():
                if b not in vs:
                    continue
                c = xa if w is None else gen(xa, w, ca)
                acts += 1
                if tracing:
                    counter.log("edge", a, b)
                if c < x[b]:
                    x[b], parent[b] = c, a
                    counter.vertex_updates += 1
                    if b in exits:
                        up[b] = c
                    if b not in queued:
                        queued.add(b)
                        nxt.append(b)
        counter.add(acts)
        frontier = nxt
    return {}, up, {}


def _upload_sum(g: Graph, sub, seeds: dict[int, float], x: dict, spec: AlgorithmSpec,
                counter: ActivationCounter) -> tuple[dict, dict, dict]:
    gen, ctx, out = spec.generate, g.ctx, g.out
    eps, absorbing = spec.eps, spec.absorbing
    vs, entries, exits = sub.vertices, sub.entries, sub.exits
    full: dict[int, float] = {}
    pend: dict[int, float] = {}
    for v, r in seeds.items():
        tgt = full if v in entries else pend
        tgt[v] = tgt.get(v, 0.0) + r
    up: dict[int, float] = {}
    frontier = [v for v, r in pend.items() if abs(r) >= eps]
    tracing = counter.trace is not None
    while frontier:
        counter.iterations += 1
        nxt: list[int] = []
        queued: set[int] = set()
        acts = 0
        for a in frontier:
            pa = pend.get(a, 0.0)
            if abs(pa) < eps:
                continue
            pend[a] = 0.0
            x[a] += pa
            counter.vertex_updates += 1
            if a in exits:
                up[a] = up.get(a, 0.0) + pa
            ca = ctx(a)
            for b, w in out[a].items():
                if b not in vs or b in absorbing:
                    continue
                acts += 1
                if tracing:
                    counter.log("edge", a, b)
                amt = pa if w is None else gen(pa, w, ca)
                if b in entries:
                    full[b] = full.get(b, 0.0) + amt
                    continue
                nb = pend.get(b, 0.0) + amt
                pend[b] = nb
                if b not in queued and abs(nb) >= eps:
                    queued.add(b)
                    nxt.append(b)
        counter.add(acts)
        frontier = nxt
    return full, up, {v: r for v, r in pend.items() if r != 0.0}


def iterate_upper(run: LayphRun, full: dict[int, float], up: dict[int, float]) -> dict[int, float]:
    """Fixpoint over cross edges and entry rows; returns the entry cache."""
    t0 = time.perf_counter()
    run.counter.phase = "upper_iter"
    cache = _upper_min(run, full, up) if run.spec.is_min else _upper_sum(run, full, up)
    run.times["upper_iter"] = (time.perf_counter() - t0) * 1e3
    return cache


def _upper_min(run: LayphRun, full: dict[int, float], up: dict[int, float]) -> dict[int, float]:
    spec, counter = run.spec, run.counter
    g, p = run.lg.routed, run.lg.partition
    x, parent = run.x, run.parent
    gen, ctx, out = spec.generate, g.ctx, g.out
    mem, subs = p.membership, p.subgraphs
    cache: dict[int, float] = {}
    arrivals = run.arrivals
    flag: dict[int, bool] = {}
    for v, val in up.items():
        if val <= x[v]:
            flag[v] = False
    for v, val in full.items():
        if val <= x[v]:
            flag[v] = True
            sid = mem.get(v)
            if sid is not None and v in subs[sid].entries:
                cache[v] = min(val, cache.get(v, INF))
                if arrivals is not None:
                    arrivals.append((v, val))
    frontier = sorted(flag)
    tracing = counter.trace is not None
    while frontier:
        counter.iterations += 1
        nxt: list[int] = []
        queued: set[int] = set()
        acts = 0
        for v in frontier:
            f = flag.pop(v, None)
            if f is None:
                continue
            xv = x[v]
            if xv == INF:
                continue
            sid = mem.get(v)
            sub = subs[sid] if sid is not None else None
            cv = ctx(v)
            for t, w in out[v].items():
                if sub is not None and t in sub.vertices:
                    continue
                c = xv if w is None else gen(xv, w, cv)
                acts += 1
                if tracing:
                    counter.log("edge", v, t)
                if c < x[t]:
                    x[t], parent[t] = c, v
                    counter.vertex_updates += 1
                    flag[t] = True
                    st = mem.get(t)
                    if st is not None and t in subs[st].entries:
                        cache[t] = min(c, cache.get(t, INF))
                        if arrivals is not None:
                            arrivals.append((t, c))
                    if t not in queued:
                        queued.add(t)
                        nxt.append(t)
            if f and sub is not None and v in sub.entries:
                for b, w in _row(run, sid, v).items():
                    if b == v or b not in sub.boundary:
                        continue
                    c = spec.extend(xv, w)
                    acts += 1
                    if tracing:
                        counter.log("row", v, b)
                    if c < x[b]:
                        x[b], parent[b] = c, ("r", v)
                        counter.vertex_updates += 1
                        flag[b] = False
                        if b not in queued:
                            queued.add(b)
                            nxt.append(b)
        counter.add(acts)
        frontier = nxt
    return cache


def _upper_sum(run: LayphRun, full: dict[int, float], up: dict[int, float]) -> dict[int, float]:
    spec, counter = run.spec, run.counter
    g, p = run.lg.routed, run.lg.partition
    x = run.x
    gen, ctx, out = spec.generate, g.ctx, g.out
    eps, absorbing = spec.eps, spec.absorbing
    mem, subs = p.membership, p.subgraphs
    fm = {v: r for v, r in full.items() if r != 0.0}
    um = {v: r for v, r in up.items() if r != 0.0}
    arrivals = run.arrivals
    if arrivals is not None:
        arrivals.extend(fm.items())
    cache: dict[int, float] = {}
    frontier = sorted(v for v in set(fm) | set(um) if abs(fm.get(v, 0.0)) >= eps or abs(um.get(v, 0.0)) >= eps)
    tracing = counter.trace is not None
    while frontier:
        counter.iterations += 1
        nxt: list[int] = []
        queued: set[int] = set()
        acts = 0

        def push(t, amt, pending):
            nt = pending.get(t, 0.0) + amt
            pending[t] = nt
            if t not in queued and abs(nt) >= eps:
                queued.add(t)
                nxt.append(t)

        for v in frontier:
            pv, qv = fm.get(v, 0.0), um.get(v, 0.0)
            take_p, take_q = abs(pv) >= eps, abs(qv) >= eps
            if not (take_p or take_q):
                continue
            emit = 0.0
            if take_p:
                fm[v] = 0.0
                x[v] += pv
                emit += pv
                counter.vertex_updates += 1
            if take_q:
                um[v] = 0.0
                emit += qv
            sid = mem.get(v)
            sub = subs[sid] if sid is not None else None
            cv = ctx(v)
            for t, w in out[v].items():
                if t in absorbing or (sub is not None and t in sub.vertices):
                    continue
                acts += 1
                if tracing:
                    counter.log("edge", v, t)
                amt = emit if w is None else gen(emit, w, cv)
                if arrivals is not None:
                    arrivals.append((t, amt))
                push(t, amt, fm)
            if take_p and sub is not None and v in sub.entries:
                cache[v] = cache.get(v, 0.0) + pv
                for b, w in _row(run, sid, v).items():
                    if b not in sub.boundary:
                        continue
                    acts += 1
                    if tracing:
                        counter.log("row", v, b)
                    amt = pv * w
                    x[b] += amt
                    push(b, amt, um)
        counter.add(acts)
        frontier = nxt
    for v, r in fm.items():
        if r != 0.0:
            run.m[v] = run.m.get(v, 0.0) + r
    for v, r in um.items():
        if r != 0.0:
            run.up[v] = run.up.get(v, 0.0) + r
    return cache


def assign_messages(run: LayphRun, cache: dict[int, float], rs: RevisionSet | None = None) -> None:
    """One hop from entry caches to internal vertices through the rows."""
    t0 = time.perf_counter()
    counter = run.counter
    counter.phase = "assign"
    spec = run.spec
    p, store = run.lg.partition, run.lg.store
    x, parent = run.x, run.parent
    tracing = counter.trace is not None
    by_sub: dict[int, list[int]] = defaultdict(list)
    for u in cache:
        sid = p.sub_of(u)
        if sid is not None:
            by_sub[sid].append(u)
    late = rs.late if rs is not None else {}
    for sid in set(by_sub) | set(late):
        need = p.subgraphs[sid].entries if sid in late else by_sub[sid]
        for u in sorted(need):
            _row(run, sid, u)
    counter.phase = "assign"

    def work(sid):
        sub = p.subgraphs[sid]
        rows = store.entry_rows(sid)
        internals = sub.internals
        acts = 0
        log_ = []
        for u in sorted(by_sub.get(sid, ())):
            cu = cache[u]
            for v, w in rows[u].items():
                if v not in internals:
                    continue
                acts += 1
                if tracing:
                    log_.append((u, v))
                if spec.is_min:
                    c = cu + w
                    if c < x[v]:
                        x[v], parent[v] = c, ("r", u)
                else:
                    x[v] += cu * w
        for v in sorted(late.get(sid, ())):
            for u, row in rows.items():
                w = row.get(v)
                if w is None or x[u] == INF or cache.get(u) == x[u]:
                    continue  # a cached entry at its final value was delivered above
                acts += 1
                if tracing:
                    log_.append((u, v))
                c = x[u] + w
                if c < x[v]:
                    x[v], parent[v] = c, ("r", u)
        return acts, log_

    for acts, log_ in _pmap(run.threads, work, sorted(set(by_sub) | set(late))):
        counter.add(acts, "assign")
        for u, v in log_:
            counter.log("assign", u, v)
    run.times["assign"] = (time.perf_counter() - t0) * 1e3


def finish_layered(run: LayphRun, mode: str = "layph") -> tuple[RunReport, Memo, LayeredGraph]:
    base = run.lg.base
    states = {v: run.x[v] for v in base.out}
    by_phase = run.counter.by_phase
    times = {ph: run.times.get(ph, 0.0) for ph in PHASES}
    rep = RunReport(
        algorithm=run.spec.name,
        mode=mode,
        states=states,
        activations={ph: by_phase.get(ph, 0) for ph in PHASES},
        phase_times_ms=times,
        iterations=run.counter.iterations,
        total_ms=sum(times.values()),
    )
    memo = Memo(run.x, run.m, run.parent if run.spec.is_min else {}, run.up)
    return rep, memo, run.lg


def run_incremental_layered(
    lg: LayeredGraph,
    memo: Memo,
    batch: UpdateBatch,
    counter: ActivationCounter | None = None,
    threads: int = 1,
) -> tuple[RunReport, Memo, LayeredGraph]:
    """Layer update, then upload, upper-layer iteration and assignment."""
    counter = counter if counter is not None else ActivationCounter()
    if lg.updates_since_build + len(batch) > lg.rebuild_threshold:
        return _rebuild(lg, batch, counter, threads)
    run = prepare_layered(lg, memo, batch, counter, threads)
    rs = deduce_revision(run)
    full, up = upload_messages(run, rs)
    cache = iterate_upper(run, full, up)
    assign_messages(run, cache, rs)
    return finish_layered(run)


def _rebuild(lg: LayeredGraph, batch: UpdateBatch, counter: ActivationCounter,
             threads: int) -> tuple[RunReport, Memo, LayeredGraph]:
    log.warning("accumulated %d updates exceed rebuild threshold %d; rebuilding layered graph",
                lg.updates_since_build + len(batch), lg.rebuild_threshold)
    t0 = time.perf_counter()
    counter.phase = "layer_update"
    g_new = apply_update_batch(lg.base, batch)
    lg2, _ = build_layph(g_new, lg.spec, lg.K, lg.threshold, lg.seed, counter, threads,
                         lg.rebuild_threshold)
    counter.phase = "upper_iter"
    sv = run_fixpoint(lg2.routed, lg.spec, initial_states(lg2.routed, lg.spec), counter)
    ms = (time.perf_counter() - t0) * 1e3
    rep = RunReport(
        algorithm=lg.spec.name,
        mode="layph",
        states={v: sv.x[v] for v in g_new.out},
        activations={ph: counter.by_phase.get(ph, 0) for ph in PHASES},
        phase_times_ms={ph: (ms if ph == "layer_update" else 0.0) for ph in PHASES},
        iterations=counter.iterations,
        total_ms=ms,
        notes=["rebuild: layered graph rebuilt and states recomputed from scratch"],
    )
    return rep, Memo.from_states(sv), lg2
