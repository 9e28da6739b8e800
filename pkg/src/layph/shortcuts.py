"""Shortcut rows: one-hop summaries of propagation inside a dense subgraph.

For an entry ``u`` of subgraph ``S`` the row ``rows[u][v]`` is the
aggregate of every message that reaches ``v`` when the unit message
(``0`` for min specs, ``1`` for sum specs) is injected at ``u`` and
propagated to a fixpoint using only ``S``'s internal edges.  Pushing an
entry message ``m`` through the row (``m + w`` or ``m * w``) then yields
what a full in-subgraph propagation would deliver.

Min specs keep, per entry, the local dependency parent of each vertex so
deleted edges can reset exactly the affected part of the row.  Sum specs
keep no extra memo: a row already is the consumed-total vector of its
entry, which is all an additive revision needs.
"""
from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .algorithms import INF, AlgorithmSpec
from .batch import ActivationCounter
from .graph import Graph
from .layering import DenseSubgraph

log = logging.getLogger(__name__)

SUM_TRUNCATION = 1e-9
# subgraphs up to this size revise sum rows with one dense solve instead of pushes
SOLVE_LIMIT = 1500


class ShortcutError(RuntimeError):
    pass


@dataclass
class ShortcutStore:
    """Rows and per-entry memo, partitioned by subgraph id."""

    spec_name: str
    rows: dict[int, dict[int, dict[int, float]]] = field(default_factory=dict)
    parents: dict[int, dict[int, dict[int, int]]] = field(default_factory=dict)
    # min specs: rows awaiting revision, with the internal edges deleted and
    # inserted since they were last brought up to date
    stale: dict[int, dict[int, tuple[set, set]]] = field(default_factory=dict)

    def row_count(self) -> int:
        return sum(len(r) for sub in self.rows.values() for r in sub.values())

    def entry_rows(self, sid: int) -> dict[int, dict[int, float]]:
        return self.rows.get(sid, {})

    def drop(self, sid: int) -> None:
        self.rows.pop(sid, None)
        self.parents.pop(sid, None)
        self.stale.pop(sid, None)

    def is_ready(self, sid: int, u: int) -> bool:
        return u in self.rows.get(sid, {}) and u not in self.stale.get(sid, {})

    def copy(self) -> "ShortcutStore":
        """Copy that can be revised without touching this store's rows."""
        return ShortcutStore(self.spec_name, dict(self.rows), dict(self.parents),
                             {sid: dict(t) for sid, t in self.stale.items()})

    def has_memo(self, sid: int, spec: AlgorithmSpec) -> bool:
        if not spec.is_min:
            return sid in self.rows
        return sid in self.parents and set(self.parents[sid]) == set(self.rows.get(sid, {}))


# ---- from-scratch computation ----------------------------------------------


def _min_row(g: Graph, vs: frozenset, u: int, spec: AlgorithmSpec, counter: ActivationCounter):
    """Dijkstra from the injected unit at ``u``; GE must be non-decreasing."""
    gen, ctx, out = spec.generate, g.ctx, g.out
    dist = {u: 0.0}
    parent: dict[int, int] = {}
    heap = [(0.0, u)]
    done: set[int] = set()
    acts = 0
    self_best = INF
    self_par = None
    while heap:
        d, a = heapq.heappop(heap)
        if a in done:
            continue
        done.add(a)
        ca = ctx(a)
        for b, w in out[a].items():
            if b not in vs:
                continue
            c = d if w is None else gen(d, w, ca)
            acts += 1
            if b == u:
                if c < self_best:
                    self_best, self_par = c, a
                continue
            if c < dist.get(b, INF):
                dist[b] = c
                parent[b] = a
                heapq.heappush(heap, (c, b))
    counter.add(acts, "shortcut")
    row = {v: dv for v, dv in dist.items() if v != u}
    if self_best < INF:
        row[u] = self_best
        parent[u] = self_par
    return row, parent


def _sum_row_push(g: Graph, vs: frozenset, u: int, spec: AlgorithmSpec, counter: ActivationCounter,
                  tol: float = SUM_TRUNCATION) -> dict[int, float]:
    """Residual push of a unit injection at ``u`` restricted to ``vs``."""
    recv = _push_sum(g, vs, {u: 1.0}, spec, counter, tol)
    recv[u] = recv.get(u, 0.0)  # the injection itself is not a received message
    return {v: r for v, r in recv.items() if abs(r) >= tol}


def _push_sum(g: Graph, vs, seeds: dict[int, float], spec: AlgorithmSpec,
              counter: ActivationCounter, tol: float, received: Optional[dict] = None) -> dict[int, float]:
    """Propagate ``seeds`` inside ``vs``; return messages received per vertex (seeds excluded)."""
    gen, ctx, out = spec.generate, g.ctx, g.out
    absorbing = spec.absorbing
    pending = dict(seeds)
    recv = received if received is not None else {}
    frontier = [v for v, p in pending.items() if abs(p) >= tol]
    acts = 0
    while frontier:
        nxt: list[int] = []
        queued: set[int] = set()
        for a in frontier:
            p = pending.get(a, 0.0)
            if abs(p) < tol:
                continue
            pending[a] = 0.0
            ca = ctx(a)
            for b, w in out[a].items():
                if b not in vs or b in absorbing:
                    continue
                acts += 1
                mb = p if w is None else gen(p, w, ca)
                recv[b] = recv.get(b, 0.0) + mb
                nb = pending.get(b, 0.0) + mb
                pending[b] = nb
                if b not in queued and abs(nb) >= tol:
                    queued.add(b)
                    nxt.append(b)
        frontier = nxt
    counter.add(acts, "shortcut")
    return recv


def _sum_rows_solve(g: Graph, sub: DenseSubgraph, entries: Iterable[int], spec: AlgorithmSpec,
                    counter: ActivationCounter) -> dict[int, dict[int, float]]:
    """Rows for all ``entries`` from one dense linear solve over the subgraph."""
    entries = sorted(entries)
    if not entries:
        return {}
    order = sorted(sub.vertices)
    idx = {v: i for i, v in enumerate(order)}
    n = len(order)
    P = np.zeros((n, n))
    acts = 0
    for a in order:
        ca = g.ctx(a)
        ia = idx[a]
        for b, w in g.out[a].items():
            ib = idx.get(b)
            if ib is None or b in spec.absorbing:
                continue
            acts += 1
            P[ib, ia] += 1.0 if w is None else spec.generate(1.0, w, ca)
    # a solve is charged one sweep of the subgraph's edges per right-hand side
    counter.add(acts * len(entries), "shortcut")
    rhs = np.zeros((n, len(entries)))
    for j, u in enumerate(entries):
        rhs[idx[u], j] = 1.0
    S = np.linalg.solve(np.eye(n) - P, rhs)
    rows: dict[int, dict[int, float]] = {}
    for j, u in enumerate(entries):
        col = S[:, j].copy()
        col[idx[u]] -= 1.0
        nz = np.nonzero(np.abs(col) >= SUM_TRUNCATION)[0]
        rows[u] = {order[i]: float(col[i]) for i in nz}
    return rows


def compute_shortcuts(
    g: Graph,
    sub: DenseSubgraph,
    spec: AlgorithmSpec,
    counter: ActivationCounter | None = None,
    entries: Optional[Iterable[int]] = None,
    method: str = "auto",
) -> tuple[dict[int, dict[int, float]], dict[int, dict[int, int]]]:
    """Rows (and min-spec parent tables) for the entries of ``sub``.

    ``method`` selects how sum rows are obtained: ``"push"`` runs the
    residual fixpoint entry by entry, ``"solve"`` solves the subgraph's
    linear system once; ``"auto"`` picks the solve.
    """
    counter = counter if counter is not None else ActivationCounter()
    entries = sorted(sub.entries if entries is None else entries)
    rows: dict[int, dict[int, float]] = {}
    parents: dict[int, dict[int, int]] = {}
    if spec.is_min:
        for u in entries:
            rows[u], parents[u] = _min_row(g, sub.vertices, u, spec, counter)
    elif method == "push":
        for u in entries:
            rows[u] = _sum_row_push(g, sub.vertices, u, spec, counter)
    else:
        rows = _sum_rows_solve(g, sub, entries, spec, counter)
    return rows, parents


def build_store(g: Graph, subgraphs: Iterable[DenseSubgraph], spec: AlgorithmSpec,
                counter: ActivationCounter | None = None) -> ShortcutStore:
    counter = counter if counter is not None else ActivationCounter()
    store = ShortcutStore(spec.name)
    for sub in subgraphs:
        rows, parents = compute_shortcuts(g, sub, spec, counter)
        store.rows[sub.id] = rows
        if spec.is_min:
            store.parents[sub.id] = parents
    return store


# ---- equivalence check -----------------------------------------------------


def one_hop(rows: dict[int, dict[int, float]], msgs: dict[int, float], spec: AlgorithmSpec) -> dict[int, float]:
    """Aggregate of what reaches each vertex when ``msgs`` sit on entries."""
    out: dict[int, float] = {}
    for u, m in msgs.items():
        if m == spec.bottom:
            continue
        for v, w in rows.get(u, {}).items():
            c = spec.extend(m, w)
            out[v] = spec.aggregate(out[v], c) if v in out else c
    return out


def local_fixpoint(g: Graph, vs: frozenset, msgs: dict[int, float], spec: AlgorithmSpec,
                   counter: ActivationCounter | None = None, tol: float = SUM_TRUNCATION) -> dict[int, float]:
    """Messages received per vertex when ``msgs`` propagate inside ``vs``."""
    counter = counter if counter is not None else ActivationCounter()
    if not spec.is_min:
        seeds = {u: m for u, m in msgs.items() if m != 0.0}
        return _push_sum(g, vs, seeds, spec, counter, tol)
    gen, ctx, out = spec.generate, g.ctx, g.out
    best = {u: m for u, m in msgs.items() if m < INF}
    recv: dict[int, float] = {}
    frontier = list(best)
    while frontier:
        nxt, queued = [], set()
        for a in frontier:
            xa = best[a]
            ca = ctx(a)
            for b, w in out[a].items():
                if b not in vs:
                    continue
                c = xa if w is None else gen(xa, w, ca)
                counter.add(1, "shortcut")
                if c < recv.get(b, INF):
                    recv[b] = c
                if c < best.get(b, INF):
                    best[b] = c
                    if b not in queued:
                        queued.add(b)
                        nxt.append(b)
        frontier = nxt
    return recv


def verify_shortcut_equivalence(
    g: Graph,
    sub: DenseSubgraph,
    spec: AlgorithmSpec,
    rows: dict[int, dict[int, float]],
    trials: int = 100,
    seed: int = 0,
    tol: float = 1e-6,
) -> tuple[bool, float]:
    """Compare one-hop row propagation with the in-subgraph fixpoint.

    Each trial draws a random message for every entry (some left at
    bottom).  Returns ``(passed, max deviation)``.
    """
    rng = random.Random(seed)
    worst = 0.0
    entries = sorted(sub.entries)
    for _ in range(trials):
        msgs = {}
        for u in entries:
            if rng.random() < 0.2:
                continue
            msgs[u] = float(rng.randint(0, 20)) if spec.is_min else rng.uniform(-1.0, 1.0)
        a = one_hop(rows, msgs, spec)
        b = local_fixpoint(g, sub.vertices, msgs, spec)
        for v in set(a) | set(b):
            x, y = a.get(v, spec.bottom), b.get(v, spec.bottom)
            if spec.is_min:
                if x != y:
                    return False, INF
            else:
                worst = max(worst, abs(x - y))
    return worst <= tol, worst


# ---- incremental maintenance -----------------------------------------------


def _local_out(g: Graph, vs: frozenset, a: int) -> dict[int, float]:
    return {b: w for b, w in g.out.get(a, {}).items() if b in vs}


def local_edge_changes(g_old: Graph, g_new: Graph, old: DenseSubgraph, new: DenseSubgraph,
                       candidates: Iterable[int], uses_ctx: bool) -> tuple[dict, dict, set]:
    """Internal-edge differences of a subgraph, looking only at ``candidates``.

    Returns ``(deleted, inserted, emitters)`` where ``emitters`` are
    vertices whose internal out-edges or sender context changed.
    """
    deleted: dict[tuple[int, int], float] = {}
    inserted: dict[tuple[int, int], float] = {}
    emitters: set[int] = set()
    for a in candidates:
        if a not in old.vertices:
            continue
        ro = _local_out(g_old, old.vertices, a)
        rn = _local_out(g_new, new.vertices, a) if a in new.vertices else {}
        changed = False
        for b, w in ro.items():
            if b not in rn or rn[b] != w:
                deleted[(a, b)] = w
                changed = True
        for b, w in rn.items():
            if b not in ro or ro[b] != w:
                inserted[(a, b)] = w
                changed = True
        if not changed and uses_ctx and rn and a in new.vertices and g_old.ctx(a) != g_new.ctx(a):
            changed = True
        if changed:
            emitters.add(a)
    return deleted, inserted, emitters


def update_shortcuts(
    store: ShortcutStore,
    g_old: Graph,
    g_new: Graph,
    old: DenseSubgraph,
    new: DenseSubgraph,
    spec: AlgorithmSpec,
    candidates: Iterable[int],
    counter: ActivationCounter | None = None,
    eager: bool = True,
) -> bool:
    """Bring ``store``'s rows for ``old.id`` in line with ``new``.

    Rows of vertices that stopped being entries are dropped, new entries
    get fresh rows, and surviving rows are revised from the internal edge
    changes found among ``candidates``.  With ``eager=False`` both the
    fresh rows and (min specs) the revisions wait for :func:`ensure_row`.  Returns True when the
    internal edges changed.  A missing memo falls back to full
    recomputation.
    """
    counter = counter if counter is not None else ActivationCounter()
    sid = new.id
    deleted, inserted, emitters = local_edge_changes(g_old, g_new, old, new, candidates, spec.uses_ctx)
    changed = bool(emitters)
    if not store.has_memo(sid, spec):
        log.info("shortcut memo missing for subgraph %d; recomputing all rows", sid)
        rows, parents = compute_shortcuts(g_new, new, spec, counter)
        store.rows[sid] = rows
        store.stale.pop(sid, None)
        if spec.is_min:
            store.parents[sid] = parents
        return changed
    rows = store.rows[sid]
    parents = store.parents.get(sid, {})
    stale = store.stale.get(sid, {})
    for u in list(rows):
        if u not in new.entries:
            del rows[u]
            parents.pop(u, None)
            stale.pop(u, None)
    if changed and rows:
        if spec.is_min and not eager:
            for u in rows:
                d, i = stale.get(u, (frozenset(), frozenset()))
                stale[u] = (d | set(deleted), i | set(inserted))
        elif spec.is_min:
            for u in list(stale):
                _settle_row(store, g_new, new, u, spec, counter)
            for u in rows:
                rows[u], parents[u] = _revise_min_row(g_new, new.vertices, u, rows[u], parents[u],
                                                      deleted, inserted, spec, counter)
        else:
            _revise_sum_rows(g_old, g_new, old, new, rows, emitters, spec, counter)
    fresh = sorted(new.entries - set(rows)) if eager else []
    if fresh:
        r2, p2 = compute_shortcuts(g_new, new, spec, counter, entries=fresh)
        rows.update(r2)
        if spec.is_min:
            parents.update(p2)
    store.rows[sid] = rows
    if stale:
        store.stale[sid] = stale
    else:
        store.stale.pop(sid, None)
    if spec.is_min:
        store.parents[sid] = parents
    return changed


def ensure_row(store: ShortcutStore, g: Graph, sub: DenseSubgraph, u: int, spec: AlgorithmSpec,
               counter: ActivationCounter) -> dict[int, float]:
    """Row of entry ``u``, computed or revised on first use when left pending."""
    rows = store.rows.setdefault(sub.id, {})
    row = rows.get(u)
    if row is not None and u in store.stale.get(sub.id, {}):
        row = _settle_row(store, g, sub, u, spec, counter)
    if row is None:
        r, p = compute_shortcuts(g, sub, spec, counter, entries=[u])
        row = rows[u] = r[u]
        if spec.is_min:
            store.parents.setdefault(sub.id, {})[u] = p[u]
    return row


def _settle_row(store: ShortcutStore, g: Graph, sub: DenseSubgraph, u: int, spec: AlgorithmSpec,
                counter: ActivationCounter) -> dict[int, float]:
    sid, vs = sub.id, sub.vertices
    stale = store.stale[sid]
    dkeys, ikeys = stale.pop(u)
    if not stale:
        del store.stale[sid]
    deleted = {e: None for e in dkeys}
    inserted = {(a, b): g.out[a][b] for (a, b) in ikeys
                if a in vs and b in vs and b in g.out.get(a, {})}
    row, par = _revise_min_row(g, vs, u, store.rows[sid][u], store.parents[sid][u],
                               deleted, inserted, spec, counter)
    # fresh per-subgraph tables, since an unchanged subgraph shares them with older stores
    store.rows[sid] = {**store.rows[sid], u: row}
    store.parents[sid] = {**store.parents[sid], u: par}
    return row


def settle_rows(store: ShortcutStore, g: Graph, subgraphs: dict[int, DenseSubgraph], spec: AlgorithmSpec,
                counter: ActivationCounter | None = None) -> None:
    """Bring every pending row up to date."""
    counter = counter if counter is not None else ActivationCounter()
    for sid in sorted(store.stale):
        for u in sorted(store.stale.get(sid, {})):
            _settle_row(store, g, subgraphs[sid], u, spec, counter)


def _revise_min_row(g: Graph, vs: frozenset, u: int, row: dict, parent: dict,
                    deleted: dict, inserted: dict, spec: AlgorithmSpec, counter: ActivationCounter):
    """Reset the local subtree below deleted parent edges, then re-relax."""
    gen, ctx, out, inn = spec.generate, g.ctx, g.out, g.inn
    dist = {v: d for v, d in row.items() if v != u}
    dist[u] = 0.0
    par = {v: p for v, p in parent.items() if v != u}
    self_dirty = False
    children: dict[int, list[int]] = {}
    for v, p in par.items():
        children.setdefault(p, []).append(v)
    reset: set[int] = set()
    stack = []
    for (a, b) in deleted:
        if b == u:
            self_dirty = True
        elif par.get(b) == a or b not in vs:
            stack.append(b)
    for b in [b for b in dist if b not in vs]:
        stack.append(b)
    while stack:
        v = stack.pop()
        if v in reset or v == u:
            continue
        reset.add(v)
        stack.extend(children.get(v, ()))
    for v in reset:
        dist.pop(v, None)
        par.pop(v, None)
    acts = 0
    heap: list[tuple[float, int]] = []
    for v in reset:
        if v not in vs:
            continue
        best, bp = INF, None
        for a, w in inn[v].items():
            if a in vs and a not in reset and a in dist:
                c = dist[a] if w is None else gen(dist[a], w, ctx(a))
                acts += 1
                if c < best:
                    best, bp = c, a
        if bp is not None:
            dist[v] = best
            par[v] = bp
            heapq.heappush(heap, (best, v))
    for (a, b), w in inserted.items():
        if b == u:
            self_dirty = True
            continue
        if a in reset or a not in dist:
            continue
        c = dist[a] if w is None else gen(dist[a], w, ctx(a))
        acts += 1
        if c < dist.get(b, INF):
            dist[b] = c
            par[b] = a
            heapq.heappush(heap, (c, b))
    # any vertex whose value dropped re-relaxes its out-edges in Dijkstra order
    while heap:
        d, a = heapq.heappop(heap)
        if dist.get(a, INF) != d:
            continue
        ca = ctx(a)
        for b, w in out[a].items():
            if b not in vs:
                continue
            c = d if w is None else gen(d, w, ca)
            acts += 1
            if b == u:
                continue
            if c < dist.get(b, INF):
                dist[b] = c
                par[b] = a
                heapq.heappush(heap, (c, b))
    # the self row is the best way back to u; rescan its in-edges when it may have moved
    old_self = row.get(u, INF)
    if self_dirty or reset or inserted or parent.get(u) in reset:
        best, bp = INF, None
        for a, w in inn[u].items():
            if a in vs and a in dist:
                c = dist[a] if w is None else gen(dist[a], w, ctx(a))
                acts += 1
                if c < best:
                    best, bp = c, a
        new_self, self_par = best, bp
    else:
        new_self, self_par = old_self, parent.get(u)
    counter.add(acts, "shortcut")
    del dist[u]
    if new_self < INF:
        dist[u] = new_self
        par[u] = self_par
    return dist, par


def _revise_sum_rows(g_old: Graph, g_new: Graph, old: DenseSubgraph, new: DenseSubgraph,
                     rows: dict[int, dict[int, float]], emitters: set[int], spec: AlgorithmSpec,
                     counter: ActivationCounter) -> None:
    """Additive revision shared by all rows of the subgraph.

    For a changed emitter ``a`` the unit revision ``r_a`` (new unit
    emission minus old) is propagated once on the new subgraph, giving
    ``q_a``.  Every row then moves by ``s_u[a] * q_a`` where ``s_u[a]``
    is the total ``a`` consumed in ``u``'s old row run.
    """
    # consumed totals of the old runs, taken before any row moves
    consumed = {u: {a: r.get(a, 0.0) + (1.0 if a == u else 0.0) for a in emitters} for u, r in rows.items()}
    if len(new.vertices) <= SOLVE_LIMIT:
        _revise_sum_rows_solve(g_old, g_new, old, new, rows, sorted(emitters), consumed, spec, counter)
        return
    for a in sorted(emitters):
        scale = max((abs(c[a]) for c in consumed.values()), default=0.0)
        if scale < SUM_TRUNCATION:
            continue
        r_a, acts = _unit_revision(g_old, g_new, old, new, a, spec)
        counter.add(acts, "shortcut")
        tol = SUM_TRUNCATION / max(1.0, scale)
        q = _push_sum(g_new, new.vertices, r_a, spec, counter, tol, received=dict(r_a))
        ext = 0
        for u, row in rows.items():
            s = consumed[u][a]
            if s == 0.0:
                continue
            for v, qv in q.items():
                row[v] = row.get(v, 0.0) + s * qv
                ext += 1
        counter.add(ext, "shortcut")
    _prune_rows(rows, new)


def _prune_rows(rows: dict, new: DenseSubgraph) -> None:
    for u, row in rows.items():
        for v in [v for v, w in row.items() if abs(w) < SUM_TRUNCATION or v not in new.vertices]:
            del row[v]


def _unit_revision(g_old: Graph, g_new: Graph, old: DenseSubgraph, new: DenseSubgraph, a: int,
                   spec: AlgorithmSpec) -> tuple[dict[int, float], int]:
    """New unit emission of ``a`` inside the subgraph minus the old one."""
    gen, absorbing = spec.generate, spec.absorbing
    r_a: dict[int, float] = {}
    acts = 0
    ca_old = g_old.ctx(a)
    for b, w in g_old.out.get(a, {}).items():
        if b in old.vertices and b in new.vertices and b not in absorbing:
            acts += 1
            r_a[b] = r_a.get(b, 0.0) - (1.0 if w is None else gen(1.0, w, ca_old))
    if a in new.vertices:
        ca_new = g_new.ctx(a)
        for b, w in g_new.out.get(a, {}).items():
            if b in new.vertices and b not in absorbing:
                acts += 1
                r_a[b] = r_a.get(b, 0.0) + (1.0 if w is None else gen(1.0, w, ca_new))
    return r_a, acts


def _revise_sum_rows_solve(g_old: Graph, g_new: Graph, old: DenseSubgraph, new: DenseSubgraph,
                           rows: dict[int, dict[int, float]], emitters: list[int], consumed: dict,
                           spec: AlgorithmSpec, counter: ActivationCounter) -> None:
    """Same revision as the push variant, all ``q_a`` from one dense solve."""
    live = [a for a in emitters if max((abs(c[a]) for c in consumed.values()), default=0.0) >= SUM_TRUNCATION]
    if not live:
        _prune_rows(rows, new)
        return
    order = sorted(new.vertices)
    idx = {v: i for i, v in enumerate(order)}
    n = len(order)
    P = np.zeros((n, n))
    edges = 0
    for a in order:
        ca = g_new.ctx(a)
        for b, w in g_new.out[a].items():
            ib = idx.get(b)
            if ib is None or b in spec.absorbing:
                continue
            edges += 1
            P[ib, idx[a]] += 1.0 if w is None else spec.generate(1.0, w, ca)
    R = np.zeros((n, len(live)))
    acts = 0
    for j, a in enumerate(live):
        r_a, k = _unit_revision(g_old, g_new, old, new, a, spec)
        acts += k
        for b, val in r_a.items():
            R[idx[b], j] += val
    counter.add(acts + edges * len(live), "shortcut")
    Q = np.linalg.solve(np.eye(n) - P, R)
    Q[np.abs(Q) < SUM_TRUNCATION * 1e-3] = 0.0
    nnz = np.count_nonzero(Q, axis=0)
    ext = 0
    for u, row in rows.items():
        s = np.array([consumed[u][a] for a in live])
        if not s.any():
            continue
        ext += int(nnz[s != 0.0].sum())
        delta = Q @ s
        for i in np.nonzero(delta)[0]:
            v = order[i]
            row[v] = row.get(v, 0.0) + float(delta[i])
    counter.add(ext, "shortcut")
    _prune_rows(rows, new)
