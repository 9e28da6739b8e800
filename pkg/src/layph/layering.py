"""Dense-subgraph discovery, vertex replication and partition refresh.

The layered view splits the vertices into disjoint dense subgraphs plus
outliers.  Inside a subgraph a vertex is an *entry* when some in-edge
comes from outside, an *exit* when some out-edge leaves, and *internal*
otherwise.  Entries, exits and outliers form the upper layer.

Replication runs on top of a partition: when an external vertex ``h``
has more than ``threshold`` edges into (or out of) one subgraph, a proxy
``p`` joins the subgraph, those edges are rerouted through ``p`` and a
``None``-weight identity link joins ``h`` and ``p``.  The result is a
:class:`RoutedGraph` whose proxies borrow their host's sender context,
so every spec computes the same host states as on the original graph.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .graph import (
    DeleteEdge,
    DeleteVertex,
    Graph,
    InsertEdge,
    InsertVertex,
    SenderContext,
    UnitUpdate,
    UpdateBatch,
    apply_update_batch,
)

INTO = "into"
OUT_OF = "out"

DEFAULT_REPLICATION_THRESHOLD = 2
DEFAULT_REBUILD_THRESHOLD = 100_000


def default_k(n: int) -> int:
    """Subgraph size cap: 0.02% of ``n`` clamped to ``[16, 1e5]``."""
    return int(min(100_000, max(16, round(n * 0.0002))))


# ---- domain types ----------------------------------------------------------


@dataclass(frozen=True)
class DenseSubgraph:
    id: int
    vertices: frozenset
    entries: frozenset
    exits: frozenset
    edge_count: int

    @property
    def internals(self) -> frozenset:
        return self.vertices - self.entries - self.exits

    @property
    def boundary(self) -> frozenset:
        return self.entries | self.exits

    @property
    def is_dense(self) -> bool:
        return len(self.entries) * len(self.exits) < self.edge_count


@dataclass(frozen=True)
class ProxyRecord:
    host: int
    proxy: int
    subgraph: int
    direction: str
    rerouted_edges: tuple  # original (u, v) pairs now routed via the proxy


@dataclass
class Partition:
    subgraphs: dict[int, DenseSubgraph] = field(default_factory=dict)
    membership: dict[int, int] = field(default_factory=dict)
    pinned: frozenset = frozenset()

    def sub_of(self, v: int) -> Optional[int]:
        return self.membership.get(v)

    def outliers(self, g: Graph) -> set[int]:
        return {v for v in g.vertices() if v not in self.membership}

    def role(self, v: int) -> str:
        sid = self.membership.get(v)
        if sid is None:
            return "outlier"
        s = self.subgraphs[sid]
        if v in s.entries:
            return "entry" if v not in s.exits else "entry+exit"
        return "exit" if v in s.exits else "internal"

    def is_upper(self, v: int) -> bool:
        sid = self.membership.get(v)
        if sid is None:
            return True
        s = self.subgraphs[sid]
        return v in s.entries or v in s.exits

    def copy(self) -> "Partition":
        return Partition(dict(self.subgraphs), dict(self.membership), self.pinned)


class RoutedGraph(Graph):
    """Graph whose rerouted edges pass through proxy vertices.

    ``base`` is the original graph; ``host[p]`` is the original vertex a
    proxy stands for; ``reroute[(u, v)]`` maps an original edge to the
    routed edge carrying its weight.
    """

    def __init__(self, g: Graph, base: Graph, host: dict[int, int],
                 reroute: dict[tuple[int, int], tuple[int, int]],
                 records: dict[int, ProxyRecord]) -> None:
        super().__init__(g.out, g.inn, base.weighted)
        self.base = base
        self.host = host
        self.reroute = reroute
        self.records = records

    def ctx(self, u: int) -> SenderContext:
        return self.base.ctx(self.host.get(u, u))

    def is_proxy(self, v: int) -> bool:
        return v in self.host


def plain_routed(g: Graph) -> RoutedGraph:
    return RoutedGraph(g, g, {}, {}, {})


# ---- roles and density -----------------------------------------------------


def compute_subgraph(g: Graph, sid: int, vertices: Iterable[int], pinned: Iterable[int] = ()) -> DenseSubgraph:
    """Entry/exit sets and internal edge count of ``vertices`` in ``g``.

    Members of ``pinned`` are always entries (a spec's source must be
    reachable through shortcuts).
    """
    vs = frozenset(vertices)
    entries, exits = set(), set()
    e = 0
    for v in vs:
        for t in g.out[v]:
            if t in vs:
                e += 1
            else:
                exits.add(v)
        for s in g.inn[v]:
            if s not in vs:
                entries.add(v)
                break
    entries.update(p for p in pinned if p in vs)
    return DenseSubgraph(sid, vs, frozenset(entries), frozenset(exits), e)


# ---- community detection ---------------------------------------------------


def capped_louvain(g: Graph, K: int, seed: int = 0, max_levels: int = 20) -> list[set[int]]:
    """Louvain modularity optimisation on the undirected projection.

    Every edge contributes unit weight regardless of direction; self
    loops are ignored.  A node may only join a community whose total
    vertex count stays at most ``K``.  Deterministic for a given seed.
    """
    rng = random.Random(seed)
    adj: dict[int, dict[int, float]] = {v: {} for v in g.vertices()}
    for u, row in g.out.items():
        for v in row:
            if u == v:
                continue
            adj[u][v] = adj[u].get(v, 0.0) + 1.0
            adj[v][u] = adj[v].get(u, 0.0) + 1.0
    members: dict[int, list[int]] = {v: [v] for v in adj}
    for _ in range(max_levels):
        comm, moved = _louvain_level(adj, members, K, rng)
        if not moved:
            break
        # aggregate communities into super-nodes
        groups: dict[int, list[int]] = defaultdict(list)
        for n, c in comm.items():
            groups[c].append(n)
        if len(groups) == len(adj):
            break
        new_members: dict[int, list[int]] = {}
        new_adj: dict[int, dict[int, float]] = {}
        for c, nodes in groups.items():
            new_members[c] = [v for n in nodes for v in members[n]]
            new_adj[c] = {}
        for n, row in adj.items():
            cn = comm[n]
            for t, w in row.items():
                ct = comm[t]
                if ct != cn:
                    new_adj[cn][ct] = new_adj[cn].get(ct, 0.0) + w
                else:
                    new_adj[cn][cn] = new_adj[cn].get(cn, 0.0) + w
        adj, members = new_adj, new_members
    return [set(m) for _, m in sorted(members.items())]


def _louvain_level(adj, members, K, rng) -> tuple[dict[int, int], bool]:
    degree = {n: sum(row.values()) for n, row in adj.items()}
    two_m = sum(degree.values())
    comm = {n: n for n in adj}
    if two_m == 0:
        return comm, False
    tot = dict(degree)
    size = {n: len(members[n]) for n in adj}
    order = list(adj)
    rng.shuffle(order)
    moved_any = False
    for _ in range(50):
        moved = 0
        for n in order:
            cn = comm[n]
            kn = degree[n]
            sn = len(members[n])
            links: dict[int, float] = defaultdict(float)
            for t, w in adj[n].items():
                if t != n:
                    links[comm[t]] += w
            tot[cn] -= kn
            size[cn] -= sn
            best, best_gain = cn, links.get(cn, 0.0) - tot[cn] * kn / two_m
            for c, kc in links.items():
                if c == cn or size[c] + sn > K:
                    continue
                gain = kc - tot[c] * kn / two_m
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            comm[n] = best
            tot[best] += kn
            size[best] += sn
            if best != cn:
                moved += 1
        if not moved:
            break
        moved_any = True
    return comm, moved_any


def discover_subgraphs(g: Graph, K: int, seed: int = 0, pinned: Iterable[int] = ()) -> tuple[Partition, list[frozenset]]:
    """Capped Louvain followed by the density filter.

    Returns the partition of retained subgraphs and the list of rejected
    candidate communities (size >= 2 but failing the density test),
    which replication may still rescue.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    pinned = frozenset(pinned)
    p = Partition(pinned=pinned)
    rejected: list[frozenset] = []
    for comm in capped_louvain(g, K, seed):
        if len(comm) < 2:
            continue
        sid = len(p.subgraphs) + len(rejected)
        sub = compute_subgraph(g, sid, comm, pinned)
        if sub.is_dense:
            p.subgraphs[sid] = sub
            for v in comm:
                p.membership[v] = sid
        else:
            rejected.append(frozenset(comm))
    return _renumber(p), rejected


def _renumber(p: Partition) -> Partition:
    out = Partition(pinned=p.pinned)
    for new_id, sid in enumerate(sorted(p.subgraphs)):
        s = p.subgraphs[sid]
        out.subgraphs[new_id] = DenseSubgraph(new_id, s.vertices, s.entries, s.exits, s.edge_count)
        for v in s.vertices:
            out.membership[v] = new_id
    return out


# ---- replication -----------------------------------------------------------


def _plan_proxies(g: Graph, comm: frozenset, threshold: float, room: int, proxies) -> list[tuple[int, str, list]]:
    """Hosts worth replicating into ``comm``: Into first, then Out-of.

    Links and edges already routed through a proxy are never rerouted.
    """
    plans: list[tuple[int, str, list]] = []
    into: dict[int, list] = defaultdict(list)
    for v in comm:
        for s, w in g.inn[v].items():
            if s not in comm and w is not None and s not in proxies:
                into[s].append((s, v))
    taken: set = set()
    for h in sorted(into):
        es = into[h]
        if len(es) > threshold and len(plans) < room:
            plans.append((h, INTO, sorted(es)))
            taken.update(es)
    outof: dict[int, list] = defaultdict(list)
    for v in comm:
        for t, w in g.out[v].items():
            if t not in comm and (v, t) not in taken and w is not None and t not in proxies:
                outof[t].append((v, t))
    for h in sorted(outof):
        es = outof[h]
        if len(es) > threshold and len(plans) < room:
            plans.append((h, OUT_OF, sorted(es)))
    return plans


def replicate_vertices(
    g: Graph,
    p: Partition,
    threshold: float = DEFAULT_REPLICATION_THRESHOLD,
    K: Optional[int] = None,
    rejected: Iterable[frozenset] = (),
) -> tuple[Partition, list[ProxyRecord], RoutedGraph]:
    """Add proxies for external vertices with more than ``threshold`` edges.

    Candidates are the retained subgraphs followed by ``rejected``
    communities, in that order; a candidate is kept when it passes the
    density test after replication.  Proxies never push a subgraph above
    ``K`` vertices.  Proxy ids are negative.
    """
    K = K if K is not None else max((len(s.vertices) for s in p.subgraphs.values()), default=2)
    cands = [p.subgraphs[sid].vertices for sid in sorted(p.subgraphs)] + list(rejected)
    out = {u: dict(r) for u, r in g.out.items()}
    inn = {v: dict(r) for v, r in g.inn.items()}
    host: dict[int, int] = {}
    reroute: dict[tuple[int, int], tuple[int, int]] = {}
    records: dict[int, ProxyRecord] = {}
    result = Partition(pinned=p.pinned)
    cur = Graph(out, inn, g.weighted)  # shares the dicts mutated below
    next_proxy = -1
    for comm in cands:
        plans = (_plan_proxies(cur, comm, threshold, K - len(comm), host)
                 if threshold != float("inf") else [])
        # evaluate density on a scratch copy of the local neighbourhood
        sid = len(result.subgraphs)
        if plans:
            trial_ids = list(range(next_proxy, next_proxy - len(plans), -1))
            view = _local_view(cur, comm, plans, trial_ids)
            sub = compute_subgraph(view, sid, set(comm) | set(trial_ids), p.pinned)
        else:
            sub = compute_subgraph(cur, sid, comm, p.pinned)
        if not sub.is_dense:
            continue
        for (h, direction, es), pid in zip(plans, range(next_proxy, next_proxy - len(plans), -1)):
            out[pid], inn[pid] = {}, {}
            host[pid] = h
            for (a, b) in es:
                w = out[a].pop(b)
                del inn[b][a]
                if direction == INTO:
                    out[pid][b] = w
                    inn[b][pid] = w
                    reroute[(a, b)] = (pid, b)
                else:
                    out[a][pid] = w
                    inn[pid][a] = w
                    reroute[(a, b)] = (a, pid)
            if direction == INTO:
                out[h][pid] = None
                inn[pid][h] = None
            else:
                out[pid][h] = None
                inn[h][pid] = None
            records[pid] = ProxyRecord(h, pid, sid, direction, tuple(es))
        next_proxy -= len(plans)
        vs = set(comm) | {r.proxy for r in records.values() if r.subgraph == sid}
        result.subgraphs[sid] = DenseSubgraph(sid, frozenset(vs), sub.entries, sub.exits, sub.edge_count)
        for v in vs:
            result.membership[v] = sid
    routed = RoutedGraph(Graph(out, inn, g.weighted), g, host, reroute, records)
    # roles recomputed on the routed graph as the source of truth
    for sid, s in list(result.subgraphs.items()):
        result.subgraphs[sid] = compute_subgraph(routed, sid, s.vertices, p.pinned)
    return result, list(records.values()), routed


def _local_view(g: Graph, comm: frozenset, plans, pids) -> Graph:
    """Tiny graph with just enough adjacency to compute ``comm``'s roles after rerouting."""
    vs = set(comm)
    out: dict[int, dict] = {}
    inn: dict[int, dict] = {}
    for v in vs:
        out[v] = dict(g.out[v])
        inn[v] = dict(g.inn[v])
    for (h, direction, es), pid in zip(plans, pids):
        out[pid], inn[pid] = {}, {}
        for (a, b) in es:
            if direction == INTO:
                del inn[b][a]
                inn[b][pid] = 1.0
                out[pid][b] = 1.0
            else:
                del out[a][b]
                out[a][pid] = 1.0
                inn[pid][a] = 1.0
        if direction == INTO:
            inn[pid][h] = None
        else:
            out[pid][h] = None
    return Graph(out, inn)


def preprocess_partition(
    g: Graph,
    K: int,
    threshold: float = DEFAULT_REPLICATION_THRESHOLD,
    seed: int = 0,
    pinned: Iterable[int] = (),
) -> tuple[Partition, RoutedGraph]:
    """Discovery, then replication, then a final density pass."""
    p, rejected = discover_subgraphs(g, K, seed, pinned)
    p2, _, routed = replicate_vertices(g, p, threshold, K, rejected)
    return p2, routed


# ---- routed updates and refresh --------------------------------------------


def route_batch(rg: RoutedGraph, batch: UpdateBatch) -> tuple[list[UnitUpdate], set[int]]:
    """Translate an original-graph batch into routed-graph unit updates.

    Returns the routed updates and the proxies removed because their
    host died.  Rerouted edges keep their route when re-inserted.
    """
    base = rg.base
    cur = base
    ups: list[UnitUpdate] = []
    dead_proxies: set[int] = set()
    by_host: dict[int, list[int]] = defaultdict(list)
    for pid, h in rg.host.items():
        by_host[h].append(pid)
    for up in batch:
        if isinstance(up, InsertEdge):
            a, b = rg.reroute.get((up.u, up.v), (up.u, up.v))
            ups.append(InsertEdge(a, b, up.w))
        elif isinstance(up, DeleteEdge):
            a, b = rg.reroute.get((up.u, up.v), (up.u, up.v))
            ups.append(DeleteEdge(a, b))
        elif isinstance(up, InsertVertex):
            ups.append(up)
        elif isinstance(up, DeleteVertex):
            v = up.v
            if v in cur.out:
                for t in list(cur.out[v]):
                    a, b = rg.reroute.get((v, t), (v, t))
                    ups.append(DeleteEdge(a, b))
                for s in list(cur.inn[v]):
                    if s != v:
                        a, b = rg.reroute.get((s, v), (s, v))
                        ups.append(DeleteEdge(a, b))
            for pid in by_host.get(v, ()):
                if pid not in dead_proxies:
                    dead_proxies.add(pid)
                    ups.append(DeleteVertex(pid))
            ups.append(up)
        cur = apply_update_batch(cur, (up,))
    return ups, dead_proxies


def apply_routed(rg: RoutedGraph, batch: UpdateBatch) -> tuple[RoutedGraph, list[UnitUpdate]]:
    """Apply ``batch`` to both the original and the routed graph."""
    base_new = apply_update_batch(rg.base, batch)
    ups, dead = route_batch(rg, batch)
    g_new = apply_update_batch(Graph(rg.out, rg.inn, rg.weighted), ups)
    if dead:
        host = {p: h for p, h in rg.host.items() if p not in dead}
        records = {p: r for p, r in rg.records.items() if p not in dead}
        reroute = {e: r for e, r in rg.reroute.items() if r[0] not in dead and r[1] not in dead}
    else:
        host, records, reroute = rg.host, rg.records, rg.reroute
    return RoutedGraph(g_new, base_new, host, reroute, records), ups


@dataclass
class RefreshResult:
    partition: Partition
    reshaped: set[int]  # surviving subgraphs whose vertex set or roles changed
    dissolved: dict[int, DenseSubgraph]  # old subgraphs turned into outliers


def refresh_partition(
    g_new: Graph,
    p_old: Partition,
    touched: Iterable[int],
    died: Iterable[int] = (),
) -> RefreshResult:
    """Patch roles of subgraphs containing ``touched`` vertices.

    Dead vertices leave their subgraph; newly born vertices stay
    outliers.  A subgraph that no longer passes the density test (or
    shrinks below two vertices) is dissolved into outliers.  Subgraph
    ids are stable.
    """
    died = set(died)
    p = p_old.copy()
    affected: set[int] = set()
    for v in set(touched) | died:
        sid = p_old.membership.get(v)
        if sid is not None:
            affected.add(sid)
    reshaped: set[int] = set()
    dissolved: dict[int, DenseSubgraph] = {}
    for sid in sorted(affected):
        old = p_old.subgraphs[sid]
        vs = old.vertices - died
        for v in old.vertices & died:
            p.membership.pop(v, None)
        sub = compute_subgraph(g_new, sid, vs, p.pinned) if len(vs) >= 2 else None
        if sub is None or not sub.is_dense:
            dissolved[sid] = old
            del p.subgraphs[sid]
            for v in vs:
                p.membership.pop(v, None)
            continue
        if sub != old:
            reshaped.add(sid)
        p.subgraphs[sid] = sub
    return RefreshResult(p, reshaped, dissolved)


def partition_from_groups(g: Graph, groups: Iterable[Iterable[int]], pinned: Iterable[int] = ()) -> Partition:
    """Partition with the given vertex groups as subgraphs, density unchecked."""
    pinned = frozenset(pinned)
    p = Partition(pinned=pinned)
    for sid, grp in enumerate(groups):
        sub = compute_subgraph(g, sid, grp, pinned)
        p.subgraphs[sid] = sub
        for v in sub.vertices:
            p.membership[v] = sid
    return p


def rebuild_routed(g: Graph, records: Iterable[ProxyRecord]) -> RoutedGraph:
    """Re-apply stored proxy records to the original graph ``g``."""
    out = {u: dict(r) for u, r in g.out.items()}
    inn = {v: dict(r) for v, r in g.inn.items()}
    host: dict[int, int] = {}
    reroute: dict[tuple[int, int], tuple[int, int]] = {}
    recs: dict[int, ProxyRecord] = {}
    for r in sorted(records, key=lambda r: -r.proxy):
        pid, h = r.proxy, r.host
        if pid in out or h not in out:
            raise ValueError(f"proxy record {pid} does not fit the graph")
        out[pid], inn[pid] = {}, {}
        for (a, b) in r.rerouted_edges:
            if b not in out.get(a, {}):
                raise ValueError(f"proxy {pid} reroutes missing edge ({a}, {b})")
            w = out[a].pop(b)
            del inn[b][a]
            if r.direction == INTO:
                out[pid][b] = w
                inn[b][pid] = w
                reroute[(a, b)] = (pid, b)
            else:
                out[a][pid] = w
                inn[pid][a] = w
                reroute[(a, b)] = (a, pid)
        if r.direction == INTO:
            out[h][pid] = None
            inn[pid][h] = None
        else:
            out[pid][h] = None
            inn[h][pid] = None
        host[pid] = h
        recs[pid] = r
    return RoutedGraph(Graph(out, inn, g.weighted), g, host, reroute, recs)
