"""Directed weighted graph, update batches and edge-list ingestion.

A :class:`Graph` is treated as immutable once built.  Applying an
:class:`UpdateBatch` produces a fresh graph that shares untouched
adjacency rows with its parent (copy-on-write), so callers can keep the
old and the new graph side by side when deducing revision messages.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Union


class GraphFormatError(ValueError):
    """Raised for malformed edge-list or update files."""


class UpdateError(ValueError):
    """Raised when a unit update cannot be applied in sequence."""


class SenderContext(NamedTuple):
    out_degree: int
    out_weight: float


_EMPTY_CTX = SenderContext(0, 0.0)


class Graph:
    """Adjacency-map digraph with a mirrored in-adjacency.

    ``out[u][v]`` and ``inn[v][u]`` both hold the weight of edge (u, v).
    A weight of ``None`` marks an identity link (GE passes the message
    through unchanged); only proxy-routed graphs contain such links.
    Vertex ids are plain ints; every live vertex is a key of ``out``.
    Parallel edges are not representable: inserting an existing (u, v)
    replaces its weight.
    """

    def __init__(
        self,
        out: dict[int, dict[int, float]] | None = None,
        inn: dict[int, dict[int, float]] | None = None,
        weighted: bool = True,
    ) -> None:
        self.out: dict[int, dict[int, float]] = out if out is not None else {}
        if inn is None:
            inn = {v: {} for v in self.out}
            for u, row in self.out.items():
                for v, w in row.items():
                    inn.setdefault(v, {})[u] = w
        self.inn: dict[int, dict[int, float]] = inn
        self.weighted = weighted
        self._ctx: dict[int, SenderContext] = {}
        self._m: int | None = None

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple],
        n: int = 0,
        weighted: bool = True,
    ) -> "Graph":
        """Build from ``(u, v)`` or ``(u, v, w)`` tuples; vertices ``0..n-1`` always exist."""
        out: dict[int, dict[int, float]] = {v: {} for v in range(n)}
        for e in edges:
            u, v = int(e[0]), int(e[1])
            w = float(e[2]) if (weighted and len(e) > 2) else 1.0
            out.setdefault(u, {})[v] = w
            out.setdefault(v, {})
        return cls(out, weighted=weighted)

    # ---- queries ---------------------------------------------------------

    @property
    def vertex_count(self) -> int:
        return len(self.out)

    @property
    def edge_count(self) -> int:
        if self._m is None:
            self._m = sum(len(r) for r in self.out.values())
        return self._m

    def vertices(self) -> Iterable[int]:
        return self.out.keys()

    def has_vertex(self, v: int) -> bool:
        return v in self.out

    def has_edge(self, u: int, v: int) -> bool:
        row = self.out.get(u)
        return row is not None and v in row

    def weight(self, u: int, v: int) -> float:
        return self.out[u][v]

    def edges(self) -> Iterator[tuple[int, int, float]]:
        for u, row in self.out.items():
            for v, w in row.items():
                yield u, v, w

    def edge_set(self) -> dict[tuple[int, int], float]:
        return {(u, v): w for u, v, w in self.edges()}

    def ctx(self, u: int) -> SenderContext:
        c = self._ctx.get(u)
        if c is None:
            row = self.out.get(u)
            c = SenderContext(len(row), float(sum(row.values()))) if row else _EMPTY_CTX
            self._ctx[u] = c
        return c

    def is_proxy(self, v: int) -> bool:
        return False

    def neighbors(self, v: int) -> set[int]:
        return set(self.out.get(v, ())) | set(self.inn.get(v, ()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return set(self.out) == set(other.out) and self.edge_set() == other.edge_set()

    def __repr__(self) -> str:
        return f"Graph(n={self.vertex_count}, m={self.edge_count})"

    def check_mirror(self) -> bool:
        """True when in/out adjacency describe the same edge set."""
        rev = {(u, v): w for v, row in self.inn.items() for u, w in row.items()}
        return rev == self.edge_set() and set(self.inn) == set(self.out)


# ---- update batches --------------------------------------------------------


@dataclass(frozen=True)
class InsertEdge:
    u: int
    v: int
    w: float = 1.0


@dataclass(frozen=True)
class DeleteEdge:
    u: int
    v: int


@dataclass(frozen=True)
class InsertVertex:
    v: int


@dataclass(frozen=True)
class DeleteVertex:
    v: int


UnitUpdate = Union[InsertEdge, DeleteEdge, InsertVertex, DeleteVertex]


@dataclass(frozen=True)
class UpdateBatch:
    updates: tuple[UnitUpdate, ...] = ()

    def __len__(self) -> int:
        return len(self.updates)

    def __iter__(self) -> Iterator[UnitUpdate]:
        return iter(self.updates)

    def __add__(self, other: "UpdateBatch") -> "UpdateBatch":
        return UpdateBatch(self.updates + other.updates)

    @classmethod
    def of(cls, *updates: UnitUpdate) -> "UpdateBatch":
        return cls(tuple(updates))


def apply_update_batch(g: Graph, batch: UpdateBatch | Iterable[UnitUpdate]) -> Graph:
    """Return ``g (+) batch``; ``g`` itself is left untouched.

    Updates apply in order.  Vertex deletion removes every incident edge
    first.  Inserting a vertex beyond the current id range is allowed.
    """
    out = dict(g.out)
    inn = dict(g.inn)
    owned: set[tuple[int, int]] = set()  # (side, vertex) rows already copied

    def row(side: int, d: dict, v: int) -> dict:
        if (side, v) not in owned:
            d[v] = dict(d[v])
            owned.add((side, v))
        return d[v]

    for i, up in enumerate(batch):
        if isinstance(up, InsertEdge):
            if up.u not in out or up.v not in out:
                raise UpdateError(f"update #{i} {up}: endpoint not in graph")
            w = float(up.w) if g.weighted else 1.0
            row(0, out, up.u)[up.v] = w
            row(1, inn, up.v)[up.u] = w
        elif isinstance(up, DeleteEdge):
            if up.u not in out or up.v not in out[up.u]:
                raise UpdateError(f"update #{i} {up}: edge not present")
            del row(0, out, up.u)[up.v]
            del row(1, inn, up.v)[up.u]
        elif isinstance(up, InsertVertex):
            if up.v in out:
                raise UpdateError(f"update #{i} {up}: vertex already present")
            out[up.v] = {}
            inn[up.v] = {}
            owned.add((0, up.v))
            owned.add((1, up.v))
        elif isinstance(up, DeleteVertex):
            v = up.v
            if v not in out:
                raise UpdateError(f"update #{i} {up}: vertex not present")
            for t in list(out[v]):
                del row(1, inn, t)[v]
            for s in list(inn[v]):
                del row(0, out, s)[v]
            del out[v]
            del inn[v]
        else:  # pragma: no cover - defensive
            raise UpdateError(f"update #{i}: unknown unit update {up!r}")
    return Graph(out, inn, g.weighted)


def expand_batch(g: Graph, batch: UpdateBatch) -> list[UnitUpdate]:
    """Expand vertex deletions into explicit edge deletions, replaying in order."""
    cur = g
    result: list[UnitUpdate] = []
    for up in batch:
        if isinstance(up, DeleteVertex):
            dels = [DeleteEdge(up.v, t) for t in cur.out.get(up.v, ())]
            dels += [DeleteEdge(s, up.v) for s in cur.inn.get(up.v, ()) if s != up.v]
            result.extend(dels)
            result.append(up)
            cur = apply_update_batch(cur, UpdateBatch((*dels, up)))
        else:
            result.append(up)
            cur = apply_update_batch(cur, UpdateBatch((up,)))
    return result


def inverse_batch(g: Graph, batch: UpdateBatch) -> UpdateBatch:
    """Batch that undoes ``batch`` when applied to ``g (+) batch``."""
    inv: list[UnitUpdate] = []
    cur = g
    for up in expand_batch(g, batch):
        if isinstance(up, InsertEdge):
            if cur.has_edge(up.u, up.v):
                inv.append(InsertEdge(up.u, up.v, cur.weight(up.u, up.v)))
            else:
                inv.append(DeleteEdge(up.u, up.v))
        elif isinstance(up, DeleteEdge):
            inv.append(InsertEdge(up.u, up.v, cur.weight(up.u, up.v)))
        elif isinstance(up, InsertVertex):
            inv.append(DeleteVertex(up.v))
        elif isinstance(up, DeleteVertex):
            inv.append(InsertVertex(up.v))
        cur = apply_update_batch(cur, UpdateBatch((up,)))
    return UpdateBatch(tuple(reversed(inv)))


def diff_summary(batch: UpdateBatch, g: Graph | None = None) -> set[int]:
    """Vertices with an incident inserted or deleted edge.

    Vertex deletions count the vertex and, when ``g`` is supplied, all of
    its neighbours at the time of deletion.
    """
    touched: set[int] = set()
    cur = g
    for up in batch:
        if isinstance(up, (InsertEdge, DeleteEdge)):
            touched.add(up.u)
            touched.add(up.v)
        elif isinstance(up, DeleteVertex):
            touched.add(up.v)
            if cur is not None and cur.has_vertex(up.v):
                touched |= cur.neighbors(up.v)
        if cur is not None:
            cur = apply_update_batch(cur, UpdateBatch((up,)))
    return touched


@dataclass(frozen=True)
class EdgeDiff:
    """Net difference between two graphs, edge by edge."""

    deleted: dict[tuple[int, int], float]
    inserted: dict[tuple[int, int], float]
    born: frozenset[int]
    died: frozenset[int]

    @property
    def empty(self) -> bool:
        return not (self.deleted or self.inserted or self.born or self.died)


def edge_diff(old: Graph, new: Graph, batch: Iterable[UnitUpdate] | None = None) -> EdgeDiff:
    """Edges present only in ``old`` (or re-weighted) and only in ``new``.

    With ``batch`` supplied only its endpoints are inspected; otherwise
    the full edge sets are compared.
    """
    if batch is None:
        cand = set(old.out) | set(new.out)
    else:
        cand = set()
        for up in batch:
            if isinstance(up, (InsertEdge, DeleteEdge)):
                cand.add(up.u)
            elif isinstance(up, (InsertVertex, DeleteVertex)):
                cand.add(up.v)
                cand |= set(old.inn.get(up.v, ()))
    deleted: dict[tuple[int, int], float] = {}
    inserted: dict[tuple[int, int], float] = {}
    for u in cand:
        ro = old.out.get(u, {})
        rn = new.out.get(u, {})
        if ro is rn:
            continue
        for v, w in ro.items():
            wn = rn.get(v)
            if wn is None or wn != w:
                deleted[(u, v)] = w
        for v, w in rn.items():
            wo = ro.get(v)
            if wo is None or wo != w:
                inserted[(u, v)] = w
    born = frozenset(v for v in new.out if v not in old.out) if batch is None else frozenset(
        v for v in cand if v in new.out and v not in old.out)
    died = frozenset(v for v in old.out if v not in new.out) if batch is None else frozenset(
        v for v in cand if v in old.out and v not in new.out)
    return EdgeDiff(deleted, inserted, born, died)


# ---- ingestion -------------------------------------------------------------


class VertexIdMap:
    """Dense internal ids assigned in first-seen order."""

    def __init__(self) -> None:
        self.to_internal: dict[str, int] = {}
        self.to_external: list[str] = []

    def intern(self, ext: str) -> int:
        i = self.to_internal.get(ext)
        if i is None:
            i = len(self.to_external)
            self.to_internal[ext] = i
            self.to_external.append(ext)
        return i

    def internal(self, ext: str) -> int:
        return self.to_internal[ext]

    def external(self, i: int) -> str:
        return self.to_external[i]

    def __len__(self) -> int:
        return len(self.to_external)


def _content_lines(path: Union[str, os.PathLike]) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def load_edge_list(
    path: Union[str, os.PathLike],
    weighted: bool = True,
    ids: VertexIdMap | None = None,
) -> tuple[Graph, VertexIdMap]:
    """Parse a whitespace-separated edge list into a :class:`Graph`.

    Lines are ``src dst`` or ``src dst weight``; ``#`` starts a comment.
    A weight on an unweighted load is a format error.
    """
    ids = ids if ids is not None else VertexIdMap()
    edges: list[tuple[int, int, float]] = []
    for lineno, parts in _content_lines(path):
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"{path}:{lineno}: expected 'src dst [weight]', got {len(parts)} fields")
        if len(parts) == 3 and not weighted:
            raise GraphFormatError(f"{path}:{lineno}: weight given for unweighted graph")
        w = 1.0
        if len(parts) == 3:
            try:
                w = float(parts[2])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: bad weight {parts[2]!r}") from None
        u, v = ids.intern(parts[0]), ids.intern(parts[1])
        edges.append((u, v, w))
    g = Graph.from_edges(edges, n=len(ids), weighted=weighted)
    return g, ids


def load_updates(path: Union[str, os.PathLike], ids: VertexIdMap) -> UpdateBatch:
    """Parse ``a u v w`` / ``d u v`` / ``av v`` / ``dv v`` lines.

    Unknown external ids are interned, so added vertices get fresh
    internal ids after the loaded graph's.
    """
    ups: list[UnitUpdate] = []
    for lineno, parts in _content_lines(path):
        op, args = parts[0], parts[1:]
        try:
            if op == "a" and len(args) in (2, 3):
                w = float(args[2]) if len(args) == 3 else 1.0
                ups.append(InsertEdge(ids.intern(args[0]), ids.intern(args[1]), w))
            elif op == "d" and len(args) == 2:
                ups.append(DeleteEdge(ids.internal(args[0]), ids.internal(args[1])))
            elif op == "av" and len(args) == 1:
                ups.append(InsertVertex(ids.intern(args[0])))
            elif op == "dv" and len(args) == 1:
                ups.append(DeleteVertex(ids.internal(args[0])))
            else:
                raise GraphFormatError(f"{path}:{lineno}: bad update line {' '.join(parts)!r}")
        except KeyError as exc:
            raise GraphFormatError(f"{path}:{lineno}: unknown vertex {exc.args[0]!r}") from None
        except ValueError as exc:
            if isinstance(exc, GraphFormatError):
                raise
            raise GraphFormatError(f"{path}:{lineno}: {exc}") from None
    return UpdateBatch(tuple(ups))


def format_update(up: UnitUpdate, ids: VertexIdMap | None = None) -> str:
    ext = (lambda i: ids.external(i)) if ids is not None else str
    if isinstance(up, InsertEdge):
        w = up.w
        ws = str(int(w)) if float(w).is_integer() else repr(w)
        return f"a {ext(up.u)} {ext(up.v)} {ws}"
    if isinstance(up, DeleteEdge):
        return f"d {ext(up.u)} {ext(up.v)}"
    if isinstance(up, InsertVertex):
        return f"av {up.v if ids is None or up.v >= len(ids) else ext(up.v)}"
    return f"dv {ext(up.v)}"
