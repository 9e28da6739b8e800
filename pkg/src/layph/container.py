"""Versioned binary container for a preprocessed layered graph.

Layout: an 8-byte magic, a little-endian ``u16`` format version and a
``u16`` section count, then sections of ``4-byte tag + u64 length +
payload``.  Sections:

* ``META``: JSON (spec name and parameters, K, threshold, seed, a digest
  of the original graph);
* ``PART``: partition table, one ``(vertex, subgraph)`` int64 pair per
  member plus the pinned vertices;
* ``PRXY``: proxy table, ``(proxy, host, subgraph, direction, n)``
  followed by ``n`` rerouted ``(u, v)`` pairs;
* ``SHRT``: shortcut tables, ``(subgraph, entry, target, parent)`` int64
  quadruples with a parallel float64 weight array.

The routed graph is not stored: it is rebuilt from the original graph
and the proxy table, and the graph digest guards against a mismatch.
Statistics go to a JSON sidecar next to the container.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .algorithms import make_spec
from .graph import Graph
from .incremental import ConsistencyError, LayeredGraph, build_layered_graph
from .layering import INTO, OUT_OF, Partition, ProxyRecord, compute_subgraph, rebuild_routed
from .shortcuts import ShortcutStore, settle_rows

MAGIC = b"LAYPHLG\x00"
VERSION = 1
NO_PARENT = np.iinfo(np.int64).min
_DIRS = {INTO: 0, OUT_OF: 1}
_DIR_NAMES = {0: INTO, 1: OUT_OF}


class ContainerError(ValueError):
    """Malformed or incompatible container file."""


def graph_digest(g: Graph) -> str:
    h = hashlib.sha256()
    for u in sorted(g.out):
        h.update(f"{u}:".encode())
        for v in sorted(g.out[u]):
            h.update(f"{v}/{g.out[u][v]!r},".encode())
        h.update(b";")
    return h.hexdigest()[:32]


def _ints(a) -> bytes:
    return np.asarray(a, dtype="<i8").tobytes()


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def dumps_layered(lg: LayeredGraph) -> bytes:
    spec = lg.spec
    settle_rows(lg.store, lg.routed, lg.partition.subgraphs, spec)  # rows are stored up to date
    meta = {
        "algorithm": spec.name,
        "source": spec.source,
        "params": dict(spec.params),
        "K": lg.K,
        "threshold": lg.threshold if lg.threshold != float("inf") else "inf",
        "seed": lg.seed,
        "rebuild_threshold": lg.rebuild_threshold,
        "updates_since_build": lg.updates_since_build,
        "graph_digest": graph_digest(lg.base),
        "weighted": lg.base.weighted,
    }
    p = lg.partition
    members = sorted(p.membership.items())
    part = struct.pack("<QQ", len(members), len(p.pinned))
    part += _ints([x for pair in members for x in pair]) + _ints(sorted(p.pinned))
    prx = io.BytesIO()
    recs = sorted(lg.routed.records.values(), key=lambda r: -r.proxy)
    prx.write(struct.pack("<Q", len(recs)))
    for r in recs:
        prx.write(_ints([r.proxy, r.host, r.subgraph, _DIRS[r.direction], len(r.rerouted_edges)]))
        prx.write(_ints([x for e in r.rerouted_edges for x in e]))
    quads, weights = [], []
    for sid in sorted(lg.store.rows):
        parents = lg.store.parents.get(sid, {})
        for u in sorted(lg.store.rows[sid]):
            lp = parents.get(u, {})
            for v, w in sorted(lg.store.rows[sid][u].items()):
                par = lp.get(v)
                quads.append((sid, u, v, NO_PARENT if par is None else par))
                weights.append(w)
    subs_with_rows = sorted(lg.store.rows)
    shrt = struct.pack("<QQ", len(quads), len(subs_with_rows)) + _ints(subs_with_rows)
    shrt += _ints([x for q in quads for x in q]) + np.asarray(weights, dtype="<f8").tobytes()
    sections = [
        _section(b"META", json.dumps(meta, sort_keys=True).encode()),
        _section(b"PART", part),
        _section(b"PRXY", prx.getvalue()),
        _section(b"SHRT", shrt),
    ]
    return MAGIC + struct.pack("<HH", VERSION, len(sections)) + b"".join(sections)


def _read_sections(data: bytes) -> dict[bytes, bytes]:
    if data[:8] != MAGIC:
        raise ContainerError("not a layered-graph container (bad magic)")
    version, count = struct.unpack_from("<HH", data, 8)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 12
    out: dict[bytes, bytes] = {}
    for _ in range(count):
        if pos + 12 > len(data):
            raise ContainerError("truncated section header")
        tag = data[pos:pos + 4]
        (n,) = struct.unpack_from("<Q", data, pos + 4)
        pos += 12
        if pos + n > len(data):
            raise ContainerError(f"truncated section {tag!r}")
        out[tag] = data[pos:pos + n]
        pos += n
    for tag in (b"META", b"PART", b"PRXY", b"SHRT"):
        if tag not in out:
            raise ContainerError(f"missing section {tag!r}")
    return out


def loads_layered(data: bytes, g: Graph) -> LayeredGraph:
    """Rebuild the layered graph for the original graph ``g``."""
    sec = _read_sections(data)
    meta = json.loads(sec[b"META"])
    if meta["graph_digest"] != graph_digest(g):
        raise ConsistencyError("container was built for a different graph")
    spec = make_spec(meta["algorithm"], source=meta["source"], **meta["params"])
    part = sec[b"PART"]
    n_mem, n_pin = struct.unpack_from("<QQ", part, 0)
    arr = np.frombuffer(part, dtype="<i8", offset=16)
    mem = arr[:2 * n_mem].reshape(-1, 2)
    pinned = frozenset(int(v) for v in arr[2 * n_mem:2 * n_mem + n_pin])
    prx = sec[b"PRXY"]
    (n_rec,) = struct.unpack_from("<Q", prx, 0)
    ints = np.frombuffer(prx, dtype="<i8", offset=8)
    recs, pos = [], 0
    for _ in range(n_rec):
        pid, h, sid, d, k = (int(x) for x in ints[pos:pos + 5])
        pos += 5
        es = tuple((int(ints[pos + 2 * i]), int(ints[pos + 2 * i + 1])) for i in range(k))
        pos += 2 * k
        recs.append(ProxyRecord(h, pid, sid, _DIR_NAMES[d], es))
    try:
        rg = rebuild_routed(g, recs)
    except ValueError as exc:
        raise ConsistencyError(str(exc)) from exc
    groups: dict[int, list[int]] = {}
    for v, sid in mem.tolist():
        groups.setdefault(sid, []).append(v)
    p = Partition(pinned=pinned)
    for sid, vs in groups.items():
        p.subgraphs[sid] = compute_subgraph(rg, sid, vs, pinned)
        for v in vs:
            p.membership[v] = sid
    shrt = sec[b"SHRT"]
    n_q, n_s = struct.unpack_from("<QQ", shrt, 0)
    sids = np.frombuffer(shrt, dtype="<i8", count=n_s, offset=16)
    quads = np.frombuffer(shrt, dtype="<i8", count=4 * n_q, offset=16 + 8 * n_s).reshape(-1, 4)
    ws = np.frombuffer(shrt, dtype="<f8", count=n_q, offset=16 + 8 * n_s + 32 * n_q)
    store = ShortcutStore(spec.name, {int(s): {} for s in sids}, {})
    for (sid, u, v, par), w in zip(quads.tolist(), ws.tolist()):
        store.rows[sid].setdefault(u, {})[v] = w
        if spec.is_min:
            lp = store.parents.setdefault(sid, {}).setdefault(u, {})
            if par != NO_PARENT:
                lp[v] = par
    if spec.is_min:
        for sid, rows in store.rows.items():
            tbl = store.parents.setdefault(sid, {})
            for u in rows:
                tbl.setdefault(u, {})
    threshold = float("inf") if meta["threshold"] == "inf" else meta["threshold"]
    return build_layered_graph(rg, p, store, spec, meta["K"], threshold=threshold, seed=meta["seed"],
                               rebuild_threshold=meta["rebuild_threshold"],
                               updates_since_build=meta["updates_since_build"])


def save_layered(lg: LayeredGraph, path: str | Path, stats: dict | None = None) -> Path:
    """Write the container and its ``.stats.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    path.write_bytes(dumps_layered(lg))
    side = path.with_name(path.name + ".stats.json")
    payload = {"schema": 1, **lg.stats(), **(stats or {})}
    side.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return side


def load_layered(path: str | Path, g: Graph) -> LayeredGraph:
    return loads_layered(Path(path).read_bytes(), g)
