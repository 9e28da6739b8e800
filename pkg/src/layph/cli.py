"""Command-line driver: preprocess, gen-updates, run, bench, verify-fixture."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from .algorithms import ALGORITHMS, AlgorithmSpec, make_spec
from .batch import PHASES, RunReport, run_from_scratch
from .container import ContainerError, load_layered, save_layered
from .generators import FIXTURE_SUBGRAPHS, fixture_batch, fixture_graph, planted_partition, random_update_batch
from .graph import (
    Graph,
    GraphFormatError,
    InsertVertex,
    UpdateBatch,
    UpdateError,
    VertexIdMap,
    apply_update_batch,
    format_update,
    load_edge_list,
    load_updates,
)
from .incremental import (
    ConsistencyError,
    LayeredGraph,
    build_layph,
    layered_from_groups,
    memo_from_scratch,
    run_incremental_layered,
    run_incremental_plain,
)
from .layering import DEFAULT_REPLICATION_THRESHOLD

log = logging.getLogger("layph")

MODES = ("restart", "plain-inc", "layph")
BENCH_FIELDS = ["schema", "mode", "algo", "batch_size", "activations",
                *(f"{p}_ms" for p in PHASES), "total_ms"]
FIXTURE_STATES = (0.0, 1.0, 3.0, 1.0, 4.0, 7.0, 8.0, 9.0, 9.0)
SUM_VERIFY_TOL = 1e-4


class CliError(Exception):
    pass


# ---- shared helpers -------------------------------------------------------


def _spec(args: argparse.Namespace, ids: VertexIdMap | None) -> AlgorithmSpec:
    params = {}
    if args.algo in ("pagerank", "php") and args.eps is not None:
        params["eps"] = args.eps
    source = None
    if args.algo != "pagerank":
        src = args.source
        if ids is not None:
            if src not in ids.to_internal:
                raise CliError(f"source vertex {src!r} is not in the graph")
            source = ids.internal(src)
        else:
            source = int(src)
    return make_spec(args.algo, source=source, **params)


def _load_graph(path: str, unweighted: bool) -> tuple[Graph, VertexIdMap]:
    return load_edge_list(path, weighted=not unweighted)


def _threads(n: int | None) -> int:
    return n if n and n > 0 else (os.cpu_count() or 1)


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _states_mismatch(spec: AlgorithmSpec, got: dict[int, float], want: dict[int, float], tol: float) -> list[int]:
    bad = []
    for v in sorted(set(got) | set(want)):
        a, b = got.get(v), want.get(v)
        if a is None or b is None:
            bad.append(v)
        elif a == b:
            continue
        elif math.isinf(a) or math.isinf(b) or abs(a - b) > tol:
            bad.append(v)
    return bad


def _dump_states(path: str, states: dict[int, float], ids: VertexIdMap | None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for v in sorted(states):
            name = ids.external(v) if ids is not None and v < len(ids) else str(v)
            fh.write(f"{name}\t{states[v]!r}\n")


def _corrupt_shortcuts(lg: LayeredGraph) -> int:
    """Perturb every stored shortcut weight; returns how many were changed."""
    n = 0
    for rows in lg.store.rows.values():
        for u, row in rows.items():
            for v in row:
                if v == u:
                    continue
                row[v] = row[v] * 0.5 if lg.spec.is_min else row[v] * 1.5
                n += 1
    return n


# ---- subcommands ----------------------------------------------------------


def _load_groups(path: str, ids: VertexIdMap) -> list[list[int]]:
    """One subgraph per non-empty line, as whitespace-separated vertex ids."""
    groups = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        names = line.split("#", 1)[0].split()
        if not names:
            continue
        try:
            groups.append([ids.to_internal[n] for n in names])
        except KeyError as exc:
            raise CliError(f"{path}:{lineno}: unknown vertex {exc.args[0]!r}") from None
    return groups


def cmd_preprocess(args: argparse.Namespace) -> int:
    g, ids = _load_graph(args.graph, args.unweighted)
    spec = _spec(args, ids)
    t0 = time.perf_counter()
    if args.groups:
        lg, _ = layered_from_groups(g, _load_groups(args.groups, ids), spec, K=args.K)
    else:
        lg, _ = build_layph(g, spec, K=args.K, threshold=args.threshold, seed=args.seed,
                            threads=_threads(args.threads))
    elapsed = (time.perf_counter() - t0) * 1e3
    stats = {"algorithm": spec.name, "K": lg.K, "threshold": args.threshold,
             "elapsed_ms": round(elapsed, 3), "degenerate": not lg.partition.subgraphs}
    side = save_layered(lg, args.out, stats)
    if not lg.partition.subgraphs:
        log.warning("no subgraph passed the density test; the lower layer is empty")
    print(side.read_text(encoding="utf-8"))
    return 0


def _unique_name(ids: VertexIdMap, v: int) -> str:
    name = str(v)
    while name in ids.to_internal:
        name = f"new{name}"
    return name


def cmd_gen_updates(args: argparse.Namespace) -> int:
    g, ids = _load_graph(args.graph, args.unweighted)
    counts = (args.add, args.delete, args.vadd, args.vdel)
    if min(counts) < 0:
        raise CliError("update counts must be non-negative")
    if args.delete > g.edge_count:
        raise CliError(f"cannot delete {args.delete} edges from a graph with {g.edge_count}")
    if args.vdel > g.vertex_count:
        raise CliError(f"cannot delete {args.vdel} vertices from a graph with {g.vertex_count}")
    batch = random_update_batch(g, args.add, args.delete, args.vadd, args.vdel, args.seed,
                                attach_edges=args.attach)
    for up in batch.updates:
        if isinstance(up, InsertVertex) and up.v >= len(ids):
            while len(ids) < up.v:
                ids.intern(_unique_name(ids, len(ids)))
            ids.intern(_unique_name(ids, up.v))
    lines = [format_update(up, ids) for up in batch.updates]
    if not g.weighted:
        lines = [" ".join(line.split()[:3]) if line.startswith("a ") else line for line in lines]
    Path(args.out).write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")
    log.info("wrote %d updates to %s", len(lines), args.out)
    return 0


def _run_mode(mode: str, g: Graph, batch: UpdateBatch, spec: AlgorithmSpec, args: argparse.Namespace) -> RunReport:
    if mode == "restart":
        rep, _ = run_from_scratch(apply_update_batch(g, batch), spec)
        return rep
    if mode == "plain-inc":
        rep, _, _ = run_incremental_plain(g, memo_from_scratch(g, spec), batch, spec)
        return rep
    if args.container:
        lg = load_layered(args.container, g)
        if lg.spec.name != spec.name or lg.spec.source != spec.source:
            raise CliError(f"container was built for {lg.spec.name} (source {lg.spec.source})")
        memo = memo_from_scratch(lg.routed, lg.spec)
    else:
        lg, memo = build_layph(g, spec, K=args.K, threshold=args.threshold, seed=args.seed,
                               threads=_threads(args.threads))
    if args.inject_fault:
        n = _corrupt_shortcuts(lg)
        log.warning("fault injection: corrupted %d shortcut weights", n)
    rep, _, lg_new = run_incremental_layered(lg, memo, batch, threads=_threads(args.threads))
    if args.container_out:
        save_layered(lg_new, args.container_out)
    return rep


def cmd_run(args: argparse.Namespace) -> int:
    g, ids = _load_graph(args.graph, args.unweighted)
    batch = load_updates(args.updates, ids) if args.updates else UpdateBatch(())
    spec = _spec(args, ids)
    rep = _run_mode(args.mode, g, batch, spec, args)
    payload = rep.to_json(args.states_out)
    status = 0
    if args.verify:
        oracle, _ = run_from_scratch(apply_update_batch(g, batch), spec)
        tol = args.tol if args.tol is not None else (0.0 if spec.is_min else SUM_VERIFY_TOL)
        bad = _states_mismatch(spec, rep.states, oracle.states, tol)
        payload["verify"] = {"ok": not bad, "tolerance": tol, "mismatches": len(bad)}
        if bad:
            log.error("verification failed on %d vertices (first: %s)", len(bad), bad[:5])
            status = 3
    if args.states_out:
        _dump_states(args.states_out, rep.states, ids)
    _write_json(args.report, payload)
    return status


def _bench_graph(args: argparse.Namespace) -> Graph:
    if args.planted:
        parts = args.planted.split(",")
        if len(parts) != 4:
            raise CliError("--planted expects N,COMMUNITIES,P_IN,P_OUT")
        n, c = int(parts[0]), int(parts[1])
        g, _ = planted_partition(n, c, float(parts[2]), float(parts[3]), args.seed)
        return g
    if not args.graph:
        raise CliError("bench needs a graph file or --planted")
    g, _ = _load_graph(args.graph, args.unweighted)
    return g


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = [int(s) for s in args.batch_sizes.split(",") if s]
    if not sizes or min(sizes) <= 0:
        raise CliError("batch sizes must be positive")
    if args.K is not None and args.K < 2:
        raise CliError("K must be at least 2")
    modes = [m for m in args.modes.split(",") if m]
    for m in modes:
        if m not in MODES:
            raise CliError(f"unknown mode {m!r}")
    g = _bench_graph(args)
    args.source = args.source if args.source is not None else "0"
    spec = _spec(args, None)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    protect = {spec.source} if spec.source is not None else set()
    rows = []
    lg = memo = pm = None
    if "layph" in modes:
        lg, memo = build_layph(g, spec, K=args.K, threshold=args.threshold, seed=args.seed,
                               threads=_threads(args.threads))
    if "plain-inc" in modes:
        pm = memo_from_scratch(g, spec)
    for size in sizes:
        batch = random_update_batch(g, size - size // 2, size // 2, seed=args.seed + size, protect=protect)
        for mode in modes:
            t0 = time.perf_counter()
            if mode == "restart":
                rep, _ = run_from_scratch(apply_update_batch(g, batch), spec)
            elif mode == "plain-inc":
                rep, _, _ = run_incremental_plain(g, pm, batch, spec)
            else:
                rep, _, _ = run_incremental_layered(lg, memo, batch, threads=_threads(args.threads))
            total = (time.perf_counter() - t0) * 1e3
            row = {"schema": 1, "mode": mode, "algo": spec.name, "batch_size": size,
                   "activations": rep.total_activations, "total_ms": round(total, 3)}
            for p in PHASES:
                row[f"{p}_ms"] = round(rep.phase_times_ms.get(p, 0.0), 3)
            rows.append(row)
    path = out_dir / "bench.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        w.writeheader()
        w.writerows(rows)
    print(path)
    return 0


def cmd_verify_fixture(args: argparse.Namespace) -> int:
    g = fixture_graph()
    spec = make_spec("sssp", source=0)
    lg, memo = layered_from_groups(g, FIXTURE_SUBGRAPHS, spec)
    rep, _, _ = run_incremental_layered(lg, memo, fixture_batch())
    got = tuple(rep.states[v] for v in range(9))
    ok = got == FIXTURE_STATES
    _write_json(None, {"states": list(got), "expected": list(FIXTURE_STATES), "ok": ok,
                       "activations": rep.activations, "stats": lg.stats()})
    return 0 if ok else 1


# ---- parser ---------------------------------------------------------------


def _algo_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", choices=sorted(ALGORITHMS), default="sssp")
    p.add_argument("--source", default="0", help="source vertex id (sssp, bfs, php)")
    p.add_argument("--eps", type=float, default=None, help="message threshold for sum algorithms")


def _layer_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, default=None, help="subgraph size cap (default scales with |V|)")
    p.add_argument("--threshold", type=float, default=DEFAULT_REPLICATION_THRESHOLD,
                   help="replication threshold; inf disables proxies")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="layph", description="Layered incremental graph processing.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build the layered graph container")
    p.add_argument("graph")
    p.add_argument("--out", required=True, help="container path; stats go to <out>.stats.json")
    p.add_argument("--groups", help="use these subgraphs (one line of vertex ids each) instead of discovery")
    p.add_argument("--unweighted", action="store_true")
    _algo_args(p)
    _layer_args(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("gen-updates", help="write a random update file")
    p.add_argument("graph")
    p.add_argument("--add", type=int, default=0)
    p.add_argument("--delete", type=int, default=0)
    p.add_argument("--vadd", type=int, default=0)
    p.add_argument("--vdel", type=int, default=0)
    p.add_argument("--attach", type=int, default=0, help="random in/out edges per added vertex")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unweighted", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_updates)

    p = sub.add_parser("run", help="run one mode on graph + updates")
    p.add_argument("graph")
    p.add_argument("updates", nargs="?")
    p.add_argument("--mode", choices=MODES, default="layph")
    p.add_argument("--container", help="preprocessed container (layph mode)")
    p.add_argument("--container-out", help="write the updated container (layph mode)")
    p.add_argument("--verify", action="store_true", help="compare with a restart run; exit 3 on mismatch")
    p.add_argument("--tol", type=float, default=None, help="verify tolerance (default exact / 1e-4)")
    p.add_argument("--inject-fault", action="store_true", help="corrupt shortcut weights before the run")
    p.add_argument("--states-out", help="tab-separated vertex/state dump")
    p.add_argument("--report", help="report JSON path (default stdout)")
    p.add_argument("--unweighted", action="store_true")
    _algo_args(p)
    _layer_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="compare modes over batch sizes")
    p.add_argument("graph", nargs="?")
    p.add_argument("--planted", help="generate N,COMMUNITIES,P_IN,P_OUT instead of reading a graph")
    p.add_argument("--batch-sizes", default="10,100,1000")
    p.add_argument("--modes", default="plain-inc,layph")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--unweighted", action="store_true")
    _algo_args(p)
    _layer_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify-fixture", help="run the worked SSSP example")
    p.set_defaults(func=cmd_verify_fixture)
    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("LAYPH_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, GraphFormatError, UpdateError, ContainerError, ConsistencyError, OSError) as exc:
        print(f"layph: error: {exc}", file=sys.stderr)
        return 2
