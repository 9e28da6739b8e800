"""Whole-graph fixpoint executor, activation counting and run reports."""
from __future__ import annotations

import hashlib
import json
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .algorithms import INF, AlgorithmSpec
from .graph import Graph

DEFAULT_MAX_ACTIVATIONS = 10**10

PHASES = ("layer_update", "upload", "upper_iter", "assign")


class NonConvergenceError(RuntimeError):
    """Raised when a run exceeds its edge-activation budget."""


@dataclass
class ActivationCounter:
    """Counts GE invocations (edge activations), state changes and rounds.

    ``phase`` tags every activation; ``by_phase`` and ``by_kind`` keep
    the split.  When ``trace`` is a list, each activation also appends
    ``(phase, kind, u, v)`` so tests can audit which edges were touched.
    """

    edge_activations: int = 0
    vertex_updates: int = 0
    iterations: int = 0
    phase: str = "run"
    by_phase: Counter = field(default_factory=Counter)
    by_kind: Counter = field(default_factory=Counter)
    trace: Optional[list] = None
    max_activations: int = DEFAULT_MAX_ACTIVATIONS

    def add(self, n: int, kind: str = "edge") -> None:
        self.edge_activations += n
        self.by_phase[self.phase] += n
        self.by_kind[(self.phase, kind)] += n
        if self.edge_activations > self.max_activations:
            raise NonConvergenceError(
                f"edge activations exceeded {self.max_activations} during phase {self.phase!r}"
            )

    def log(self, kind: str, u: int, v: int) -> None:
        if self.trace is not None:
            self.trace.append((self.phase, kind, u, v))

    def merge(self, other: "ActivationCounter") -> None:
        self.edge_activations += other.edge_activations
        self.vertex_updates += other.vertex_updates
        self.iterations += other.iterations
        self.by_phase.update(other.by_phase)
        self.by_kind.update(other.by_kind)
        if self.trace is not None and other.trace:
            self.trace.extend(other.trace)

    def child(self) -> "ActivationCounter":
        return ActivationCounter(
            phase=self.phase,
            trace=[] if self.trace is not None else None,
            max_activations=self.max_activations,
        )


@dataclass
class StateVector:
    """States ``x`` and pending aggregated messages ``m``.

    For min specs ``parent`` records the in-neighbour whose message set
    each state; sum specs leave it empty.
    """

    x: dict[int, float]
    m: dict[int, float]
    parent: dict[int, object] = field(default_factory=dict)

    def copy(self) -> "StateVector":
        return StateVector(dict(self.x), dict(self.m), dict(self.parent))


def initial_states(g: Graph, spec: AlgorithmSpec) -> StateVector:
    x = {v: spec.initial_state(v) for v in g.vertices()}
    m = {}
    for v in g.vertices():
        if g.is_proxy(v):
            continue  # proxies relay their host and start with nothing of their own
        mv = spec.initial_message(v)
        if mv != spec.bottom:
            m[v] = mv
    return StateVector(x, m)


def run_fixpoint(
    g: Graph,
    spec: AlgorithmSpec,
    init: StateVector,
    counter: ActivationCounter | None = None,
    schedule: str = "fifo",
    seed: int | None = None,
) -> StateVector:
    """Drive ``init`` to the fixpoint of ``spec`` on ``g``.

    ``init`` is consumed and returned.  Pending messages seed the
    worklist.  With ``schedule="random"`` every round is shuffled.
    """
    counter = counter if counter is not None else ActivationCounter()
    rng = random.Random(seed) if schedule == "random" else None
    if spec.is_min:
        _run_min(g, spec, init, counter, rng)
    else:
        _run_sum(g, spec, init, counter, rng)
    return init


def _run_min(g: Graph, spec: AlgorithmSpec, sv: StateVector, counter: ActivationCounter, rng) -> None:
    x, parent = sv.x, sv.parent
    out = g.out
    gen, ctx = spec.generate, g.ctx
    frontier = []
    for v, mv in sv.m.items():
        if mv < x.get(v, INF):
            x[v] = mv
        frontier.append(v)
    sv.m.clear()
    tracing = counter.trace is not None
    while frontier:
        counter.iterations += 1
        if rng is not None:
            rng.shuffle(frontier)
        queued: set[int] = set()
        nxt: list[int] = []
        acts = 0
        for u in frontier:
            xu = x[u]
            if xu == INF:
                continue
            cu = ctx(u)
            for v, w in out[u].items():
                c = xu if w is None else gen(xu, w, cu)
                acts += 1
                if tracing:
                    counter.log("edge", u, v)
                if c < x[v]:
                    x[v] = c
                    parent[v] = u
                    counter.vertex_updates += 1
                    if v not in queued:
                        queued.add(v)
                        nxt.append(v)
        counter.add(acts)
        frontier = nxt


def _run_sum(g: Graph, spec: AlgorithmSpec, sv: StateVector, counter: ActivationCounter, rng) -> None:
    x, m = sv.x, sv.m
    out = g.out
    gen, ctx = spec.generate, g.ctx
    eps = spec.eps
    absorbing = spec.absorbing
    frontier = [v for v, mv in m.items() if abs(mv) >= eps]
    tracing = counter.trace is not None
    while frontier:
        counter.iterations += 1
        if rng is not None:
            rng.shuffle(frontier)
        queued: set[int] = set()
        nxt: list[int] = []
        acts = 0
        for u in frontier:
            p = m.get(u, 0.0)
            if abs(p) < eps:
                continue
            m[u] = 0.0
            x[u] += p
            counter.vertex_updates += 1
            cu = ctx(u)
            for v, w in out[u].items():
                if v in absorbing:
                    continue
                acts += 1
                if tracing:
                    counter.log("edge", u, v)
                mv = m.get(v, 0.0) + (p if w is None else gen(p, w, cu))
                m[v] = mv
                if v not in queued and abs(mv) >= eps:
                    queued.add(v)
                    nxt.append(v)
        counter.add(acts)
        frontier = nxt
    for v in [v for v, mv in m.items() if mv == 0.0]:
        del m[v]


# ---- reports ---------------------------------------------------------------


def states_digest(states: dict[int, float], decimals: int = 6) -> str:
    h = hashlib.sha256()
    for v in sorted(states):
        s = states[v]
        h.update(f"{v}:{'inf' if s == INF else round(s, decimals)};".encode())
    return h.hexdigest()[:16]


@dataclass
class RunReport:
    algorithm: str
    mode: str
    states: dict[int, float]
    activations: dict[str, int] = field(default_factory=dict)
    phase_times_ms: dict[str, float] = field(default_factory=dict)
    iterations: int = 0
    total_ms: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def total_activations(self) -> int:
        return sum(self.activations.values())

    def to_json(self, states_path: str | None = None) -> dict:
        d = {
            "schema": 1,
            "algorithm": self.algorithm,
            "mode": self.mode,
            "phase_times_ms": {k: round(v, 3) for k, v in self.phase_times_ms.items()},
            "activations": dict(self.activations),
            "total_activations": self.total_activations,
            "total_ms": round(self.total_ms, 3),
            "vertex_count": len(self.states),
            "states_digest": states_digest(self.states),
        }
        if states_path:
            d["states_path"] = states_path
        if self.notes:
            d["notes"] = list(self.notes)
        return d

    def dumps(self, states_path: str | None = None) -> str:
        return json.dumps(self.to_json(states_path), indent=2)


def run_from_scratch(
    g: Graph,
    spec: AlgorithmSpec,
    counter: ActivationCounter | None = None,
    schedule: str = "fifo",
    seed: int | None = None,
) -> tuple[RunReport, StateVector]:
    """Restart baseline: fixpoint from ``X0``/``M0`` on the whole graph."""
    counter = counter if counter is not None else ActivationCounter()
    t0 = time.perf_counter()
    sv = run_fixpoint(g, spec, initial_states(g, spec), counter, schedule, seed)
    ms = (time.perf_counter() - t0) * 1e3
    rep = RunReport(
        algorithm=spec.name,
        mode="restart",
        states=dict(sv.x),
        activations={"run": counter.edge_activations},
        phase_times_ms={"run": ms},
        iterations=counter.iterations,
        total_ms=ms,
    )
    return rep, sv
