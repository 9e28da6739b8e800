"""Accumulative algorithm specifications.

An algorithm is the tuple ``(generate, aggregate, X0, M0)``: a vertex
folds incoming messages into its state with ``aggregate`` and sends
``generate(m, w, ctx)`` along every out-edge.  Two families exist:

* ``min`` specs (SSSP, BFS): aggregate is ``min``, bottom is ``+inf``,
  runs stop at an exact fixpoint and deletions are revised by resetting
  dependency subtrees.
* ``sum`` specs (PageRank, PHP): aggregate is ``+``, bottom is ``0``,
  runs stop once pending messages fall below ``eps`` and deletions are
  revised with additive inverses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .graph import SenderContext

INF = math.inf


@dataclass(frozen=True)
class ExactFixpoint:
    pass


@dataclass(frozen=True)
class Threshold:
    eps: float = 1e-6


Convergence = Union[ExactFixpoint, Threshold]

MONOTONIC_PATH = "monotonic-path"
ADDITIVE_INVERSE = "additive-inverse"


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    kind: str  # "min" or "sum"
    generate: Callable[[float, float, SenderContext], float]
    initial_state: Callable[[int], float]
    initial_message: Callable[[int], float]
    convergence: Convergence
    revision_policy: str
    source: Optional[int] = None
    # vertices whose incoming messages are dropped (PHP source)
    absorbing: frozenset = field(default_factory=frozenset)
    uses_ctx: bool = False
    params: dict = field(default_factory=dict, compare=False)

    @property
    def is_min(self) -> bool:
        return self.kind == "min"

    @property
    def bottom(self) -> float:
        return INF if self.kind == "min" else 0.0

    @property
    def ge_identity(self) -> float:
        """Unit message injected at an entry when computing shortcuts."""
        return 0.0 if self.kind == "min" else 1.0

    @property
    def eps(self) -> float:
        return self.convergence.eps if isinstance(self.convergence, Threshold) else 0.0

    def aggregate(self, a: float, b: float) -> float:
        return (a if a <= b else b) if self.kind == "min" else a + b

    def extend(self, m: float, wvec: float) -> float:
        """Push ``m`` one hop through a shortcut of weight ``wvec``."""
        return m + wvec if self.kind == "min" else m * wvec

    def with_source(self, source: int) -> "AlgorithmSpec":
        return make_spec(self.name, source=source, **self.params)


def ge(spec: AlgorithmSpec, m: float, w: float, ctx: SenderContext) -> float:
    return spec.generate(m, w, ctx)


def agg(spec: AlgorithmSpec, a: float, b: float) -> float:
    return spec.aggregate(a, b)


def converged(spec: AlgorithmSpec, old: float, new: float) -> bool:
    if isinstance(spec.convergence, Threshold):
        return abs(new - old) < spec.convergence.eps
    return old == new


def _sourced(source: int, hit: float) -> Callable[[int], float]:
    return lambda v: hit if v == source else INF


def sssp(source: int = 0) -> AlgorithmSpec:
    return AlgorithmSpec(
        name="sssp",
        kind="min",
        generate=lambda m, w, ctx: m + w,
        initial_state=_sourced(source, 0.0),
        initial_message=_sourced(source, 0.0),
        convergence=ExactFixpoint(),
        revision_policy=MONOTONIC_PATH,
        source=source,
        params={},
    )


def bfs(source: int = 0) -> AlgorithmSpec:
    return AlgorithmSpec(
        name="bfs",
        kind="min",
        generate=lambda m, w, ctx: m + 1.0,
        initial_state=_sourced(source, 0.0),
        initial_message=_sourced(source, 0.0),
        convergence=ExactFixpoint(),
        revision_policy=MONOTONIC_PATH,
        source=source,
        params={},
    )


def pagerank(d: float = 0.85, eps: float = 1e-6) -> AlgorithmSpec:
    def gen(m: float, w: float, ctx: SenderContext) -> float:
        n = ctx.out_degree
        return m * d / n if n else 0.0

    return AlgorithmSpec(
        name="pagerank",
        kind="sum",
        generate=gen,
        initial_state=lambda v: 0.0,
        initial_message=lambda v: 1.0 - d,
        convergence=Threshold(eps),
        revision_policy=ADDITIVE_INVERSE,
        uses_ctx=True,
        params={"d": d, "eps": eps},
    )


def php(source: int = 0, c: float = 0.85, eps: float = 1e-6) -> AlgorithmSpec:
    """Penalized hitting probability rooted at ``source``.

    The source starts with mass 1 and absorbs whatever returns to it, so
    its state stays pinned at 1.
    """

    def gen(m: float, w: float, ctx: SenderContext) -> float:
        tot = ctx.out_weight
        return c * m * w / tot if tot else 0.0

    return AlgorithmSpec(
        name="php",
        kind="sum",
        generate=gen,
        initial_state=lambda v: 0.0,
        initial_message=lambda v: 1.0 if v == source else 0.0,
        convergence=Threshold(eps),
        revision_policy=ADDITIVE_INVERSE,
        source=source,
        absorbing=frozenset({source}),
        uses_ctx=True,
        params={"c": c, "eps": eps},
    )


ALGORITHMS = {"sssp": sssp, "bfs": bfs, "pagerank": pagerank, "php": php}


def make_spec(name: str, source: int | None = None, **params) -> AlgorithmSpec:
    """Build a built-in spec by CLI name; ``source`` is ignored by PageRank."""
    try:
        factory = ALGORITHMS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}") from None
    if name == "pagerank":
        return factory(**params)
    return factory(source=0 if source is None else source, **params)
