"""Layered incremental processing of iterative graph algorithms."""
from __future__ import annotations

from .algorithms import AlgorithmSpec, bfs, make_spec, pagerank, php, sssp
from .batch import ActivationCounter, RunReport, run_from_scratch
from .container import load_layered, save_layered
from .graph import (
    DeleteEdge,
    DeleteVertex,
    Graph,
    InsertEdge,
    InsertVertex,
    UpdateBatch,
    apply_update_batch,
    load_edge_list,
    load_updates,
)
from .incremental import (
    LayeredGraph,
    Memo,
    build_layph,
    memo_from_scratch,
    run_incremental_layered,
    run_incremental_plain,
)
from .layering import preprocess_partition
from .shortcuts import compute_shortcuts, update_shortcuts

__all__ = [
    "ActivationCounter",
    "AlgorithmSpec",
    "DeleteEdge",
    "DeleteVertex",
    "Graph",
    "InsertEdge",
    "InsertVertex",
    "LayeredGraph",
    "Memo",
    "RunReport",
    "UpdateBatch",
    "apply_update_batch",
    "bfs",
    "build_layph",
    "compute_shortcuts",
    "load_edge_list",
    "load_layered",
    "load_updates",
    "make_spec",
    "memo_from_scratch",
    "pagerank",
    "php",
    "preprocess_partition",
    "run_from_scratch",
    "run_incremental_layered",
    "run_incremental_plain",
    "save_layered",
    "sssp",
    "update_shortcuts",
]
