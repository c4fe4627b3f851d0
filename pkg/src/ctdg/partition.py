"""Online edge-cut hash partitioning of nodes across machines.

Every node, with all its stored edges and features, belongs to exactly one
partition: ``node % P`` under the identity hash. Directed edges are routed by
their source node; undirected edges go to both endpoints' owners (each
endpoint stores its own copy of the edge).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .storage import InsertionBatch


@dataclass(frozen=True)
class PartitionSpec:
    num_partitions: int
    hash_kind: str = "identity"

    def __post_init__(self):
        if self.num_partitions < 1:
            raise ValueError("need at least one partition")
        if self.hash_kind != "identity":
            raise ValueError(f"unknown hash kind {self.hash_kind!r}")


@dataclass(frozen=True)
class BalanceStats:
    node_counts: tuple[int, ...]
    edge_counts: tuple[int, ...]
    node_cv: float
    edge_cv: float


def assign(spec: PartitionSpec, node: int) -> int:
    return int(node) % spec.num_partitions


def dispatch(spec: PartitionSpec, batch: InsertionBatch | list, directed: bool) -> list[InsertionBatch]:
    """Split a batch into per-partition batches, preserving relative order.

    Each output edge keeps its position in the stream so per-partition
    timestamp order matches the input. An undirected edge whose endpoints
    share an owner is emitted once.
    """
    edges = list(batch.edges if isinstance(batch, InsertionBatch) else batch)
    shards: list[list[tuple[int, int, int]]] = [[] for _ in range(spec.num_partitions)]
    for src, dst, ts in edges:
        owners = {assign(spec, src)} if directed else {assign(spec, src), assign(spec, dst)}
        for p in owners:
            shards[p].append((src, dst, ts))
    return [InsertionBatch(s) for s in shards]


def _cv(counts: np.ndarray) -> float:
    mean = counts.mean()
    if mean == 0:
        return 0.0
    return float(counts.std() / mean)


def balance_stats(spec: PartitionSpec, batch: InsertionBatch | list, directed: bool) -> BalanceStats:
    edges = list(batch.edges if isinstance(batch, InsertionBatch) else batch)
    node_counts = np.zeros(spec.num_partitions, dtype=np.int64)
    edge_counts = np.zeros(spec.num_partitions, dtype=np.int64)
    seen_nodes: set[int] = set()
    for src, dst, _ in edges:
        for node in (src, dst):
            if node not in seen_nodes:
                seen_nodes.add(node)
                node_counts[assign(spec, node)] += 1
        owners = {assign(spec, src)} if directed else {assign(spec, src), assign(spec, dst)}
        for p in owners:
            edge_counts[p] += 1
    return BalanceStats(
        node_counts=tuple(int(c) for c in node_counts),
        edge_counts=tuple(int(c) for c in edge_counts),
        node_cv=_cv(node_counts),
        edge_cv=_cv(edge_counts),
    )
