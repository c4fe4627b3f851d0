"""Shared fixtures: randomized graph corpus and brute-force oracles.

The oracle side never touches block lists: it answers neighborhood queries by
filtering the raw insertion log, so storage and sampler bugs cannot hide in
shared code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pytest

from ctdg import DynamicGraph, InsertionBatch


@dataclass
class GraphCase:
    """A built graph plus the ground-truth event log it was built from."""

    graph: DynamicGraph
    directed: bool
    edges: list[tuple[int, int, int, int]]  # (src, dst, ts, edge_id)
    deleted_edges: set[int] = field(default_factory=set)
    deleted_nodes: set[int] = field(default_factory=set)

    def live_candidates(self, node: int, t_start: int, t_end: int) -> list[tuple[int, int, int]]:
        """Brute-force in-window valid (neighbor, edge_id, ts) triples."""
        if node in self.deleted_nodes:
            return []
        out = []
        for src, dst, ts, eid in self.edges:
            if eid in self.deleted_edges:
                continue
            # undirected edges are stored at both endpoints, a self loop twice
            nbrs = []
            if src == node:
                nbrs.append(dst)
            if not self.directed and dst == node:
                nbrs.append(src)
            for nbr in nbrs:
                if nbr in self.deleted_nodes:
                    continue
                if t_start <= ts < t_end:
                    out.append((nbr, eid, ts))
        return out

    def nodes(self) -> list[int]:
        seen = {s for s, _, _, _ in self.edges} | {d for _, d, _, _ in self.edges}
        return sorted(seen)

    def max_ts(self) -> int:
        return max((t for _, _, t, _ in self.edges), default=0)


def make_random_case(
    rng: np.random.Generator,
    max_edges: int = 1000,
    with_deletions: bool = True,
    tau: int | None = None,
) -> GraphCase:
    n_nodes = int(rng.integers(2, 60))
    n_edges = int(rng.integers(1, max_edges + 1))
    directed = bool(rng.integers(0, 2))
    tau = tau if tau is not None else int(rng.choice([1, 2, 4, 16, 48]))
    srcs = rng.integers(0, n_nodes, size=n_edges)
    dsts = rng.integers(0, n_nodes, size=n_edges)
    ts = np.sort(rng.integers(0, 10 * n_edges, size=n_edges))
    stream = list(zip(srcs.tolist(), dsts.tolist(), ts.tolist()))

    graph = DynamicGraph(directed=directed, tau=tau)
    log: list[tuple[int, int, int, int]] = []
    # ingest in a few batches to exercise batch boundaries
    n_batches = int(rng.integers(1, 5))
    for chunk in np.array_split(np.arange(n_edges), n_batches):
        if len(chunk) == 0:
            continue
        batch = [stream[i] for i in chunk]
        result = graph.add_edges(InsertionBatch(batch))
        assert not result.rejected  # sorted stream never violates chronology
        for (src, dst, t), eid in zip(batch, result.edge_ids):
            log.append((src, dst, t, eid))

    case = GraphCase(graph=graph, directed=directed, edges=log)
    if with_deletions and len(log) > 2:
        k = int(rng.integers(0, max(1, len(log) // 5)))
        if k:
            victims = rng.choice([e for _, _, _, e in log], size=k, replace=False)
            graph.delete_edges(victims)
            case.deleted_edges = {int(v) for v in victims}
        if rng.random() < 0.5:
            node = int(rng.integers(0, n_nodes))
            if graph.delete_node(node):
                case.deleted_nodes = {node}
    return case


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_case(rng) -> GraphCase:
    return make_random_case(rng, max_edges=200)
