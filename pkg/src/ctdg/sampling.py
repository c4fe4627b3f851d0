"""Temporal k-hop neighborhood sampling over the block-based graph store.

Per source node the sampler walks the block list tail-to-head, skips blocks
whose [t_min, t_max] range cannot intersect the query window, binary-searches
the window boundaries inside overlapping blocks, drops deleted edges and
deleted neighbors, and then selects up to ``fanout`` candidates:

* ``recent``      -- the candidates with the largest timestamps (ties broken
                     toward larger edge ids),
* ``uniform``     -- drawn without replacement with a per-source RNG stream,
* ``time_window`` -- the window is forced to [t - delta, t), then uniform.

Windows are half-open [t_start, t_end). Randomness is derived per source
from (seed, node, window, duplicate-rank), never from array positions, so
output is identical for any worker count and for any partitioning of the
sources across machines.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .storage import NO_BLOCK, TS_MIN, DynamicGraph

POLICY_KINDS = ("recent", "uniform", "time_window")
_U64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class SamplingPolicy:
    kind: str
    delta: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "time_window" and self.delta <= 0:
            raise ValueError("time_window policy requires delta > 0")

    @classmethod
    def recent(cls) -> "SamplingPolicy":
        return cls("recent")

    @classmethod
    def uniform(cls) -> "SamplingPolicy":
        return cls("uniform")

    @classmethod
    def time_window(cls, delta: int) -> "SamplingPolicy":
        return cls("time_window", delta)


@dataclass
class SampleRequest:
    targets: list[int]
    timestamps: list[int]
    fanouts: list[int]
    policy: SamplingPolicy
    seed: int = 0

    def validate(self) -> None:
        if len(self.targets) != len(self.timestamps):
            raise ValueError("targets and timestamps must have equal length")
        if any(f < 1 for f in self.fanouts):
            raise ValueError("every fanout must be >= 1")


@dataclass
class SampleLayer:
    """One hop of a layered sample, in flat-array form.

    ``offsets[i]:offsets[i+1]`` delimits the neighbors sampled for source i.
    """

    source_nodes: np.ndarray
    source_times: np.ndarray
    offsets: np.ndarray
    neighbors: np.ndarray
    edge_ids: np.ndarray
    timestamps: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampleLayer):
            return NotImplemented
        return (
            np.array_equal(self.source_nodes, other.source_nodes)
            and np.array_equal(self.source_times, other.source_times)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.neighbors, other.neighbors)
            and np.array_equal(self.edge_ids, other.edge_ids)
            and np.array_equal(self.timestamps, other.timestamps)
        )

    def slice_of(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def to_json_dict(self) -> dict:
        return {
            "offsets": self.offsets.tolist(),
            "neighbors": self.neighbors.tolist(),
            "edge_ids": self.edge_ids.tolist(),
            "timestamps": self.timestamps.tolist(),
        }


@dataclass
class LayeredSample:
    layers: list[SampleLayer] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LayeredSample):
            return NotImplemented
        return self.layers == other.layers

    def to_json_dict(self) -> dict:
        return {"layers": [layer.to_json_dict() for layer in self.layers]}

    def sampled_nodes(self) -> set[int]:
        out: set[int] = set()
        for layer in self.layers:
            out.update(int(n) for n in layer.source_nodes)
            out.update(int(n) for n in layer.neighbors)
        return out

    def sampled_edges(self) -> set[int]:
        out: set[int] = set()
        for layer in self.layers:
            out.update(int(e) for e in layer.edge_ids)
        return out


def hop_seed(seed: int, hop: int) -> int:
    """Stable 64-bit seed for one hop; this is what goes on the wire."""
    return int(np.random.SeedSequence([seed & _U64, hop]).generate_state(1, dtype=np.uint64)[0])


def _source_rng(seed: int, node: int, t_start: int, t_end: int, occurrence: int) -> np.random.Generator:
    entropy = [seed & _U64, node & _U64, t_start & _U64, t_end & _U64, occurrence]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _collect_candidates(graph: DynamicGraph, node: int, t_start: int, t_end: int):
    """In-window valid candidates of one node, in chronological order.

    Returns (neighbors, edge_ids, timestamps) arrays. Timestamps are
    non-decreasing and edge ids ascend within equal-timestamp runs, which is
    what the recent-policy tie-break relies on.
    """
    fast, shared = graph.fast, graph.shared
    fast.accesses += 1  # node entry
    if not (0 <= node < graph.num_nodes) or not fast.node_valid[node]:
        return None
    ranges = []  # (handle, lo, hi) newest block first
    h = int(fast.tail[node])
    while h != NO_BLOCK:
        fast.accesses += 1  # block metadata record
        if t_end < fast.blk_tmin[h]:
            h = int(fast.blk_prev[h])
            continue
        if t_start > fast.blk_tmax[h]:
            break
        size = int(fast.blk_size[h])
        ts = shared.get(h).timestamps[:size]
        lo = int(np.searchsorted(ts, t_start, side="left"))
        hi = int(np.searchsorted(ts, t_end, side="left"))
        shared.accesses += max(hi - lo, 0) + int(np.log2(size + 1)) + 1
        if hi > lo:
            ranges.append((h, lo, hi))
        h = int(fast.blk_prev[h])
    if not ranges:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64)
    nbrs, eids, tss = [], [], []
    for h, lo, hi in reversed(ranges):  # oldest block first
        arr = shared.get(h)
        keep = arr.valid[lo:hi] & fast.node_valid[arr.neighbors[lo:hi]]
        nbrs.append(arr.neighbors[lo:hi][keep])
        eids.append(arr.edge_ids[lo:hi][keep])
        tss.append(arr.timestamps[lo:hi][keep])
    return np.concatenate(nbrs), np.concatenate(eids), np.concatenate(tss)


def _select(n_candidates: int, fanout: int, policy: SamplingPolicy, rng_factory) -> np.ndarray:
    """Indices of the selected candidates, in output order."""
    n = n_candidates
    if policy.kind == "recent":
        k = min(fanout, n)
        return np.arange(n - 1, n - 1 - k, -1, dtype=np.int64)
    # uniform / time_window: partial Fisher-Yates over candidate positions
    k = min(fanout, n)
    pos = np.arange(n, dtype=np.int64)
    rng = rng_factory()
    for i in range(k):
        j = int(rng.integers(i, n))
        pos[i], pos[j] = pos[j], pos[i]
    return pos[:k]


def _sample_one(graph, node, t_start, t_end, fanout, policy, seed, occurrence):
    if policy.kind == "time_window":
        t_start = t_end - policy.delta
    collected = _collect_candidates(graph, int(node), int(t_start), int(t_end))
    if collected is None:
        return (np.empty(0, np.int64),) * 3
    nbrs, eids, tss = collected
    if len(nbrs) == 0:
        return nbrs, eids, tss
    idx = _select(
        len(nbrs),
        fanout,
        policy,
        lambda: _source_rng(seed, int(node), int(t_start), int(t_end), occurrence),
    )
    return nbrs[idx], eids[idx], tss[idx]


def sample_layer(
    graph: DynamicGraph,
    sources,
    t_starts,
    t_ends,
    fanout: int,
    policy: SamplingPolicy,
    seed: int,
    workers: int = 1,
) -> SampleLayer:
    """Sample one hop for a batch of (source, window) queries.

    Duplicate (source, window) queries get distinct RNG streams via their
    duplicate rank, which is stable under any grouping of the sources, so
    results do not depend on worker count or machine placement.
    """
    sources = np.asarray(sources, dtype=np.int64)
    t_ends = np.asarray(t_ends, dtype=np.int64)
    t_starts = np.asarray(t_starts, dtype=np.int64)
    if not (len(sources) == len(t_ends) == len(t_starts)):
        raise ValueError("sources, t_starts and t_ends must have equal length")
    if fanout < 1:
        raise ValueError("fanout must be >= 1")

    occurrence: dict[tuple[int, int, int], int] = {}
    occs = np.empty(len(sources), dtype=np.int64)
    for i in range(len(sources)):
        key = (int(sources[i]), int(t_starts[i]), int(t_ends[i]))
        occs[i] = occurrence.get(key, 0)
        occurrence[key] = int(occs[i]) + 1

    def run(i: int):
        return _sample_one(graph, sources[i], t_starts[i], t_ends[i], fanout, policy, seed, int(occs[i]))

    n = len(sources)
    if workers > 1 and n > 1:
        chunks = np.array_split(np.arange(n), min(workers, n))
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            chunk_results = list(pool.map(lambda ix: [run(i) for i in ix], chunks))
        results = [r for chunk in chunk_results for r in chunk]
    else:
        results = [run(i) for i in range(n)]

    counts = np.fromiter((len(r[0]) for r in results), dtype=np.int64, count=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    empty = np.empty(0, np.int64)
    return SampleLayer(
        source_nodes=sources.copy(),
        source_times=t_ends.copy(),
        offsets=offsets,
        neighbors=np.concatenate([r[0] for r in results]) if n else empty,
        edge_ids=np.concatenate([r[1] for r in results]) if n else empty,
        timestamps=np.concatenate([r[2] for r in results]) if n else empty,
    )


def sample_khop(graph: DynamicGraph, request: SampleRequest, workers: int = 1) -> LayeredSample:
    """Recursive multi-hop sampling; hop l+1 queries each sampled neighbor
    at the timestamp of the edge it was reached through."""
    request.validate()
    sources = np.asarray(request.targets, dtype=np.int64)
    t_ends = np.asarray(request.timestamps, dtype=np.int64)
    t_starts = np.full(len(sources), TS_MIN, dtype=np.int64)
    out = LayeredSample()
    for hop, fanout in enumerate(request.fanouts):
        layer = sample_layer(
            graph,
            sources,
            t_starts,
            t_ends,
            fanout,
            request.policy,
            hop_seed(request.seed, hop),
            workers=workers,
        )
        out.layers.append(layer)
        sources = layer.neighbors
        t_ends = layer.timestamps
        t_starts = np.full(len(sources), TS_MIN, dtype=np.int64)
    return out


def random_walk(
    graph: DynamicGraph,
    start: int,
    t: int,
    length: int,
    policy: SamplingPolicy,
    seed: int = 0,
) -> list[tuple[int, int]]:
    """Temporal random walk: k-hop sampling with fanout one per hop.

    Returns the visited (node, edge timestamp) steps; truncates at the first
    hop with no candidates.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    request = SampleRequest([start], [t], [1] * length, policy, seed)
    sample = sample_khop(graph, request)
    walk: list[tuple[int, int]] = []
    for layer in sample.layers:
        if len(layer.neighbors) == 0:
            break
        walk.append((int(layer.neighbors[0]), int(layer.timestamps[0])))
    return walk
