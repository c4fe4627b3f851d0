"""Continuous-learning benchmark harness.

Replays an edge stream the way a continuous trainer consumes it: an initial
fraction is ingested up front, the rest arrives in incremental batches. Each
batch triggers a retraining round: ingest (writes), then a fixed number of
epochs over the round's training edges (new edges plus an optional replay
fraction of history) in strict time order, where every mini-batch runs
temporal k-hop sampling followed by cache-mediated feature fetching. Model
math is out of scope; the data path is the workload.

Caches can be persisted at round end and reloaded at the next round start
(reuse) and are re-snapshotted to the round-start state at every epoch
boundary (restoration). Each round emits a RoundReport with phase timings,
per-epoch hit rates, cross-round Jaccard similarity of sampled ids, access
distribution fits, and partition balance.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cache import VectorCache, load_cache
from .cluster import ClusterSim, ClusterSpec, Origin
from .features import EdgeFeatureTable, NodeFeatureTable, NodeMemoryTable
from .metrics import access_distribution, jaccard
from .partition import PartitionSpec, balance_stats
from .sampling import SampleRequest, SamplingPolicy, sample_khop
from .storage import (
    AdaptiveSizing,
    BatchSizing,
    BlockSizing,
    DynamicGraph,
    FixedSizing,
    InsertionBatch,
)
from .synth import generate_synthetic

_U64 = 0xFFFFFFFFFFFFFFFF


class IngestFormatError(ValueError):
    """Raised with the offending row number for malformed edge CSV input."""


def load_edge_csv(path) -> list[tuple[int, int, int]]:
    """Read a `src,dst,timestamp[,label]` CSV sorted by timestamp."""
    edges: list[tuple[int, int, int]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:3]] != ["src", "dst", "timestamp"]:
            raise IngestFormatError("row 1: expected header src,dst,timestamp[,label]")
        last_ts = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                src, dst, ts = int(row[0]), int(row[1]), int(row[2])
            except (ValueError, IndexError) as exc:
                raise IngestFormatError(f"row {lineno}: {exc}") from exc
            if last_ts is not None and ts < last_ts:
                raise IngestFormatError(f"row {lineno}: timestamps not sorted")
            last_ts = ts
            edges.append((src, dst, ts))
    return edges


def save_edge_csv(path, edges) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "timestamp"])
        writer.writerows(edges)


def sizing_from_name(name: str, tau: int, fixed_size: int) -> BlockSizing:
    if name == "adaptive":
        return AdaptiveSizing(tau)
    if name == "fixed":
        return FixedSizing(fixed_size)
    if name == "strawman":
        return BatchSizing()
    if name == "adjacency":
        return FixedSizing(1)
    raise ValueError(f"unknown sizing policy {name!r}")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class CacheConfig:
    node_policy: str = "lru"
    edge_policy: str = "lru"
    node_capacity_frac: float = 0.03
    edge_capacity_frac: float = 0.003
    lam: float = 0.2
    reuse: bool = True
    restore: bool = True


@dataclass
class RunConfig:
    dataset: str | None = None
    generate_nodes: int = 0
    generate_edges: int = 0
    generate_skew: float = 2.2
    generate_time_span: int = 1_000_000
    directed: bool = False
    tau: int = 48
    sizing: str = "adaptive"
    fixed_block_size: int = 48
    initial_fraction: float = 0.3
    batch_by: str = "count"  # "count" or "time"
    batch_edges: int = 10_000
    batch_interval: int = 86_400
    epochs_per_round: int = 3
    replay_ratio: float = 0.0
    minibatch_size: int = 600
    fanouts: tuple[int, ...] = (10, 10)
    policy_kind: str = "recent"
    policy_delta: int = 0
    node_dim: int = 16
    edge_dim: int = 16
    memory_dim: int = 0
    cache: CacheConfig = field(default_factory=CacheConfig)
    machines: int = 1
    workers_per_machine: int = 1
    seed: int = 0
    workers: int = 1
    label: str = ""

    def validate(self) -> None:
        if not 0.0 < self.initial_fraction < 1.0:
            raise ValueError("initial_fraction must be in (0, 1)")
        if self.epochs_per_round < 1:
            raise ValueError("epochs_per_round must be >= 1")
        if not 0.0 <= self.replay_ratio <= 1.0:
            raise ValueError("replay_ratio must be in [0, 1]")
        if self.batch_by not in ("count", "time"):
            raise ValueError("batch_by must be 'count' or 'time'")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")

    def policy(self) -> SamplingPolicy:
        return SamplingPolicy(self.policy_kind, self.policy_delta)


_BOOL_KEYS = {"directed", "cache_reuse", "cache_restore"}


def load_config(path, env=os.environ) -> RunConfig:
    """Flat `key = value` config file; `TG_SEED` overrides the seed."""
    config = RunConfig()
    cache = CacheConfig()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            target, attr = (cache, key[len("cache_"):]) if key.startswith("cache_") and hasattr(cache, key[len("cache_"):]) else (config, key)
            if not hasattr(target, attr):
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            current = getattr(target, attr)
            if key in _BOOL_KEYS or isinstance(current, bool):
                parsed: object = value.lower() in ("1", "true", "yes", "on")
            elif attr == "fanouts":
                parsed = tuple(int(x) for x in value.split(",") if x.strip())
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            else:
                parsed = value
            setattr(target, attr, parsed)
    config.cache = cache
    if "TG_SEED" in env:
        config.seed = int(env["TG_SEED"])
    config.validate()
    return config


# ---------------------------------------------------------------------------
# Round reports
# ---------------------------------------------------------------------------


@dataclass
class RoundReport:
    round: int
    label: str
    n_new_edges: int
    n_replay: int
    n_iterations: int
    graph_update_time: float
    sampling_time: float
    fetch_time: float
    node_hit_rates: list[float]
    edge_hit_rates: list[float]
    node_hit_rates_initial: list[float]
    edge_hit_rates_initial: list[float]
    jaccard_nodes: float | None
    jaccard_edges: float | None
    node_access_counts: list[int]
    edge_access_counts: list[int]
    node_powerlaw_r2: float | None
    node_exponential_r2: float | None
    edge_powerlaw_r2: float | None
    edge_exponential_r2: float | None
    partition_node_cv: float
    partition_edge_cv: float

    WALL_CLOCK_FIELDS = ("graph_update_time", "sampling_time", "fetch_time")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "RoundReport":
        return cls(**json.loads(line))


def reports_equal_modulo_time(a: RoundReport, b: RoundReport) -> bool:
    da, db = asdict(a), asdict(b)
    for key in RoundReport.WALL_CLOCK_FIELDS:
        da.pop(key), db.pop(key)
    return da == db


# ---------------------------------------------------------------------------
# The continuous loop
# ---------------------------------------------------------------------------


def _fit_or_none(counts) -> tuple[float | None, float | None]:
    counts = [c for c in counts if c > 0]
    if len(counts) < 3:
        return None, None
    fit = access_distribution(counts)
    if fit["degenerate"]:
        return None, None
    return fit["powerlaw_r2"], fit["exponential_r2"]


def _split_batches(edges, config: RunConfig):
    n_initial = int(len(edges) * config.initial_fraction)
    initial, rest = edges[:n_initial], edges[n_initial:]
    batches = []
    if config.batch_by == "count":
        for i in range(0, len(rest), config.batch_edges):
            batches.append(rest[i : i + config.batch_edges])
    else:
        current: list = []
        window_end = None
        for edge in rest:
            if window_end is None:
                window_end = edge[2] + config.batch_interval
            if edge[2] >= window_end:
                if current:
                    batches.append(current)
                current = []
                window_end = edge[2] + config.batch_interval
            current.append(edge)
        if current:
            batches.append(current)
    return initial, batches


def _iter_seed(seed: int, *parts: int) -> int:
    entropy = [seed & _U64] + [p & _U64 for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


class _Session:
    """Mutable state threaded through one continuous run."""

    def __init__(self, config: RunConfig, stream):
        config.validate()
        self.config = config
        if stream is not None:
            self.stream = list(stream)
        elif config.dataset:
            self.stream = load_edge_csv(config.dataset)
        elif config.generate_edges:
            self.stream = generate_synthetic(
                config.generate_nodes,
                config.generate_edges,
                config.generate_skew,
                config.generate_time_span,
                config.seed,
            )
        else:
            raise ValueError("config names no dataset and no generator")
        sizing = sizing_from_name(config.sizing, config.tau, config.fixed_block_size)
        self.cluster: ClusterSim | None = None
        if config.machines > 1:
            self.cluster = ClusterSim(
                ClusterSpec(config.machines, config.workers_per_machine),
                directed=config.directed,
                tau=config.tau,
                sizing=sizing,
            )
            self.graph = None
        else:
            self.graph = DynamicGraph(directed=config.directed, tau=config.tau, sizing=sizing)
        all_nodes = {s for s, _, _ in self.stream} | {d for _, d, _ in self.stream}
        node_cap = max(1, int(config.cache.node_capacity_frac * max(len(all_nodes), 1)))
        edge_cap = max(1, int(config.cache.edge_capacity_frac * max(len(self.stream), 1)))
        self.node_cache = VectorCache(config.cache.node_policy, node_cap, config.node_dim, config.cache.lam)
        self.edge_cache = VectorCache(config.cache.edge_policy, edge_cap, config.edge_dim, config.cache.lam)
        self.node_store = NodeFeatureTable(config.node_dim)
        self.edge_store = EdgeFeatureTable(config.edge_dim)
        self.memory = NodeMemoryTable(config.memory_dim) if config.memory_dim else None
        self.feat_rng = np.random.default_rng(_iter_seed(config.seed, 1))
        self.history: list[tuple[int, int, int, int]] = []  # (src, dst, ts, edge_id)
        self.prev_nodes: set[int] | None = None
        self.prev_edges: set[int] | None = None

    def ingest(self, edges) -> float:
        start = time.perf_counter()
        if self.cluster is not None:
            ids = self.cluster.add_edges(edges)
        else:
            ids = self.graph.add_edges(InsertionBatch(list(edges))).accepted_ids
        elapsed = time.perf_counter() - start
        new_nodes = sorted(
            {s for s, _, _ in edges if s not in self.node_store}
            | {d for _, d, _ in edges if d not in self.node_store}
        )
        if new_nodes:
            self.node_store.set_many(new_nodes, self.feat_rng.random((len(new_nodes), self.config.node_dim), dtype=np.float32))
        if ids:
            self.edge_store.append(ids, self.feat_rng.random((len(ids), self.config.edge_dim), dtype=np.float32))
        self.history.extend((s, d, t, e) for (s, d, t), e in zip(edges, ids))
        return elapsed

    def sample(self, targets, timestamps, seed: int):
        request = SampleRequest(targets, timestamps, list(self.config.fanouts), self.config.policy(), seed)
        if self.cluster is not None:
            return self.cluster.sample_khop(request, Origin(0, 0))
        return sample_khop(self.graph, request, workers=self.config.workers)


class ContinuousRun:
    """One continuous-learning run; exposes the session for inspection."""

    def __init__(self, config: RunConfig, stream=None):
        self.config = config
        self.session = _Session(config, stream)

    def rounds(self):
        return _run_rounds(self.config, self.session)


def run_continuous(config: RunConfig, stream=None):
    """Run the loop; yields one RoundReport per incremental batch."""
    return ContinuousRun(config, stream).rounds()


def _run_rounds(config: RunConfig, session: _Session):
    initial, batches = _split_batches(session.stream, config)
    session.ingest(initial)
    reused_cache_blobs: dict[str, bytes] = {}

    for round_idx, batch in enumerate(batches):
        n_before_batch = len(session.history)
        update_time = session.ingest(batch)
        new_edges = session.history[n_before_batch:]

        part_stats = balance_stats(PartitionSpec(max(config.machines, 1)), [(s, d, t) for s, d, t, _ in new_edges], config.directed)

        n_replay = round(config.replay_ratio * len(new_edges))
        rng = np.random.default_rng(_iter_seed(config.seed, 2, round_idx))
        replay: list[tuple[int, int, int, int]] = []
        if n_replay and n_before_batch:
            idx = rng.choice(n_before_batch, size=min(n_replay, n_before_batch), replace=False)
            replay = [session.history[i] for i in sorted(int(i) for i in idx)]
        train = sorted(new_edges + replay, key=lambda e: (e[2], e[3]))

        if config.cache.reuse:
            for name, cache_attr in (("node", "node_cache"), ("edge", "edge_cache")):
                blob = reused_cache_blobs.get(name)
                if blob is not None:
                    setattr(session, cache_attr, load_cache(io.BytesIO(blob)))
        else:
            cold_node = VectorCache(config.cache.node_policy, session.node_cache.capacity, config.node_dim, config.cache.lam)
            cold_edge = VectorCache(config.cache.edge_policy, session.edge_cache.capacity, config.edge_dim, config.cache.lam)
            session.node_cache, session.edge_cache = cold_node, cold_edge

        node_cache, edge_cache = session.node_cache, session.edge_cache
        round_start_node = node_cache.snapshot()
        round_start_edge = edge_cache.snapshot()

        minibatches = [train[i : i + config.minibatch_size] for i in range(0, len(train), config.minibatch_size)]
        initial_window = max(1, len(minibatches) // 5)

        node_rates, edge_rates = [], []
        node_rates_init, edge_rates_init = [], []
        sampling_time = fetch_time = 0.0
        round_nodes: set[int] = set()
        round_edges: set[int] = set()
        node_access: dict[int, int] = {}
        edge_access: dict[int, int] = {}

        for epoch in range(config.epochs_per_round):
            if config.cache.restore and epoch > 0:
                node_cache.restore(round_start_node)
                edge_cache.restore(round_start_edge)
            epoch_base_node = node_cache.stats()
            epoch_base_edge = edge_cache.stats()
            init_node = init_edge = None
            for it, mb in enumerate(minibatches):
                srcs = [e[0] for e in mb]
                dsts = [e[1] for e in mb]
                tss = [e[2] for e in mb]
                seed_it = _iter_seed(config.seed, 4, round_idx, epoch, it)
                t0 = time.perf_counter()
                sample = session.sample(srcs + dsts, tss + tss, seed_it)
                sampling_time += time.perf_counter() - t0

                node_keys = list(srcs + dsts)
                if sample.layers:
                    node_keys += [int(x) for x in sample.layers[-1].neighbors]
                edge_keys = [int(e) for layer in sample.layers for e in layer.edge_ids]

                t0 = time.perf_counter()
                _, _, node_miss = node_cache.fetch(node_keys)
                if len(node_miss):
                    rows, found = session.node_store.get(node_miss)
                    node_cache.insert_batch(node_miss[found], rows[found])
                if edge_keys:
                    _, _, edge_miss = edge_cache.fetch(edge_keys)
                    if len(edge_miss):
                        rows, found = session.edge_store.get(edge_miss)
                        edge_cache.insert_batch(edge_miss[found], rows[found])
                fetch_time += time.perf_counter() - t0

                if session.memory is not None:
                    session.memory.get(srcs + dsts)  # read current state, then write back
                    mem_rng = np.random.default_rng(seed_it)
                    session.memory.update(srcs + dsts, mem_rng.random((2 * len(mb), config.memory_dim), dtype=np.float32), tss + tss)

                round_nodes.update(node_keys)
                round_nodes.update(sample.sampled_nodes())
                round_edges.update(edge_keys)
                for k in node_keys:
                    node_access[k] = node_access.get(k, 0) + 1
                for k in edge_keys:
                    edge_access[k] = edge_access.get(k, 0) + 1

                if it + 1 == initial_window:
                    init_node = node_cache.stats()
                    init_edge = edge_cache.stats()

            def rate(now, base):
                hits = now["hits"] - base["hits"]
                total = hits + now["misses"] - base["misses"]
                return hits / total if total else 0.0

            node_rates.append(rate(node_cache.stats(), epoch_base_node))
            edge_rates.append(rate(edge_cache.stats(), epoch_base_edge))
            node_rates_init.append(rate(init_node or node_cache.stats(), epoch_base_node))
            edge_rates_init.append(rate(init_edge or edge_cache.stats(), epoch_base_edge))

        if config.cache.reuse:
            for name, cache in (("node", node_cache), ("edge", edge_cache)):
                buf = io.BytesIO()
                cache.persist(buf)
                reused_cache_blobs[name] = buf.getvalue()

        node_counts = sorted(node_access.values(), reverse=True)
        edge_counts = sorted(edge_access.values(), reverse=True)
        node_pl, node_exp = _fit_or_none(node_counts)
        edge_pl, edge_exp = _fit_or_none(edge_counts)

        report = RoundReport(
            round=round_idx,
            label=config.label,
            n_new_edges=len(new_edges),
            n_replay=len(replay),
            n_iterations=len(minibatches) * config.epochs_per_round,
            graph_update_time=update_time,
            sampling_time=sampling_time,
            fetch_time=fetch_time,
            node_hit_rates=node_rates,
            edge_hit_rates=edge_rates,
            node_hit_rates_initial=node_rates_init,
            edge_hit_rates_initial=edge_rates_init,
            jaccard_nodes=None if session.prev_nodes is None else jaccard(round_nodes, session.prev_nodes),
            jaccard_edges=None if session.prev_edges is None else jaccard(round_edges, session.prev_edges),
            node_access_counts=node_counts,
            edge_access_counts=edge_counts,
            node_powerlaw_r2=node_pl,
            node_exponential_r2=node_exp,
            edge_powerlaw_r2=edge_pl,
            edge_exponential_r2=edge_exp,
            partition_node_cv=part_stats.node_cv,
            partition_edge_cv=part_stats.edge_cv,
        )
        session.prev_nodes = round_nodes
        session.prev_edges = round_edges
        yield report


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


def bench(config: RunConfig, stream=None, repeats: int = 5, warmup: int = 1, probe_size: int = 512) -> dict:
    """Build + sampling + fetch throughput, medians over repeated runs."""
    config.validate()
    if stream is None:
        if config.dataset:
            stream = load_edge_csv(config.dataset)
        else:
            stream = generate_synthetic(
                config.generate_nodes,
                config.generate_edges,
                config.generate_skew,
                config.generate_time_span,
                config.seed,
            )
    sizing = sizing_from_name(config.sizing, config.tau, config.fixed_block_size)
    graph = DynamicGraph(directed=config.directed, tau=config.tau, sizing=sizing)
    t0 = time.perf_counter()
    for i in range(0, len(stream), config.batch_edges):
        graph.add_edges(InsertionBatch(stream[i : i + config.batch_edges]))
    build_time = time.perf_counter() - t0

    probe = stream[-probe_size:]
    targets = [s for s, _, _ in probe] + [d for _, d, _ in probe]
    times = [t for _, _, t in probe] * 2
    request = SampleRequest(targets, times, list(config.fanouts), config.policy(), config.seed)

    sample_runs = []
    last_sample = None
    for rep in range(warmup + repeats):
        t0 = time.perf_counter()
        last_sample = sample_khop(graph, request, workers=config.workers)
        elapsed = time.perf_counter() - t0
        if rep >= warmup:
            sample_runs.append(len(targets) / elapsed)

    store = NodeFeatureTable(config.node_dim)
    all_nodes = sorted({s for s, _, _ in stream} | {d for _, d, _ in stream})
    rng = np.random.default_rng(config.seed)
    store.set_many(all_nodes, rng.random((len(all_nodes), config.node_dim), dtype=np.float32))
    fetch_ids = [int(x) for x in last_sample.layers[-1].neighbors] if last_sample.layers else targets
    fetch_ids = fetch_ids or targets
    fetch_runs = []
    for rep in range(warmup + repeats):
        t0 = time.perf_counter()
        store.get(fetch_ids)
        elapsed = time.perf_counter() - t0
        if rep >= warmup:
            fetch_runs.append(len(fetch_ids) / elapsed)

    stats = graph.storage_stats()
    access = graph.access_counts()
    return {
        "label": config.label or config.sizing,
        "build_time": build_time,
        "sampling_throughput": float(np.median(sample_runs)),
        "fetch_throughput": float(np.median(fetch_runs)),
        "avg_list_len": stats.avg_list_len,
        "max_list_len": stats.max_list_len,
        "edge_data_bytes": stats.edge_data_bytes,
        "metadata_bytes": stats.metadata_bytes,
        "wasted_slots": stats.wasted_slots,
        "metadata_accesses": access["metadata"],
        "edge_data_accesses": access["edge_data"],
    }


def config_variants(config: RunConfig, **overrides) -> RunConfig:
    return replace(config, **overrides)
