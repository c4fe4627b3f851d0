"""Block-based in-memory storage for continuous-time dynamic graphs.

A graph is a contiguous node table plus, per node, a doubly-linked list of
fixed-capacity *edge blocks*. Edges inside a block and blocks along a list are
ordered by timestamp, so temporal queries can skip whole blocks using the
per-block [t_min, t_max] metadata and binary-search inside the ones that
overlap the query window.

Storage is split into two tiers that track their own access counts:

* the *fast tier* holds the node table and the small per-block metadata
  records (the structures a sampler touches constantly), and
* the *shared tier* holds the four per-edge arrays (neighbor ids, edge ids,
  timestamps, validity) allocated at block capacity.

Deletion is soft: edges and nodes are marked invalid, layout and pointers
never change. Old blocks can be offloaded to a binary file and unlinked.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

NO_BLOCK = -1

#: Sizes charged to the metadata tier: one per-block record (the paper-style
#: lightweight block header) and one node-table entry.
BLOCK_META_BYTES = 72
NODE_ENTRY_BYTES = 40

#: Bytes per edge slot in the shared tier: neighbor u64 + edge id u64 +
#: timestamp i64 + validity u8.
EDGE_SLOT_BYTES = 25

OFFLOAD_MAGIC = b"TGOF"
OFFLOAD_VERSION = 1

TS_MIN = np.iinfo(np.int64).min
TS_MAX = np.iinfo(np.int64).max


class GraphFormatError(ValueError):
    """Raised for malformed offload files."""


class NodeNotFoundError(KeyError):
    """Raised when an operation names a node that does not exist (or was deleted)."""


# ---------------------------------------------------------------------------
# Block sizing policies
# ---------------------------------------------------------------------------


class BlockSizing:
    """Decides the capacity of a newly allocated block for one node.

    ``degree`` is the node's live degree at the instant of allocation and
    ``pending`` the number of edges this node still has to absorb in the
    current insertion call (the already-known future).
    """

    def capacity(self, degree: int, pending: int) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class AdaptiveSizing(BlockSizing):
    """Degree-proportional capacity clamped by a threshold.

    New blocks get ``min(max(degree, 1), tau)`` slots, so low-degree nodes
    stay compact while hubs grow in threshold-sized chunks.
    """

    tau: int

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")

    def capacity(self, degree: int, pending: int) -> int:
        return min(max(degree, 1), self.tau)


@dataclass(frozen=True)
class FixedSizing(BlockSizing):
    """Every new block has the same capacity."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"block size must be >= 1, got {self.size}")

    def capacity(self, degree: int, pending: int) -> int:
        return self.size


@dataclass(frozen=True)
class BatchSizing(BlockSizing):
    """Size a new block to exactly the node's remaining edges in the batch.

    Wastes no space but grows one block per (node, batch) pair, so list
    lengths track the number of ingestion rounds a node was active in.
    Ingesting a whole graph as a single batch degenerates to a static
    adjacency array (one exact-size block per node).
    """

    def capacity(self, degree: int, pending: int) -> int:
        return max(pending, 1)


#: One edge per block: the linked-adjacency-list strawman.
ADJACENCY_LIST_SIZING = FixedSizing(1)


# ---------------------------------------------------------------------------
# Tiers
# ---------------------------------------------------------------------------


class FastTier:
    """Node table and block-metadata arena, stored columnar.

    Block handles are indices into the arena arrays; freed handles are
    recycled but live handles never move.
    """

    _NODE_FIELDS = ("head", "tail", "num_blocks", "degree")

    def __init__(self):
        self.accesses = 0
        # node table columns
        self.head = np.empty(0, dtype=np.int64)
        self.tail = np.empty(0, dtype=np.int64)
        self.num_blocks = np.empty(0, dtype=np.int64)
        self.degree = np.empty(0, dtype=np.int64)
        self.node_valid = np.empty(0, dtype=bool)
        # block metadata columns
        self.blk_capacity = np.empty(0, dtype=np.int64)
        self.blk_size = np.empty(0, dtype=np.int64)
        self.blk_tmin = np.empty(0, dtype=np.int64)
        self.blk_tmax = np.empty(0, dtype=np.int64)
        self.blk_prev = np.empty(0, dtype=np.int64)
        self.blk_next = np.empty(0, dtype=np.int64)
        self._blk_used = 0
        self._free_handles: list[int] = []

    @property
    def num_nodes(self) -> int:
        return len(self.head)

    def grow_nodes(self, new_size: int) -> None:
        old = self.num_nodes
        if new_size <= old:
            return
        pad = new_size - old
        self.head = np.concatenate([self.head, np.full(pad, NO_BLOCK, dtype=np.int64)])
        self.tail = np.concatenate([self.tail, np.full(pad, NO_BLOCK, dtype=np.int64)])
        self.num_blocks = np.concatenate([self.num_blocks, np.zeros(pad, dtype=np.int64)])
        self.degree = np.concatenate([self.degree, np.zeros(pad, dtype=np.int64)])
        self.node_valid = np.concatenate([self.node_valid, np.ones(pad, dtype=bool)])

    def alloc_block(self, capacity: int) -> int:
        if self._free_handles:
            h = self._free_handles.pop()
        else:
            if self._blk_used == len(self.blk_capacity):
                grow = max(64, len(self.blk_capacity))
                for name in ("blk_capacity", "blk_size", "blk_tmin", "blk_tmax", "blk_prev", "blk_next"):
                    arr = getattr(self, name)
                    setattr(self, name, np.concatenate([arr, np.zeros(grow, dtype=np.int64)]))
            h = self._blk_used
            self._blk_used += 1
        self.blk_capacity[h] = capacity
        self.blk_size[h] = 0
        self.blk_tmin[h] = 0
        self.blk_tmax[h] = 0
        self.blk_prev[h] = NO_BLOCK
        self.blk_next[h] = NO_BLOCK
        return h

    def free_block(self, handle: int) -> None:
        self._free_handles.append(handle)

    @property
    def live_blocks(self) -> int:
        return self._blk_used - len(self._free_handles)

    def metadata_bytes(self) -> int:
        return self.num_nodes * NODE_ENTRY_BYTES + self.live_blocks * BLOCK_META_BYTES


@dataclass
class EdgeArrays:
    """Per-block edge data: four parallel arrays allocated at block capacity."""

    neighbors: np.ndarray
    edge_ids: np.ndarray
    timestamps: np.ndarray
    valid: np.ndarray

    @classmethod
    def empty(cls, capacity: int) -> "EdgeArrays":
        return cls(
            neighbors=np.zeros(capacity, dtype=np.int64),
            edge_ids=np.zeros(capacity, dtype=np.int64),
            timestamps=np.zeros(capacity, dtype=np.int64),
            valid=np.zeros(capacity, dtype=bool),
        )


class SharedTier:
    """Arena of per-block edge arrays, indexed by the same block handles."""

    def __init__(self):
        self.accesses = 0
        self._arrays: list[EdgeArrays | None] = []

    def alloc(self, handle: int, capacity: int) -> None:
        while len(self._arrays) <= handle:
            self._arrays.append(None)
        self._arrays[handle] = EdgeArrays.empty(capacity)

    def free(self, handle: int) -> None:
        self._arrays[handle] = None

    def get(self, handle: int) -> EdgeArrays:
        arrays = self._arrays[handle]
        assert arrays is not None, f"block {handle} has no edge data"
        return arrays

    def edge_data_bytes(self) -> int:
        return sum(len(a.neighbors) * EDGE_SLOT_BYTES for a in self._arrays if a is not None)


# ---------------------------------------------------------------------------
# Public record types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeEntry:
    """Snapshot of one node-table entry."""

    head_block: int | None
    tail_block: int | None
    num_blocks: int
    degree: int
    valid: bool


@dataclass
class InsertionBatch:
    """A batch of timestamped edges to ingest, in arrival order."""

    edges: list[tuple[int, int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)


@dataclass
class InsertionResult:
    """Outcome of one ``add_edges`` call.

    ``edge_ids`` is aligned with the input batch; rejected edges (out-of-order
    timestamps) hold ``None`` and their indices are listed in ``rejected``.
    """

    edge_ids: list[int | None]
    rejected: list[int]

    @property
    def accepted_ids(self) -> list[int]:
        return [e for e in self.edge_ids if e is not None]


@dataclass(frozen=True)
class StorageStats:
    avg_list_len: float
    max_list_len: int
    edge_data_bytes: int
    metadata_bytes: int
    wasted_slots: int


# ---------------------------------------------------------------------------
# DynamicGraph
# ---------------------------------------------------------------------------


class DynamicGraph:
    """Dynamic CTDG store: node table + per-node chronological block lists.

    One writer at a time; any number of concurrent readers. Node ids are
    dense non-negative integers and the table auto-grows to the largest id
    seen. In an undirected graph every edge is stored in both endpoints'
    lists under the same edge id; a directed edge lives only with its source.
    """

    def __init__(self, directed: bool = False, tau: int = 48, sizing: BlockSizing | None = None):
        if sizing is None:
            if tau < 1:
                raise ValueError(f"tau must be >= 1, got {tau}")
            sizing = AdaptiveSizing(tau)
        self.directed = directed
        self.tau = tau
        self.sizing = sizing
        self.fast = FastTier()
        self.shared = SharedTier()
        self.next_edge_id = 0
        self.total_edges_inserted = 0

    # -- basic queries -----------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return self.fast.num_nodes

    def has_node(self, node: int) -> bool:
        return 0 <= node < self.num_nodes

    def node_entry(self, node: int) -> NodeEntry:
        if not self.has_node(node):
            raise NodeNotFoundError(node)
        f = self.fast
        head, tail = int(f.head[node]), int(f.tail[node])
        return NodeEntry(
            head_block=None if head == NO_BLOCK else head,
            tail_block=None if tail == NO_BLOCK else tail,
            num_blocks=int(f.num_blocks[node]),
            degree=int(f.degree[node]),
            valid=bool(f.node_valid[node]),
        )

    def degree(self, node: int) -> int:
        if not self.has_node(node) or not self.fast.node_valid[node]:
            raise NodeNotFoundError(node)
        return int(self.fast.degree[node])

    def new_block_capacity(self, node: int) -> int:
        """Capacity the sizing policy would give this node's next block."""
        if not self.has_node(node):
            raise NodeNotFoundError(node)
        return self.sizing.capacity(int(self.fast.degree[node]), 1)

    def blocks_of(self, node: int) -> list[int]:
        """Handles of the node's blocks, head (oldest) to tail (newest)."""
        if not self.has_node(node):
            raise NodeNotFoundError(node)
        out = []
        h = int(self.fast.head[node])
        while h != NO_BLOCK:
            out.append(h)
            h = int(self.fast.blk_next[h])
        return out

    def iter_edges(self, node: int):
        """Yield (neighbor, edge_id, timestamp, valid) over the node's list."""
        for h in self.blocks_of(node):
            arr = self.shared.get(h)
            size = int(self.fast.blk_size[h])
            for i in range(size):
                yield (
                    int(arr.neighbors[i]),
                    int(arr.edge_ids[i]),
                    int(arr.timestamps[i]),
                    bool(arr.valid[i]),
                )

    def node_t_max(self, node: int) -> int:
        """Latest written timestamp at this node, TS_MIN when it has none."""
        tail = int(self.fast.tail[node]) if self.has_node(node) else NO_BLOCK
        if tail == NO_BLOCK:
            return TS_MIN
        size = int(self.fast.blk_size[tail])
        if size == 0:
            return TS_MIN
        return int(self.shared.get(tail).timestamps[size - 1])

    # -- mutation ----------------------------------------------------------

    def add_edges(self, batch: InsertionBatch | list[tuple[int, int, int]], *, edge_ids: list[int] | None = None) -> InsertionResult:
        """Append a batch of edges.

        Edges whose timestamp would break a touched node's chronological
        order are rejected individually; the rest of the batch still applies.
        ``edge_ids`` lets a dispatcher preassign globally consistent ids;
        otherwise ids are drawn from this graph's counter.
        """
        edges = list(batch.edges if isinstance(batch, InsertionBatch) else batch)
        if edge_ids is not None and len(edge_ids) != len(edges):
            raise ValueError("edge_ids must match batch length")

        max_node = -1
        for src, dst, _ in edges:
            if src < 0 or dst < 0:
                raise ValueError("node ids must be non-negative")
            max_node = max(max_node, src, dst)
        if max_node >= self.num_nodes:
            self.fast.grow_nodes(max_node + 1)

        # Count, per node, how many edge slots of this batch it will absorb,
        # so batch-aware sizing policies can see the pending tail. Undirected
        # edges occupy a slot at both endpoints (a self loop two at one).
        pending: dict[int, int] = {}
        for src, dst, _ in edges:
            pending[src] = pending.get(src, 0) + 1
            if not self.directed:
                pending[dst] = pending.get(dst, 0) + 1

        tmax_cache: dict[int, int] = {}
        result_ids: list[int | None] = []
        rejected: list[int] = []
        for idx, (src, dst, ts) in enumerate(edges):
            stores = [src] if self.directed else [src, dst]
            ok = True
            for v in set(stores):
                if ts < tmax_cache.get(v, self.node_t_max(v)):
                    ok = False
            if not ok:
                rejected.append(idx)
                result_ids.append(None)
                for v in stores:
                    pending[v] -= 1
                continue
            eid = self.next_edge_id if edge_ids is None else edge_ids[idx]
            if edge_ids is None:
                self.next_edge_id += 1
            else:
                self.next_edge_id = max(self.next_edge_id, eid + 1)
            for v in stores:
                other = dst if v == src else src
                self._append_edge(v, other, eid, ts, pending[v])
                pending[v] -= 1
                tmax_cache[v] = ts
            result_ids.append(eid)
            self.total_edges_inserted += 1
        return InsertionResult(edge_ids=result_ids, rejected=rejected)

    def _append_edge(self, node: int, neighbor: int, edge_id: int, ts: int, pending: int) -> None:
        f = self.fast
        tail = int(f.tail[node])
        if tail == NO_BLOCK or f.blk_size[tail] == f.blk_capacity[tail]:
            cap = self.sizing.capacity(int(f.degree[node]), pending)
            h = f.alloc_block(cap)
            self.shared.alloc(h, cap)
            if tail == NO_BLOCK:
                f.head[node] = h
            else:
                f.blk_next[tail] = h
                f.blk_prev[h] = tail
            f.tail[node] = h
            f.num_blocks[node] += 1
            tail = h
        arr = self.shared.get(tail)
        pos = int(f.blk_size[tail])
        arr.neighbors[pos] = neighbor
        arr.edge_ids[pos] = edge_id
        arr.timestamps[pos] = ts
        arr.valid[pos] = True
        if pos == 0:
            f.blk_tmin[tail] = ts
        f.blk_tmax[tail] = ts
        f.blk_size[tail] = pos + 1
        f.degree[node] += 1

    def delete_edges(self, edge_ids) -> int:
        """Soft-delete edges by id; returns how many ids were actually live.

        Layout, block sizes, and pointers are untouched; only validity flags
        flip and degrees drop. Unknown ids are ignored.
        """
        return len(self.delete_edges_set(edge_ids))

    def delete_edges_set(self, edge_ids) -> set[int]:
        """Like ``delete_edges`` but returns the set of ids actually deleted."""
        wanted = set(int(e) for e in edge_ids)
        if not wanted:
            return set()
        deleted: set[int] = set()
        for node in range(self.num_nodes):
            h = int(self.fast.head[node])
            while h != NO_BLOCK:
                arr = self.shared.get(h)
                size = int(self.fast.blk_size[h])
                for i in range(size):
                    eid = int(arr.edge_ids[i])
                    if eid in wanted and arr.valid[i]:
                        arr.valid[i] = False
                        self.fast.degree[node] -= 1
                        deleted.add(eid)
                h = int(self.fast.blk_next[h])
        return deleted

    def delete_node(self, node: int) -> bool:
        """Mark a node invalid; it stops appearing as target or neighbor."""
        if not self.has_node(node) or not self.fast.node_valid[node]:
            return False
        self.fast.node_valid[node] = False
        return True

    # -- offloading ----------------------------------------------------------

    def offload_before(self, cutoff: int, sink) -> int:
        """Serialize and unlink every block with t_max < cutoff.

        Blocks are chronological per node, so the offloadable blocks are a
        prefix of each list. The file is fully assembled before anything is
        unlinked, so an I/O failure leaves the graph unchanged. Returns the
        number of edge records written.
        """
        f = self.fast
        victims: list[tuple[int, list[int]]] = []
        for node in range(self.num_nodes):
            prefix = []
            h = int(f.head[node])
            while h != NO_BLOCK and f.blk_tmax[h] < cutoff and f.blk_size[h] > 0:
                prefix.append(h)
                h = int(f.blk_next[h])
            if prefix:
                victims.append((node, prefix))

        buf = io.BytesIO()
        buf.write(OFFLOAD_MAGIC)
        buf.write(struct.pack("<I", OFFLOAD_VERSION))
        n_edges = 0
        for node, handles in victims:
            for h in handles:
                arr = self.shared.get(h)
                size = int(f.blk_size[h])
                buf.write(struct.pack("<QI", node, size))
                for i in range(size):
                    buf.write(
                        struct.pack(
                            "<QQqB",
                            int(arr.neighbors[i]),
                            int(arr.edge_ids[i]),
                            int(arr.timestamps[i]),
                            1 if arr.valid[i] else 0,
                        )
                    )
                n_edges += size

        sink.write(buf.getvalue())

        for node, handles in victims:
            live = 0
            for h in handles:
                arr = self.shared.get(h)
                size = int(f.blk_size[h])
                live += int(np.count_nonzero(arr.valid[:size]))
                f.free_block(h)
                self.shared.free(h)
            new_head = int(f.blk_next[handles[-1]])
            f.head[node] = new_head
            if new_head == NO_BLOCK:
                f.tail[node] = NO_BLOCK
            else:
                f.blk_prev[new_head] = NO_BLOCK
            f.num_blocks[node] -= len(handles)
            f.degree[node] -= live
        return n_edges

    # -- statistics ----------------------------------------------------------

    def storage_stats(self) -> StorageStats:
        f = self.fast
        active = f.degree > 0
        avg = float(f.num_blocks[active].mean()) if active.any() else 0.0
        max_len = int(f.num_blocks.max()) if self.num_nodes else 0
        wasted = int(
            sum(
                int(f.blk_capacity[h]) - int(f.blk_size[h])
                for node in range(self.num_nodes)
                for h in self._node_handles(node)
            )
        )
        return StorageStats(
            avg_list_len=avg,
            max_list_len=max_len,
            edge_data_bytes=self.shared.edge_data_bytes(),
            metadata_bytes=f.metadata_bytes(),
            wasted_slots=wasted,
        )

    def _node_handles(self, node: int):
        h = int(self.fast.head[node])
        while h != NO_BLOCK:
            yield h
            h = int(self.fast.blk_next[h])

    def check_waste_bound(self) -> bool:
        """Check the adaptive-sizing waste heuristic; log instead of raise."""
        stats = self.storage_stats()
        ok = stats.wasted_slots < 0.5 * max(self.total_edges_inserted, 1)
        if not ok:
            logger.warning(
                "wasted slots %d exceed half of %d inserted edges",
                stats.wasted_slots,
                self.total_edges_inserted,
            )
        return ok

    def access_counts(self) -> dict[str, int]:
        return {"metadata": self.fast.accesses, "edge_data": self.shared.accesses}


def new_graph(directed: bool = False, tau: int = 48, sizing: BlockSizing | None = None) -> DynamicGraph:
    return DynamicGraph(directed=directed, tau=tau, sizing=sizing)


def parse_offload(source) -> list[tuple[int, list[tuple[int, int, int, bool]]]]:
    """Parse an offload file back into (node, [(neighbor, edge_id, ts, valid)])."""
    data = source.read() if hasattr(source, "read") else bytes(source)
    if data[:4] != OFFLOAD_MAGIC:
        raise GraphFormatError("bad offload magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != OFFLOAD_VERSION:
        raise GraphFormatError(f"unsupported offload version {version}")
    pos = 8
    out = []
    while pos < len(data):
        if pos + 12 > len(data):
            raise GraphFormatError("truncated block header")
        node, size = struct.unpack_from("<QI", data, pos)
        pos += 12
        records = []
        for _ in range(size):
            if pos + 25 > len(data):
                raise GraphFormatError("truncated edge record")
            nbr, eid, ts, valid = struct.unpack_from("<QQqB", data, pos)
            pos += 25
            records.append((nbr, eid, ts, bool(valid)))
        out.append((int(node), records))
    return out


def write_offload_records(records: list[tuple[int, list[tuple[int, int, int, bool]]]]) -> bytes:
    """Re-serialize parsed offload records; used for bit-exact round-trip checks."""
    buf = io.BytesIO()
    buf.write(OFFLOAD_MAGIC)
    buf.write(struct.pack("<I", OFFLOAD_VERSION))
    for node, recs in records:
        buf.write(struct.pack("<QI", node, len(recs)))
        for nbr, eid, ts, valid in recs:
            buf.write(struct.pack("<QQqB", nbr, eid, ts, 1 if valid else 0))
    return buf.getvalue()
