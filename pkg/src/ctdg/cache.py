"""Batch-vectorized feature caches with a per-update replacement cap.

All three policies keep their bookkeeping in flat per-slot vectors so a whole
batch of keys is served and scored with array operations:

* LRU  -- a "recent score" per slot (0 = just used). Each fetch decrements
          every occupied score once, then resets the hit slots to 0.
          Eviction takes the lowest scores.
* LFU  -- the score is an access count, incremented per occurrence in the
          batch. Eviction takes the lowest counts.
* FIFO -- a ring buffer; inserts overwrite slots in ring order.

Each insert call admits at most ``floor(lam * capacity)`` new entries
(replacements included), which keeps one bursty batch from flushing the
whole cache. Snapshots capture exact state for per-epoch restoration, and
the same state round-trips through a binary file for cross-round reuse.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

POLICIES = ("lru", "lfu", "fifo")
_POLICY_CODE = {"lru": 0, "lfu": 1, "fifo": 2}
_POLICY_NAME = {v: k for k, v in _POLICY_CODE.items()}

EMPTY_KEY = -1
SNAPSHOT_MAGIC = b"TGCS"
SNAPSHOT_VERSION = 1


class SnapshotMismatchError(ValueError):
    """Raised when restoring a snapshot from a differently shaped cache."""


class SnapshotFormatError(ValueError):
    """Raised for malformed snapshot files."""


@dataclass
class CacheSnapshot:
    policy: str
    capacity: int
    dim: int
    lam: float
    keys: np.ndarray
    scores: np.ndarray
    fifo_head: int
    storage: np.ndarray


class VectorCache:
    def __init__(self, policy: str, capacity: int, dim: int, lam: float = 0.2):
        if policy not in POLICIES:
            raise ValueError(f"unknown cache policy {policy!r}")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 < lam <= 1.0:
            raise ValueError("lam must be in (0, 1]")
        self.policy = policy
        self.capacity = capacity
        self.dim = dim
        self.lam = lam
        self.keys = np.full(capacity, EMPTY_KEY, dtype=np.int64)
        self.scores = np.zeros(capacity, dtype=np.int64)
        self.storage = np.zeros((capacity, dim), dtype=np.float32)
        self.fifo_head = 0
        self.slot_of: dict[int, int] = {}
        self._hits = 0
        self._misses = 0
        self._evictions = 0

    def __len__(self) -> int:
        return len(self.slot_of)

    @property
    def max_update(self) -> int:
        return int(self.lam * self.capacity)

    # -- core operations -----------------------------------------------------

    def fetch(self, keys) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched lookup.

        Returns (values, hit_mask, miss_keys): rows for hits, zeros for
        misses, and the missed keys deduplicated in first-occurrence order.
        Duplicate keys count once for LRU recency and per occurrence for LFU
        frequency.
        """
        keys = np.asarray(keys, dtype=np.int64)
        values = np.zeros((len(keys), self.dim), dtype=np.float32)
        hit_mask = np.zeros(len(keys), dtype=bool)
        if len(keys) == 0:
            return values, hit_mask, np.empty(0, dtype=np.int64)

        slots = np.fromiter(
            (self.slot_of.get(int(k), -1) for k in keys), dtype=np.int64, count=len(keys)
        )
        hit_mask = slots >= 0
        values[hit_mask] = self.storage[slots[hit_mask]]

        occupied = self.keys != EMPTY_KEY
        if self.policy == "lru":
            self.scores[occupied] -= 1
            self.scores[np.unique(slots[hit_mask])] = 0
        elif self.policy == "lfu":
            hit_slots, counts = np.unique(slots[hit_mask], return_counts=True)
            self.scores[hit_slots] += counts

        miss_keys = []
        seen: set[int] = set()
        for k, hit in zip(keys, hit_mask):
            if not hit and int(k) not in seen:
                seen.add(int(k))
                miss_keys.append(int(k))
        self._hits += int(hit_mask.sum())
        self._misses += int(len(keys) - hit_mask.sum())
        return values, hit_mask, np.array(miss_keys, dtype=np.int64)

    def insert_batch(self, keys, values) -> int:
        """Admit new entries, at most ``floor(lam * capacity)`` per call.

        Excess keys are dropped from the tail of the batch. Free slots are
        filled first; further admissions replace the lowest-score occupied
        slots (LRU/LFU, ties toward the lowest slot index) or advance the
        ring head (FIFO). Returns how many entries were admitted.
        """
        keys = np.asarray(keys, dtype=np.int64)
        values = np.asarray(values, dtype=np.float32)
        if values.shape != (len(keys), self.dim):
            raise ValueError(f"values must be ({len(keys)}, {self.dim}), got {values.shape}")
        uniq_idx = []
        seen: set[int] = set()
        for i, k in enumerate(keys):
            k = int(k)
            if k in self.slot_of:
                raise ValueError(f"key {k} is already cached")
            if k not in seen:
                seen.add(k)
                uniq_idx.append(i)
        admit = uniq_idx[: self.max_update]
        if not admit:
            return 0

        if self.policy == "fifo":
            for i in admit:
                slot = self.fifo_head
                self._place(int(keys[i]), slot, values[i], score=0)
                self.fifo_head = (self.fifo_head + 1) % self.capacity
            return len(admit)

        free = np.flatnonzero(self.keys == EMPTY_KEY)
        n_free = min(len(free), len(admit))
        for j in range(n_free):
            i = admit[j]
            self._place(int(keys[i]), int(free[j]), values[i], score=0 if self.policy == "lru" else 1)
        remaining = admit[n_free:]
        if remaining:
            occupied = np.flatnonzero(self.keys != EMPTY_KEY)
            order = np.lexsort((occupied, self.scores[occupied]))
            victims = occupied[order[: len(remaining)]]
            for i, slot in zip(remaining, victims):
                self._place(int(keys[i]), int(slot), values[i], score=0 if self.policy == "lru" else 1)
        return len(admit)

    def _place(self, key: int, slot: int, row: np.ndarray, score: int) -> None:
        old = int(self.keys[slot])
        if old != EMPTY_KEY:
            del self.slot_of[old]
            self._evictions += 1
        self.keys[slot] = key
        self.scores[slot] = score
        self.storage[slot] = row
        self.slot_of[key] = slot

    # -- snapshot / persistence ----------------------------------------------

    def snapshot(self) -> CacheSnapshot:
        return CacheSnapshot(
            policy=self.policy,
            capacity=self.capacity,
            dim=self.dim,
            lam=self.lam,
            keys=self.keys.copy(),
            scores=self.scores.copy(),
            fifo_head=self.fifo_head,
            storage=self.storage.copy(),
        )

    def restore(self, snap: CacheSnapshot) -> None:
        if (snap.policy, snap.capacity, snap.dim) != (self.policy, self.capacity, self.dim):
            raise SnapshotMismatchError(
                f"snapshot is ({snap.policy}, {snap.capacity}, {snap.dim}), "
                f"cache is ({self.policy}, {self.capacity}, {self.dim})"
            )
        self.keys = snap.keys.copy()
        self.scores = snap.scores.copy()
        self.storage = snap.storage.copy()
        self.fifo_head = snap.fifo_head
        self.slot_of = {int(k): i for i, k in enumerate(self.keys) if k != EMPTY_KEY}

    def persist(self, sink) -> None:
        snap = self.snapshot()
        sink.write(SNAPSHOT_MAGIC)
        sink.write(
            struct.pack(
                "<IBQId",
                SNAPSHOT_VERSION,
                _POLICY_CODE[snap.policy],
                snap.capacity,
                snap.dim,
                snap.lam,
            )
        )
        sink.write(snap.keys.astype("<i8").tobytes())
        sink.write(snap.scores.astype("<i8").tobytes())
        sink.write(struct.pack("<Q", snap.fifo_head))
        sink.write(np.ascontiguousarray(snap.storage, dtype="<f4").tobytes())

    def stats(self) -> dict:
        total = self._hits + self._misses
        return {
            "hits": self._hits,
            "misses": self._misses,
            "hit_rate": self._hits / total if total else 0.0,
            "evictions": self._evictions,
        }

    def reset_stats(self) -> None:
        self._hits = self._misses = self._evictions = 0


def load_cache(source) -> VectorCache:
    data = source.read() if hasattr(source, "read") else bytes(source)
    if data[:4] != SNAPSHOT_MAGIC:
        raise SnapshotFormatError("bad snapshot magic")
    header_fmt = "<IBQId"
    header_size = struct.calcsize(header_fmt)
    if len(data) < 4 + header_size:
        raise SnapshotFormatError("truncated snapshot header")
    version, policy_code, capacity, dim, lam = struct.unpack_from(header_fmt, data, 4)
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    if policy_code not in _POLICY_NAME:
        raise SnapshotFormatError(f"unknown policy code {policy_code}")
    pos = 4 + header_size
    expected = pos + capacity * 8 * 2 + 8 + capacity * dim * 4
    if len(data) != expected:
        raise SnapshotFormatError("snapshot length mismatch")
    keys = np.frombuffer(data, dtype="<i8", count=capacity, offset=pos).copy()
    pos += capacity * 8
    scores = np.frombuffer(data, dtype="<i8", count=capacity, offset=pos).copy()
    pos += capacity * 8
    (fifo_head,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    storage = np.frombuffer(data, dtype="<f4", count=capacity * dim, offset=pos)
    cache = VectorCache(_POLICY_NAME[policy_code], capacity, dim, lam)
    cache.restore(
        CacheSnapshot(
            policy=cache.policy,
            capacity=capacity,
            dim=dim,
            lam=lam,
            keys=keys,
            scores=scores,
            fifo_head=int(fifo_head),
            storage=storage.reshape(capacity, dim).copy(),
        )
    )
    return cache
