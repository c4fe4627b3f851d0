"""Host-side feature storage: node features, edge features, node memories.

Node features and memories live in key-value maps. Edge features live in a
sorted append-only id array plus a row matrix, looked up by binary search
(new edges always have larger ids, so the array stays sorted by appending).
Missing ids come back as zero rows with a found mask instead of raising,
since some datasets ship without features.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

FEATURE_MAGIC = b"TGFF"
FEATURE_VERSION = 1
KIND_NODE = 0
KIND_EDGE = 1


class FeatureFormatError(ValueError):
    """Raised for malformed feature files."""


class NodeFeatureTable:
    def __init__(self, dim: int):
        self.dim = dim
        self._rows: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def __contains__(self, node: int) -> bool:
        return int(node) in self._rows

    def set(self, node: int, row) -> None:
        row = np.asarray(row, dtype=np.float32)
        if row.shape != (self.dim,):
            raise ValueError(f"expected row of dim {self.dim}, got shape {row.shape}")
        self._rows[int(node)] = row.copy()

    def set_many(self, ids, rows) -> None:
        rows = np.asarray(rows, dtype=np.float32)
        for i, node in enumerate(ids):
            self.set(int(node), rows[i])

    def get(self, ids) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(ids, dtype=np.int64)
        out = np.zeros((len(ids), self.dim), dtype=np.float32)
        found = np.zeros(len(ids), dtype=bool)
        for i, node in enumerate(ids):
            row = self._rows.get(int(node))
            if row is not None:
                out[i] = row
                found[i] = True
        return out, found

    def ids_sorted(self) -> np.ndarray:
        return np.array(sorted(self._rows), dtype=np.int64)


class EdgeFeatureTable:
    """Append-only edge features sorted by strictly increasing edge id."""

    def __init__(self, dim: int):
        self.dim = dim
        self._ids = np.empty(64, dtype=np.int64)
        self._values = np.empty((64, dim), dtype=np.float32)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    @property
    def ids(self) -> np.ndarray:
        return self._ids[: self._n]

    @property
    def values(self) -> np.ndarray:
        return self._values[: self._n]

    def append(self, ids, rows) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        rows = np.asarray(rows, dtype=np.float32)
        if rows.shape != (len(ids), self.dim):
            raise ValueError(f"rows must be ({len(ids)}, {self.dim}), got {rows.shape}")
        if len(ids) == 0:
            return
        if np.any(np.diff(ids) <= 0):
            raise ValueError("edge ids must be strictly increasing")
        if self._n and ids[0] <= self._ids[self._n - 1]:
            raise ValueError("edge ids must exceed the current maximum")
        need = self._n + len(ids)
        if need > len(self._ids):
            cap = max(need, 2 * len(self._ids))
            new_ids = np.empty(cap, dtype=np.int64)
            new_vals = np.empty((cap, self.dim), dtype=np.float32)
            new_ids[: self._n] = self._ids[: self._n]
            new_vals[: self._n] = self._values[: self._n]
            self._ids, self._values = new_ids, new_vals
        self._ids[self._n : need] = ids
        self._values[self._n : need] = rows
        self._n = need

    def get(self, ids) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(ids, dtype=np.int64)
        out = np.zeros((len(ids), self.dim), dtype=np.float32)
        found = np.zeros(len(ids), dtype=bool)
        if self._n == 0 or len(ids) == 0:
            return out, found
        stored = self.ids
        pos = np.searchsorted(stored, ids)
        in_range = pos < self._n
        hit = in_range.copy()
        hit[in_range] = stored[pos[in_range]] == ids[in_range]
        out[hit] = self.values[pos[hit]]
        found[hit] = True
        return out, found


class NodeMemoryTable:
    """Per-node learned state vectors with last-update timestamps (upsert)."""

    def __init__(self, dim: int):
        self.dim = dim
        self._rows: dict[int, np.ndarray] = {}
        self.last_update: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def update(self, ids, rows, timestamps) -> None:
        rows = np.asarray(rows, dtype=np.float32)
        if rows.shape != (len(ids), self.dim):
            raise ValueError(f"rows must be ({len(ids)}, {self.dim}), got {rows.shape}")
        for i, node in enumerate(ids):
            self._rows[int(node)] = rows[i].copy()
            self.last_update[int(node)] = int(timestamps[i])

    def get(self, ids) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(ids, dtype=np.int64)
        out = np.zeros((len(ids), self.dim), dtype=np.float32)
        found = np.zeros(len(ids), dtype=bool)
        for i, node in enumerate(ids):
            row = self._rows.get(int(node))
            if row is not None:
                out[i] = row
                found[i] = True
        return out, found


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def save_features(sink, kind: int, dim: int, ids: np.ndarray, rows: np.ndarray) -> None:
    """Binary feature file: magic, version, kind, dim, count, ids, f32 rows."""
    ids = np.asarray(ids, dtype="<i8")
    rows = np.ascontiguousarray(rows, dtype="<f4")
    sink.write(FEATURE_MAGIC)
    sink.write(struct.pack("<IBIQ", FEATURE_VERSION, kind, dim, len(ids)))
    sink.write(ids.astype("<u8").tobytes())
    sink.write(rows.tobytes())


def load_features(source) -> tuple[int, int, np.ndarray, np.ndarray]:
    data = source.read() if hasattr(source, "read") else bytes(source)
    if data[:4] != FEATURE_MAGIC:
        raise FeatureFormatError("bad feature-file magic")
    version, kind, dim, count = struct.unpack_from("<IBIQ", data, 4)
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"unsupported feature-file version {version}")
    pos = 4 + struct.calcsize("<IBIQ")
    ids_bytes = count * 8
    rows_bytes = count * dim * 4
    if len(data) != pos + ids_bytes + rows_bytes:
        raise FeatureFormatError("feature file length mismatch")
    ids = np.frombuffer(data, dtype="<u8", count=count, offset=pos).astype(np.int64)
    rows = np.frombuffer(data, dtype="<f4", count=count * dim, offset=pos + ids_bytes)
    return kind, dim, ids, rows.reshape(count, dim).copy()


def save_node_features(table: NodeFeatureTable, sink) -> None:
    ids = table.ids_sorted()
    rows, _ = table.get(ids)
    save_features(sink, KIND_NODE, table.dim, ids, rows)


def save_edge_features(table: EdgeFeatureTable, sink) -> None:
    save_features(sink, KIND_EDGE, table.dim, table.ids, table.values)


def load_feature_table(source) -> NodeFeatureTable | EdgeFeatureTable:
    kind, dim, ids, rows = load_features(source)
    if kind == KIND_NODE:
        table = NodeFeatureTable(dim)
        table.set_many(ids, rows)
        return table
    if kind == KIND_EDGE:
        table = EdgeFeatureTable(dim)
        table.append(ids, rows)
        return table
    raise FeatureFormatError(f"unknown feature kind {kind}")


def load_features_csv(path, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """CSV loader for small tests: id,v0,v1,... one row per line."""
    ids, rows = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            ids.append(int(row[0]))
            vals = [float(x) for x in row[1:]]
            if len(vals) != dim:
                raise FeatureFormatError(f"expected {dim} values, got {len(vals)}")
            rows.append(vals)
    return np.array(ids, dtype=np.int64), np.array(rows, dtype=np.float32)
