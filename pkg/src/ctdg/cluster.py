"""Simulated multi-machine sampling cluster over hash-partitioned graphs.

Each machine owns the nodes assigned to it (node % machines) and runs one
worker per rank. A trainer at (machine m, rank r) samples local targets
itself and sends remote targets to the owner machine's worker *of the same
rank* (static scheduling), which keeps remote-serving load even across
workers. Multi-hop requests re-originate every hop at the requester.

Per-source randomness is derived from the seed and the query itself, so the
merged distributed result is bitwise identical to sampling the unpartitioned
graph. Two transports exist: direct in-process calls (default) and framed
TCP messages; results do not depend on the transport.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .features import EdgeFeatureTable, NodeFeatureTable
from .metrics import coefficient_of_variation
from .partition import PartitionSpec, assign
from .sampling import LayeredSample, SampleLayer, SamplingPolicy, SampleRequest, hop_seed, sample_layer
from .storage import TS_MIN, BlockSizing, DynamicGraph, InsertionBatch
from . import wire


@dataclass(frozen=True)
class ClusterSpec:
    machines: int
    workers_per_machine: int

    def __post_init__(self):
        if self.machines < 1 or self.workers_per_machine < 1:
            raise ValueError("need at least one machine and one worker")

    @property
    def partition(self) -> PartitionSpec:
        return PartitionSpec(self.machines)


@dataclass(frozen=True)
class Origin:
    machine: int
    rank: int


@dataclass
class RemoteSampleRequest:
    origin: Origin
    request_id: int
    msg: wire.SampleRequestMsg


@dataclass
class WorkerTelemetry:
    requests_served: int = 0
    targets_sampled: int = 0
    busy_time: float = 0.0


class RemoteRequestError(RuntimeError):
    def __init__(self, request_id: int, message: str):
        super().__init__(f"request {request_id}: {message}")
        self.request_id = request_id


def route(spec: ClusterSpec, origin: Origin, target: int) -> tuple[int, int]:
    """Destination (machine, rank) for one target under static scheduling."""
    return assign(spec.partition, target), origin.rank


def measure_cv(values) -> float:
    return coefficient_of_variation(values)


class Worker:
    """Serial actor serving sampling and feature requests for one machine."""

    def __init__(self, machine: "Machine", rank: int):
        self.machine = machine
        self.rank = rank
        self.telemetry = WorkerTelemetry()
        self.failed = False
        self._lock = threading.Lock()

    def serve_sample(self, req: RemoteSampleRequest):
        with self._lock:
            if req.origin.rank != self.rank:
                raise AssertionError(
                    f"static scheduling violated: rank {self.rank} got a request from rank {req.origin.rank}"
                )
            if self.failed:
                return wire.ErrorMsg(1, "worker failed")
            start = time.perf_counter()
            m = req.msg
            layer = sample_layer(
                self.machine.graph,
                m.targets,
                m.t_starts,
                m.timestamps,
                m.fanout,
                SamplingPolicy(m.policy_kind, m.delta),
                m.seed,
            )
            self.telemetry.requests_served += 1
            self.telemetry.targets_sampled += len(m.targets)
            self.telemetry.busy_time += time.perf_counter() - start
            return wire.SampleResponseMsg(layer.offsets, layer.neighbors, layer.edge_ids, layer.timestamps)

    def serve_features(self, req: wire.FeatureRequestMsg) -> wire.FeatureResponseMsg:
        with self._lock:
            if req.kind == 0:
                rows, found = self.machine.node_features.get(req.ids)
                dim = self.machine.node_features.dim
            else:
                rows, found = self.machine.edge_features.get(req.ids)
                dim = self.machine.edge_features.dim
            return wire.FeatureResponseMsg(dim, found, rows)


class Machine:
    """One machine: the block lists of its owned nodes plus feature shards.

    The local graph always stores edges in directed per-endpoint form; the
    cluster ingestion path materializes an undirected edge as one entry at
    each owned endpoint, so a node's whole list lives on exactly one machine.
    """

    def __init__(self, index: int, tau: int, sizing: BlockSizing | None, spec: ClusterSpec,
                 node_dim: int = 0, edge_dim: int = 0):
        self.index = index
        self.graph = DynamicGraph(directed=True, tau=tau, sizing=sizing)
        self.node_features = NodeFeatureTable(node_dim)
        self.edge_features = EdgeFeatureTable(edge_dim)
        self.workers = [Worker(self, r) for r in range(spec.workers_per_machine)]


class LocalTransport:
    """Direct in-process calls; deterministic and dependency-free."""

    def __init__(self, cluster: "ClusterSim"):
        self.cluster = cluster

    def sample(self, machine: int, rank: int, origin: Origin, request_id: int, msg: wire.SampleRequestMsg):
        worker = self.cluster.machines[machine].workers[rank]
        return worker.serve_sample(RemoteSampleRequest(origin, request_id, msg))

    def features(self, machine: int, rank: int, msg: wire.FeatureRequestMsg):
        return self.cluster.machines[machine].workers[rank].serve_features(msg)

    def close(self) -> None:
        pass


class ClusterSim:
    def __init__(
        self,
        spec: ClusterSpec,
        directed: bool = False,
        tau: int = 48,
        sizing: BlockSizing | None = None,
        node_dim: int = 0,
        edge_dim: int = 0,
    ):
        self.spec = spec
        self.directed = directed
        self.machines = [Machine(i, tau, sizing, spec, node_dim, edge_dim) for i in range(spec.machines)]
        self.transport = LocalTransport(self)
        self._next_request_id = 0

    # -- ingestion ----------------------------------------------------------

    def add_edges(self, batch: InsertionBatch | list, *, first_edge_id: int | None = None) -> list[int]:
        """Route a batch to the owning machines with shared global edge ids.

        An undirected edge becomes one directed entry per owned endpoint
        (both at the same machine for a self loop), mirroring exactly what an
        unpartitioned undirected graph would store per node.
        """
        edges = list(batch.edges if isinstance(batch, InsertionBatch) else batch)
        base = self._peek_edge_id() if first_edge_id is None else first_edge_id
        ids = list(range(base, base + len(edges)))
        per_machine: list[tuple[list, list]] = [([], []) for _ in range(self.spec.machines)]
        for (src, dst, ts), eid in zip(edges, ids):
            entries, entry_ids = per_machine[assign(self.spec.partition, src)]
            entries.append((src, dst, ts))
            entry_ids.append(eid)
            if not self.directed:
                entries, entry_ids = per_machine[assign(self.spec.partition, dst)]
                entries.append((dst, src, ts))
                entry_ids.append(eid)
        for machine, (entries, entry_ids) in zip(self.machines, per_machine):
            if entries:
                result = machine.graph.add_edges(entries, edge_ids=entry_ids)
                assert not result.rejected, "cluster ingestion requires a time-sorted stream"
        return ids

    def _peek_edge_id(self) -> int:
        return max((m.graph.next_edge_id for m in self.machines), default=0)

    def delete_edges(self, edge_ids) -> int:
        """Delete on every machine; undirected copies share their id, so an
        id counts once no matter how many partitions held a copy."""
        wanted = {int(e) for e in edge_ids}
        deleted: set[int] = set()
        for m in self.machines:
            deleted |= m.graph.delete_edges_set(wanted)
        return len(deleted)

    def delete_nodes(self, nodes) -> int:
        count = 0
        for node in nodes:
            hit = False
            for m in self.machines:
                hit = m.graph.delete_node(int(node)) or hit
            count += int(hit)
        return count

    # -- distributed sampling -------------------------------------------------

    def sample_khop(self, request: SampleRequest, origin: Origin) -> LayeredSample:
        request.validate()
        sources = np.asarray(request.targets, dtype=np.int64)
        t_ends = np.asarray(request.timestamps, dtype=np.int64)
        out = LayeredSample()
        for hop, fanout in enumerate(request.fanouts):
            seed_h = hop_seed(request.seed, hop)
            t_starts = np.full(len(sources), TS_MIN, dtype=np.int64)
            layer = self._sample_layer_distributed(
                sources, t_starts, t_ends, fanout, request.policy, seed_h, origin
            )
            out.layers.append(layer)
            sources = layer.neighbors
            t_ends = layer.timestamps
        return out

    def _sample_layer_distributed(self, sources, t_starts, t_ends, fanout, policy, seed, origin) -> SampleLayer:
        n = len(sources)
        owners = np.array([assign(self.spec.partition, int(s)) for s in sources], dtype=np.int64)
        pieces: dict[int, wire.SampleResponseMsg] = {}
        index_of: dict[int, np.ndarray] = {}
        for machine in range(self.spec.machines):
            idx = np.flatnonzero(owners == machine)
            if len(idx) == 0:
                continue
            index_of[machine] = idx
            msg = wire.SampleRequestMsg(
                targets=sources[idx],
                timestamps=t_ends[idx],
                t_starts=t_starts[idx],
                fanout=fanout,
                policy_kind=policy.kind,
                delta=policy.delta,
                seed=seed,
            )
            request_id = self._next_request_id
            self._next_request_id += 1
            resp = self.transport.sample(machine, origin.rank, origin, request_id, msg)
            if isinstance(resp, wire.ErrorMsg):
                raise RemoteRequestError(request_id, resp.message)
            pieces[machine] = resp

        counts = np.zeros(n, dtype=np.int64)
        for machine, resp in pieces.items():
            idx = index_of[machine]
            counts[idx] = np.diff(resp.offsets)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        total = int(offsets[-1])
        neighbors = np.zeros(total, dtype=np.int64)
        edge_ids = np.zeros(total, dtype=np.int64)
        timestamps = np.zeros(total, dtype=np.int64)
        for machine, resp in pieces.items():
            idx = index_of[machine]
            for j, i in enumerate(idx):
                lo, hi = int(resp.offsets[j]), int(resp.offsets[j + 1])
                neighbors[offsets[i] : offsets[i + 1]] = resp.neighbors[lo:hi]
                edge_ids[offsets[i] : offsets[i + 1]] = resp.edge_ids[lo:hi]
                timestamps[offsets[i] : offsets[i + 1]] = resp.timestamps[lo:hi]
        return SampleLayer(
            source_nodes=np.asarray(sources, dtype=np.int64).copy(),
            source_times=np.asarray(t_ends, dtype=np.int64).copy(),
            offsets=offsets,
            neighbors=neighbors,
            edge_ids=edge_ids,
            timestamps=timestamps,
        )

    # -- distributed feature fetch ---------------------------------------------

    def fetch_node_features(self, ids, origin: Origin) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(ids, dtype=np.int64)
        dim = self.machines[0].node_features.dim
        rows = np.zeros((len(ids), dim), dtype=np.float32)
        found = np.zeros(len(ids), dtype=bool)
        owners = np.array([assign(self.spec.partition, int(i)) for i in ids], dtype=np.int64)
        for machine in range(self.spec.machines):
            idx = np.flatnonzero(owners == machine)
            if len(idx) == 0:
                continue
            resp = self.transport.features(machine, origin.rank, wire.FeatureRequestMsg(0, ids[idx]))
            rows[idx] = resp.rows
            found[idx] = resp.found
        return rows, found

    def fetch_edge_features(self, edge_ids, src_nodes, origin: Origin) -> tuple[np.ndarray, np.ndarray]:
        """Fetch edge rows from the machine storing each edge (its source's owner)."""
        edge_ids = np.asarray(edge_ids, dtype=np.int64)
        dim = self.machines[0].edge_features.dim
        rows = np.zeros((len(edge_ids), dim), dtype=np.float32)
        found = np.zeros(len(edge_ids), dtype=bool)
        owners = np.array([assign(self.spec.partition, int(s)) for s in src_nodes], dtype=np.int64)
        for machine in range(self.spec.machines):
            idx = np.flatnonzero(owners == machine)
            if len(idx) == 0:
                continue
            resp = self.transport.features(machine, origin.rank, wire.FeatureRequestMsg(1, edge_ids[idx]))
            rows[idx] = resp.rows
            found[idx] = resp.found
        return rows, found

    # -- telemetry --------------------------------------------------------------

    def all_telemetry(self) -> list[tuple[int, int, WorkerTelemetry]]:
        return [
            (m.index, w.rank, w.telemetry)
            for m in self.machines
            for w in m.workers
        ]

    def rank_group_cv(self, metric: str = "requests_served") -> dict[int, float]:
        """CV of a telemetry field across the same-rank workers of all machines."""
        out = {}
        for rank in range(self.spec.workers_per_machine):
            values = [getattr(m.workers[rank].telemetry, metric) for m in self.machines]
            out[rank] = measure_cv(values)
        return out


# ---------------------------------------------------------------------------
# TCP transport
# ---------------------------------------------------------------------------


class TcpWorkerServer(threading.Thread):
    """One listening socket per worker; serves framed wire messages."""

    def __init__(self, worker: Worker, host: str = "127.0.0.1", port: int = 0):
        super().__init__(daemon=True)
        self.worker = worker
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self.address = self._sock.getsockname()
        self._stop = threading.Event()

    def run(self) -> None:
        self._sock.settimeout(0.2)
        conns: list[threading.Thread] = []
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            conns.append(t)
        self._sock.close()

    def _serve_conn(self, conn: socket.socket) -> None:
        with conn:
            while True:
                try:
                    request_id, msg = wire.read_message(conn)
                except (ConnectionError, OSError):
                    return
                if isinstance(msg, wire.SampleRequestMsg):
                    # the port is rank-addressed, so the origin rank equals ours
                    resp = self.worker.serve_sample(
                        RemoteSampleRequest(Origin(-1, self.worker.rank), request_id, msg)
                    )
                elif isinstance(msg, wire.FeatureRequestMsg):
                    resp = self.worker.serve_features(msg)
                else:
                    resp = wire.ErrorMsg(2, f"unexpected message {type(msg).__name__}")
                conn.sendall(wire.encode_message(request_id, resp))

    def stop(self) -> None:
        self._stop.set()


class TcpTransport:
    """Client side of the TCP mode: one connection per destination worker."""

    def __init__(self, addresses: dict[tuple[int, int], tuple[str, int]]):
        self.addresses = addresses
        self._conns: dict[tuple[int, int], socket.socket] = {}
        self._lock = threading.Lock()

    def _conn(self, machine: int, rank: int) -> socket.socket:
        key = (machine, rank)
        with self._lock:
            if key not in self._conns:
                sock = socket.create_connection(self.addresses[key])
                self._conns[key] = sock
            return self._conns[key]

    def sample(self, machine: int, rank: int, origin: Origin, request_id: int, msg: wire.SampleRequestMsg):
        return self._roundtrip(machine, rank, request_id, msg)

    def features(self, machine: int, rank: int, msg: wire.FeatureRequestMsg):
        return self._roundtrip(machine, rank, 0, msg)

    def _roundtrip(self, machine: int, rank: int, request_id: int, msg):
        sock = self._conn(machine, rank)
        sock.sendall(wire.encode_message(request_id, msg))
        _, resp = wire.read_message(sock)
        return resp

    def close(self) -> None:
        for sock in self._conns.values():
            sock.close()
        self._conns.clear()


def serve_cluster_tcp(cluster: ClusterSim, host: str = "127.0.0.1") -> tuple[list[TcpWorkerServer], TcpTransport]:
    """Start one TCP server per worker and return a transport wired to them."""
    servers = []
    addresses = {}
    for m in cluster.machines:
        for w in m.workers:
            server = TcpWorkerServer(w, host=host)
            server.start()
            servers.append(server)
            addresses[(m.index, w.rank)] = server.address
    return servers, TcpTransport(addresses)
