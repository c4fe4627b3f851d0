"""Length-prefixed binary wire format for remote sampling and feature RPCs.

Every message is a fixed header (magic, version, message type, request id,
payload length) followed by a typed payload. Variable-length array sections
carry a u32 element count so payloads are self-describing. All integers are
little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

WIRE_MAGIC = b"TGRP"
WIRE_VERSION = 1
HEADER_FMT = "<4sHHQI"
HEADER_SIZE = struct.calcsize(HEADER_FMT)

MSG_SAMPLE_REQUEST = 1
MSG_SAMPLE_RESPONSE = 2
MSG_FEATURE_REQUEST = 3
MSG_FEATURE_RESPONSE = 4
MSG_ERROR = 255

POLICY_CODE = {"recent": 0, "uniform": 1, "time_window": 2}
POLICY_NAME = {v: k for k, v in POLICY_CODE.items()}


class WireFormatError(ValueError):
    """Raised for malformed wire messages."""


@dataclass
class SampleRequestMsg:
    targets: np.ndarray
    timestamps: np.ndarray
    t_starts: np.ndarray
    fanout: int
    policy_kind: str
    delta: int
    seed: int


@dataclass
class SampleResponseMsg:
    offsets: np.ndarray
    neighbors: np.ndarray
    edge_ids: np.ndarray
    timestamps: np.ndarray


@dataclass
class FeatureRequestMsg:
    kind: int  # 0 = node, 1 = edge, 2 = memory
    ids: np.ndarray


@dataclass
class FeatureResponseMsg:
    dim: int
    found: np.ndarray
    rows: np.ndarray


@dataclass
class ErrorMsg:
    code: int
    message: str


def _pack_array(arr: np.ndarray, dtype: str) -> bytes:
    arr = np.asarray(arr)
    return struct.pack("<I", len(arr)) + arr.astype(dtype).tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise WireFormatError("truncated payload")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, dtype: str) -> np.ndarray:
        (n,) = self.unpack("<I")
        itemsize = np.dtype(dtype).itemsize
        if self.pos + n * itemsize > len(self.data):
            raise WireFormatError("truncated array")
        arr = np.frombuffer(self.data, dtype=dtype, count=n, offset=self.pos).copy()
        self.pos += n * itemsize
        return arr

    def done(self) -> None:
        if self.pos != len(self.data):
            raise WireFormatError("trailing bytes in payload")


def encode_payload(msg) -> tuple[int, bytes]:
    if isinstance(msg, SampleRequestMsg):
        payload = (
            _pack_array(msg.targets, "<u8")
            + _pack_array(msg.timestamps, "<i8")
            + _pack_array(msg.t_starts, "<i8")
            + struct.pack("<IBqQ", msg.fanout, POLICY_CODE[msg.policy_kind], msg.delta, msg.seed & 0xFFFFFFFFFFFFFFFF)
        )
        return MSG_SAMPLE_REQUEST, payload
    if isinstance(msg, SampleResponseMsg):
        payload = (
            _pack_array(msg.offsets, "<u4")
            + _pack_array(msg.neighbors, "<u8")
            + _pack_array(msg.edge_ids, "<u8")
            + _pack_array(msg.timestamps, "<i8")
        )
        return MSG_SAMPLE_RESPONSE, payload
    if isinstance(msg, FeatureRequestMsg):
        payload = struct.pack("<B", msg.kind) + _pack_array(msg.ids, "<u8")
        return MSG_FEATURE_REQUEST, payload
    if isinstance(msg, FeatureResponseMsg):
        payload = (
            struct.pack("<I", msg.dim)
            + _pack_array(msg.found, "<u1")
            + _pack_array(msg.rows.reshape(-1), "<f4")
        )
        return MSG_FEATURE_RESPONSE, payload
    if isinstance(msg, ErrorMsg):
        raw = msg.message.encode("utf-8")
        return MSG_ERROR, struct.pack("<HI", msg.code, len(raw)) + raw
    raise TypeError(f"cannot encode {type(msg).__name__}")


def decode_payload(msg_type: int, payload: bytes):
    r = _Reader(payload)
    if msg_type == MSG_SAMPLE_REQUEST:
        targets = r.array("<u8").astype(np.int64)
        timestamps = r.array("<i8")
        t_starts = r.array("<i8")
        fanout, policy_code, delta, seed = r.unpack("<IBqQ")
        r.done()
        if policy_code not in POLICY_NAME:
            raise WireFormatError(f"unknown policy code {policy_code}")
        return SampleRequestMsg(targets, timestamps, t_starts, fanout, POLICY_NAME[policy_code], delta, int(seed))
    if msg_type == MSG_SAMPLE_RESPONSE:
        offsets = r.array("<u4").astype(np.int64)
        neighbors = r.array("<u8").astype(np.int64)
        edge_ids = r.array("<u8").astype(np.int64)
        timestamps = r.array("<i8")
        r.done()
        return SampleResponseMsg(offsets, neighbors, edge_ids, timestamps)
    if msg_type == MSG_FEATURE_REQUEST:
        (kind,) = r.unpack("<B")
        ids = r.array("<u8").astype(np.int64)
        r.done()
        return FeatureRequestMsg(kind, ids)
    if msg_type == MSG_FEATURE_RESPONSE:
        (dim,) = r.unpack("<I")
        found = r.array("<u1").astype(bool)
        flat = r.array("<f4")
        r.done()
        n = len(found)
        if dim and len(flat) != n * dim:
            raise WireFormatError("feature rows length mismatch")
        rows = flat.reshape(n, dim) if dim else np.zeros((n, 0), dtype=np.float32)
        return FeatureResponseMsg(dim, found, rows)
    if msg_type == MSG_ERROR:
        code, msg_len = r.unpack("<HI")
        raw = r.data[r.pos : r.pos + msg_len]
        if len(raw) != msg_len:
            raise WireFormatError("truncated error message")
        return ErrorMsg(code, raw.decode("utf-8"))
    raise WireFormatError(f"unknown message type {msg_type}")


def encode_message(request_id: int, msg) -> bytes:
    msg_type, payload = encode_payload(msg)
    header = struct.pack(HEADER_FMT, WIRE_MAGIC, WIRE_VERSION, msg_type, request_id, len(payload))
    return header + payload


def decode_message(data: bytes) -> tuple[int, object]:
    if len(data) < HEADER_SIZE:
        raise WireFormatError("truncated header")
    magic, version, msg_type, request_id, payload_len = struct.unpack_from(HEADER_FMT, data, 0)
    if magic != WIRE_MAGIC:
        raise WireFormatError("bad wire magic")
    if version != WIRE_VERSION:
        raise WireFormatError(f"unsupported wire version {version}")
    payload = data[HEADER_SIZE : HEADER_SIZE + payload_len]
    if len(payload) != payload_len:
        raise WireFormatError("truncated payload")
    return request_id, decode_payload(msg_type, payload)


def read_message(sock) -> tuple[int, object]:
    """Read one framed message from a socket-like object."""
    header = _read_exact(sock, HEADER_SIZE)
    magic, version, msg_type, request_id, payload_len = struct.unpack(HEADER_FMT, header)
    if magic != WIRE_MAGIC:
        raise WireFormatError("bad wire magic")
    if version != WIRE_VERSION:
        raise WireFormatError(f"unsupported wire version {version}")
    payload = _read_exact(sock, payload_len)
    return request_id, decode_payload(msg_type, payload)


def _read_exact(sock, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("socket closed mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)
