"""Binary photon-event files.

Layout (little endian)::

    b"VOTDR1"            magic, 6 bytes
    u16                  format version (1)
    u32                  header length in bytes
    header               UTF-8 JSON object
    records              count * (u64 pulse_index, u64 timestamp_ps)

The header holds ``count``, ``n_pulses``, ``period_ps``, ``seed``,
``gate_off_s`` and ``config``, the run configuration snapshot.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import GateSchedule
from .simulator import PhotonEventStream

MAGIC = b"VOTDR1"
VERSION = 1
RECORD_DTYPE = np.dtype([("pulse_index", "<u8"), ("timestamp_ps", "<u8")])
_PREFIX = struct.Struct("<HI")


class EventFileError(ValueError):
    """The file is not a well-formed event file."""


def _header(stream: PhotonEventStream) -> bytes:
    head = {
        "count": len(stream),
        "n_pulses": stream.n_pulses,
        "period_ps": stream.period_ps,
        "seed": stream.seed,
        "gate_off_s": [list(iv) for iv in stream.gate.intervals],
        "config": stream.metadata,
    }
    return json.dumps(head, sort_keys=True).encode("utf-8")


def encode_events(stream: PhotonEventStream) -> bytes:
    if np.any(stream.pulse_index < 0) or np.any(stream.timestamp < 0):
        raise EventFileError("negative pulse index or timestamp cannot be stored")
    header = _header(stream)
    records = np.empty(len(stream), dtype=RECORD_DTYPE)
    records["pulse_index"] = stream.pulse_index
    records["timestamp_ps"] = stream.timestamp
    return MAGIC + _PREFIX.pack(VERSION, len(header)) + header + records.tobytes()


def write_events(stream: PhotonEventStream, path) -> None:
    Path(path).write_bytes(encode_events(stream))


def decode_events(data: bytes) -> PhotonEventStream:
    if data[: len(MAGIC)] != MAGIC:
        raise EventFileError("bad magic; not a VOTDR1 event file")
    pos = len(MAGIC)
    if len(data) < pos + _PREFIX.size:
        raise EventFileError("truncated preamble")
    version, header_len = _PREFIX.unpack_from(data, pos)
    if version != VERSION:
        raise EventFileError(f"unsupported format version {version}")
    pos += _PREFIX.size
    if len(data) < pos + header_len:
        raise EventFileError("truncated header")
    try:
        head = json.loads(data[pos : pos + header_len].decode("utf-8"))
        count = int(head["count"])
        n_pulses = int(head["n_pulses"])
        period_ps = int(head["period_ps"])
        gate = GateSchedule(tuple(tuple(iv) for iv in head.get("gate_off_s", [])))
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise EventFileError(f"malformed header: {exc}") from None
    pos += header_len
    body = memoryview(data)[pos:]
    if len(body) != count * RECORD_DTYPE.itemsize:
        have = len(body) / RECORD_DTYPE.itemsize
        raise EventFileError(f"header declares {count} records, body holds {have:g}")
    records = np.frombuffer(body, dtype=RECORD_DTYPE, count=count)
    pulse = records["pulse_index"].astype(np.int64)
    ts = records["timestamp_ps"].astype(np.int64)
    if np.any(pulse < 0) or np.any(ts < 0):
        raise EventFileError("record value out of range")
    if count and (pulse[-1] >= n_pulses or ts.max() >= period_ps):
        raise EventFileError("record lies outside the declared pulses or period")
    stream = PhotonEventStream(
        pulse, ts, n_pulses, period_ps, head.get("seed"), gate, head.get("config") or {}
    )
    if not stream.is_sorted():
        raise EventFileError("records are not sorted by (pulse_index, timestamp_ps)")
    return stream


def read_events(path) -> PhotonEventStream:
    """Load an event file. ``OSError`` propagates; format problems raise
    :class:`EventFileError`."""
    return decode_events(Path(path).read_bytes())
