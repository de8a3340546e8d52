"""Output sinks: JSONL frame records, raw datagram log, and UDP relay.

Frame sinks receive ``(frame, messages)``; datagram sinks receive the raw
bytes exactly as they arrived.
"""

from __future__ import annotations

import json
import socket
from typing import IO, Optional

from .harness import LogWriter
from .mapper import BridgeMessages
from .stream import Endpoint, MotionFrame, Transport

JSONL_SCHEMA_VERSION = 1


class SinkError(RuntimeError):
    pass


def _xyz(v) -> dict:
    return {"x": v[0], "y": v[1], "z": v[2]}


def _quat(q) -> dict:
    return {"x": q.x, "y": q.y, "z": q.z, "w": q.w}


def frame_record(f: MotionFrame, m: BridgeMessages) -> dict:
    """JSON-ready record; sub-message names follow the middleware schemas."""
    links = m.link_states
    return {
        "version": JSONL_SCHEMA_VERSION,
        "sample": f.sample_counter,
        "time_code_ms": f.time_code_ms,
        "recv_stamp_us": f.recv_stamp_us,
        "character_id": f.character_id,
        "link_states": [
            {
                "name": ls.name,
                "pose": {"position": _xyz(ls.pose.position), "orientation": _quat(ls.pose.orientation)},
                "twist": {"linear": _xyz(ls.twist.linear), "angular": _xyz(ls.twist.angular)},
                "accel": {"linear": _xyz(ls.accel.linear), "angular": _xyz(ls.accel.angular)},
            }
            for ls in links.links
        ],
        "zero_filled": sorted(links.zero_filled),
        "joint_state": {"name": list(m.joint_state.names), "position": list(m.joint_state.positions)},
        "transforms": [
            {
                "header": {"frame_id": t.parent_frame_id},
                "child_frame_id": t.child_frame_id,
                "transform": {"translation": _xyz(t.translation), "rotation": _quat(t.rotation)},
            }
            for t in m.transforms
        ],
        "com": None if m.com is None else {"point": _xyz(m.com.position)},
        "markers": [{"id": mk.point_id, "position": _xyz(mk.position)} for mk in f.markers],
    }


class JsonlSink:
    """One compact JSON object per line; ``path`` ``-`` writes to ``stream``."""

    def __init__(self, path: str, stream: Optional[IO[str]] = None):
        self.path = path
        self._owned = path != "-"
        try:
            self._fh = open(path, "w", encoding="utf-8") if self._owned else stream
        except OSError as exc:
            raise SinkError(f"jsonl sink {path}: {exc}") from exc
        self.records = 0

    def write(self, f: MotionFrame, m: BridgeMessages) -> None:
        try:
            self._fh.write(json.dumps(frame_record(f, m), separators=(",", ":"), allow_nan=False) + "\n")
        except (OSError, ValueError) as exc:
            raise SinkError(f"jsonl sink {self.path}: {exc}") from exc
        self.records += 1

    def close(self) -> None:
        try:
            self._fh.flush()
            if self._owned:
                self._fh.close()
        except OSError as exc:
            raise SinkError(f"jsonl sink {self.path}: {exc}") from exc


class LogSink:
    """Appends every received datagram to a replayable log file."""

    def __init__(self, path: str):
        self.path = path
        try:
            self._writer = LogWriter.open(path)
        except OSError as exc:
            raise SinkError(f"log sink {path}: {exc}") from exc

    def datagram(self, raw: bytes, recv_stamp_us: int) -> None:
        try:
            self._writer.write(raw, recv_stamp_us)
        except OSError as exc:
            raise SinkError(f"log sink {self.path}: {exc}") from exc

    def close(self) -> None:
        try:
            self._writer.close()
        except OSError as exc:
            raise SinkError(f"log sink {self.path}: {exc}") from exc


class UdpRelaySink:
    """Re-sends received datagrams unchanged."""

    def __init__(self, endpoint: Endpoint):
        if endpoint.transport is not Transport.UDP:
            raise SinkError(f"relay endpoint {endpoint} must be udp")
        self.endpoint = endpoint
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._addr = (endpoint.host, endpoint.port)

    def datagram(self, raw: bytes, recv_stamp_us: int) -> None:
        try:
            self._sock.sendto(raw, self._addr)
        except ConnectionRefusedError:
            # nobody listening on loopback yet; a relay is best-effort
            pass
        except OSError as exc:
            raise SinkError(f"udp relay {self.endpoint}: {exc}") from exc

    def close(self) -> None:
        self._sock.close()
