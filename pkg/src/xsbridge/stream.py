"""Reception of datagram streams and reassembly into per-sample frames."""

from __future__ import annotations

import collections
import enum
import logging
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .kinematics import JointId, joint_from_segments
from .protocol import (
    HEADER_SIZE,
    MAGIC,
    AngularKinematicsItem,
    Datagram,
    JointAngleItem,
    LinearKinematicsItem,
    MarkerItem,
    PayloadKind,
    PoseEulerItem,
    PoseQuaternionItem,
    ProtocolError,
    UnknownKind,
    parse_datagram,
    parse_header,
)

log = logging.getLogger(__name__)

DEFAULT_PORT = 9763
DEFAULT_CAPACITY = 8
DEFAULT_QUEUE_DEPTH = 256
BODY_SEGMENTS = 23

_U32 = 1 << 32
_HALF = 1 << 31


class StreamError(RuntimeError):
    pass


class BindFailed(StreamError):
    pass


class ConnectionLost(StreamError):
    pass


class Transport(str, enum.Enum):
    UDP = "udp"
    TCP = "tcp"


@dataclass(frozen=True)
class Endpoint:
    transport: Transport
    host: str
    port: int

    def __post_init__(self):
        object.__setattr__(self, "transport", Transport(self.transport))
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside 1..65535")

    @classmethod
    def parse(cls, text: str, default_host: str = "127.0.0.1") -> "Endpoint":
        """Parse ``udp://host:port``, ``tcp://host:port`` or ``host:port``."""
        transport = Transport.UDP
        if "://" in text:
            scheme, text = text.split("://", 1)
            transport = Transport(scheme.lower())
        host, sep, port = text.rpartition(":")
        if not sep:
            host, port = text, str(DEFAULT_PORT)
        return cls(transport, host or default_host, int(port))

    def __str__(self) -> str:
        return f"{self.transport.value}://{self.host}:{self.port}"


# -- frames ------------------------------------------------------------------


@dataclass
class MotionFrame:
    """Everything streamed for one sample, in wire units.

    Angles are degrees and angular rates deg/s, exactly as received. Maps are
    keyed by wire segment index (body segments are 1..23) or by JointId.
    """

    sample_counter: int
    time_code_ms: int = 0
    character_id: int = 0
    pose_quaternion: dict[int, PoseQuaternionItem] = field(default_factory=dict)
    pose_euler: dict[int, PoseEulerItem] = field(default_factory=dict)
    linear: dict[int, LinearKinematicsItem] = field(default_factory=dict)
    angular: dict[int, AngularKinematicsItem] = field(default_factory=dict)
    joint_angles: dict[JointId, JointAngleItem] = field(default_factory=dict)
    com: Optional[tuple[float, float, float]] = None
    markers: tuple[MarkerItem, ...] = ()
    meta_text: tuple[str, ...] = ()
    scale_text: tuple[str, ...] = ()
    recv_stamp_us: int = field(default=0, compare=False)

    def kinds(self) -> frozenset[PayloadKind]:
        present = {
            PayloadKind.PoseQuaternion: self.pose_quaternion,
            PayloadKind.PoseEuler: self.pose_euler,
            PayloadKind.LinearKinematics: self.linear,
            PayloadKind.AngularKinematics: self.angular,
            PayloadKind.JointAngles: self.joint_angles,
            PayloadKind.VirtualMarkers: self.markers,
            PayloadKind.MetaText: self.meta_text,
            PayloadKind.ScaleInfo: self.scale_text,
        }
        out = {k for k, v in present.items() if v}
        if self.com is not None:
            out.add(PayloadKind.CenterOfMass)
        return frozenset(out)


def _keyed(items, key, what: str, sample: int) -> dict:
    out = {}
    for it in items:
        k = key(it)
        if k in out:
            log.warning("sample %d: duplicate %s %s, keeping the later one", sample, what, k)
        out[k] = it
    return out


def build_frame(sample: int, time_code_ms: int, character_id: int,
                items_by_kind: dict[PayloadKind, list], recv_stamp_us: int = 0) -> MotionFrame:
    """Merge the decoded items of one sample into a frame."""
    f = MotionFrame(sample, time_code_ms, character_id, recv_stamp_us=recv_stamp_us)
    for kind, items in items_by_kind.items():
        if kind is PayloadKind.PoseQuaternion:
            f.pose_quaternion = _keyed(items, lambda it: it.segment, "segment", sample)
        elif kind is PayloadKind.PoseEuler:
            f.pose_euler = _keyed(items, lambda it: it.segment, "segment", sample)
        elif kind is PayloadKind.LinearKinematics:
            f.linear = _keyed(items, lambda it: it.segment, "segment", sample)
        elif kind is PayloadKind.AngularKinematics:
            f.angular = _keyed(items, lambda it: it.segment, "segment", sample)
        elif kind is PayloadKind.JointAngles:
            joints = {}
            for it in items:
                j = joint_from_segments(it.parent_segment, it.child_segment)
                if j is None:
                    log.warning("sample %d: joint points %d/%d match no joint",
                                sample, it.parent_point, it.child_point)
                    continue
                if j in joints:
                    log.warning("sample %d: duplicate joint %s", sample, j.name)
                joints[j] = it
            f.joint_angles = joints
        elif kind is PayloadKind.CenterOfMass:
            f.com = tuple(items[-1].position) if items else None
        elif kind is PayloadKind.VirtualMarkers:
            f.markers = tuple(items)
        elif kind is PayloadKind.MetaText:
            f.meta_text = tuple(items)
        elif kind is PayloadKind.ScaleInfo:
            f.scale_text = tuple(items)
    return f


# -- assembly ----------------------------------------------------------------


@dataclass(frozen=True)
class StreamStats:
    datagrams_received: int = 0
    frames_emitted: int = 0
    frames_dropped: int = 0
    stale_discarded: int = 0
    unknown_kind_count: int = 0
    duplicates: int = 0
    parse_errors: int = 0
    queue_overflow: int = 0
    other_character: int = 0
    estimated_rate_hz: float = 0.0


class _Partial:
    __slots__ = ("sample", "raw", "time_code_ms", "character_id", "kinds", "recv_stamp_us")

    def __init__(self, sample: int, raw: int, d: Datagram, recv_stamp_us: int):
        self.sample = sample
        self.raw = raw
        self.time_code_ms = d.header.time_code_ms
        self.character_id = d.header.character_id
        self.recv_stamp_us = recv_stamp_us
        # kind -> {index: datagram}
        self.kinds: dict[PayloadKind, dict[int, Datagram]] = {}

    def add(self, d: Datagram) -> bool:
        """Store ``d``; False if it was already present."""
        slots = self.kinds.setdefault(d.header.kind, {})
        idx = d.header.datagram_index
        if idx in slots:
            return False
        slots[idx] = d
        return True

    def internally_complete(self) -> bool:
        for slots in self.kinds.values():
            last = [i for i, d in slots.items() if d.header.is_last_datagram]
            if len(last) != 1 or len(slots) != last[0] + 1:
                return False
        return True

    def seen(self) -> frozenset:
        return frozenset(self.kinds)

    def frame(self) -> MotionFrame:
        items = {}
        for kind, slots in self.kinds.items():
            merged = []
            for i in sorted(slots):
                merged.extend(slots[i].items)
            items[kind] = merged
        return build_frame(self.raw, self.time_code_ms, self.character_id, items,
                           self.recv_stamp_us)


class AssemblerState:
    """Collects datagrams into frames.

    A sample may span several payload kinds, each split over datagrams
    0..k with the last flag on k. Because the protocol does not announce
    which kinds a sample carries, the expected kind set is either given up
    front (``expected_kinds``) or learned from the stream:

    * a sample whose kind set equals the expected set, with every kind
      complete, is emitted as soon as its last datagram arrives;
    * otherwise it is finalized once a datagram two or more samples newer
      arrives, when more than ``capacity`` samples are buffered, or on
      :meth:`flush`. A finalized sample is emitted if every kind it carries is
      complete and nothing expected is missing, and dropped otherwise.

    While learning, the kind set of each sample emitted through finalization
    becomes the expected set. A kind first seen on an already-finalized
    sample joins the expected set; two consecutive samples finalized with
    the same smaller set replace it.

    Frames leave strictly in sample order. Sample counters are compared in
    modulo-2**32 serial arithmetic so a wrap continues the sequence.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY,
                 expected_kinds: Optional[Iterable[PayloadKind]] = None,
                 character_id: Optional[int] = None):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.fixed_kinds = frozenset(expected_kinds) if expected_kinds is not None else None
        self.expected: frozenset = self.fixed_kinds or frozenset()
        self.character_id = character_id
        self._partials: dict[int, _Partial] = {}
        self._ref_raw: Optional[int] = None
        self._ref_unwrapped = 0
        self._max_seen: Optional[int] = None
        self.watermark: Optional[int] = None  # highest finalized (unwrapped) sample
        self.last_emitted: Optional[int] = None
        self._shrink_candidate: Optional[frozenset] = None
        self._warned_unknown: set[int] = set()
        self._emit_times: collections.deque = collections.deque()
        self._now = 0.0
        self._c = collections.Counter()
        self.pending: collections.deque = collections.deque()

    # counters are bumped by name; stats() snapshots them
    def count(self, name: str, n: int = 1) -> None:
        self._c[name] += n

    def _unwrap(self, raw: int) -> int:
        if self._ref_raw is None:
            self._ref_raw, self._ref_unwrapped = raw, raw
            return raw
        delta = ((raw - self._ref_raw + _HALF) % _U32) - _HALF
        value = self._ref_unwrapped + delta
        if delta > 0:
            self._ref_raw, self._ref_unwrapped = raw, value
        return value

    def feed(self, d: Datagram, now: Optional[float] = None,
             recv_stamp_us: Optional[int] = None) -> list[MotionFrame]:
        """Add one datagram; return the frames it releases (usually 0 or 1)."""
        self._now = time.monotonic() if now is None else now
        self._c["datagrams_received"] += 1
        h = d.header
        if isinstance(h.kind, UnknownKind):
            self._c["unknown_kind_count"] += 1
            if h.kind.code not in self._warned_unknown:
                self._warned_unknown.add(h.kind.code)
                log.warning("skipping unknown payload kind %02d", h.kind.code)
            return []
        if self.character_id is not None and h.character_id != self.character_id:
            self._c["other_character"] += 1
            return []

        sample = self._unwrap(h.sample_counter)
        if self.watermark is not None and sample <= self.watermark:
            self._c["stale_discarded"] += 1
            if self.fixed_kinds is None and h.kind not in self.expected and self.expected:
                log.info("payload kind %s joined the stream", h.kind.name)
                self.expected = self.expected | {h.kind}
            return []

        p = self._partials.get(sample)
        if p is None:
            if recv_stamp_us is None:
                recv_stamp_us = time.time_ns() // 1000
            p = self._partials[sample] = _Partial(sample, h.sample_counter, d, recv_stamp_us)
        if not p.add(d):
            self._c["duplicates"] += 1
        if self._max_seen is None or sample > self._max_seen:
            self._max_seen = sample
        return self._drain()

    def _drain(self) -> list[MotionFrame]:
        out = []
        while self._partials:
            head = min(self._partials)
            p = self._partials[head]
            if self.expected and p.seen() == self.expected and p.internally_complete():
                out.append(self._emit(p))
            elif self._max_seen >= head + 2 or len(self._partials) > self.capacity:
                f = self._finalize(p)
                if f is not None:
                    out.append(f)
            else:
                break
        return out

    def _finalize(self, p: _Partial) -> Optional[MotionFrame]:
        seen = p.seen()
        if p.internally_complete():
            if not self.expected or seen >= self.expected:
                if self.fixed_kinds is None:
                    self.expected = seen
                return self._emit(p)
            if self.fixed_kinds is None:
                if self._shrink_candidate == seen:
                    log.info("payload kinds %s left the stream",
                             sorted(k.name for k in self.expected - seen))
                    self.expected = seen
                    return self._emit(p)
                self._shrink_candidate = seen
        self._retire(p)
        return None

    def _retire(self, p: _Partial) -> None:
        del self._partials[p.sample]
        if self.watermark is None or p.sample > self.watermark:
            self.watermark = p.sample

    def _emit(self, p: _Partial) -> MotionFrame:
        self._retire(p)
        self._shrink_candidate = None
        if self.last_emitted is not None:
            self._c["frames_dropped"] += p.sample - self.last_emitted - 1
        self.last_emitted = p.sample
        self._c["frames_emitted"] += 1
        self._emit_times.append(self._now)
        self._prune_times()
        return p.frame()

    def _prune_times(self) -> None:
        while self._emit_times and self._emit_times[0] <= self._now - 1.0:
            self._emit_times.popleft()

    def flush(self) -> list[MotionFrame]:
        """Finalize everything buffered, e.g. at shutdown."""
        out = []
        while self._partials:
            f = self._finalize(self._partials[min(self._partials)])
            if f is not None:
                out.append(f)
        if self.watermark is not None and self.last_emitted is not None:
            self._c["frames_dropped"] += self.watermark - self.last_emitted
            self.last_emitted = self.watermark
        return out

    @property
    def buffered(self) -> int:
        return len(self._partials)

    def stats(self, now: Optional[float] = None) -> StreamStats:
        if now is not None:
            self._now = now
        self._prune_times()
        return StreamStats(
            datagrams_received=self._c["datagrams_received"],
            frames_emitted=self._c["frames_emitted"],
            frames_dropped=self._c["frames_dropped"],
            stale_discarded=self._c["stale_discarded"],
            unknown_kind_count=self._c["unknown_kind_count"],
            duplicates=self._c["duplicates"],
            parse_errors=self._c["parse_errors"],
            queue_overflow=self._c["queue_overflow"],
            other_character=self._c["other_character"],
            estimated_rate_hz=float(len(self._emit_times)),
        )


def assembler_feed(state: AssemblerState, d: Datagram, now: Optional[float] = None) -> Optional[MotionFrame]:
    """Feed one datagram and return the next released frame, if any.

    Prefer :meth:`AssemblerState.feed` when a single datagram can release
    several frames (after a gap); extra frames are kept for the next call.
    """
    state.pending.extend(state.feed(d, now))
    return state.pending.popleft() if state.pending else None


def stats(state: AssemblerState) -> StreamStats:
    return state.stats()


# -- TCP re-framing ----------------------------------------------------------


class TcpReframer:
    """Splits a byte stream into datagrams using the header payload size.

    Garbage between datagrams is skipped by scanning for the next magic.
    """

    def __init__(self):
        self._buf = bytearray()
        self.resyncs = 0

    def push(self, data: bytes) -> list[bytes]:
        self._buf += data
        out = []
        buf = self._buf
        while True:
            start = buf.find(MAGIC)
            if start < 0:
                # keep a possible partial magic at the tail
                keep = len(MAGIC) - 1
                if len(buf) > keep:
                    self.resyncs += 1
                    del buf[:len(buf) - keep]
                break
            if start > 0:
                self.resyncs += 1
                del buf[:start]
            if len(buf) < HEADER_SIZE:
                break
            try:
                h = parse_header(bytes(buf[:HEADER_SIZE]))
            except ProtocolError:
                del buf[:1]
                continue
            total = HEADER_SIZE + h.payload_size_bytes
            if len(buf) < total:
                break
            out.append(bytes(buf[:total]))
            del buf[:total]
        return out


# -- receive loop ------------------------------------------------------------


class _FrameQueue:
    """Bounded hand-off between ingest and consumer; drops the oldest when full."""

    def __init__(self, depth: int):
        self._q: collections.deque = collections.deque()
        self._depth = depth
        self._cv = threading.Condition()
        self.overflow = 0
        self.closed = False

    def put(self, item) -> None:
        with self._cv:
            if len(self._q) >= self._depth:
                self._q.popleft()
                self.overflow += 1
            self._q.append(item)
            self._cv.notify()

    def close(self) -> None:
        with self._cv:
            self.closed = True
            self._cv.notify_all()

    def get(self):
        """Next item, or None once closed and drained."""
        with self._cv:
            while not self._q and not self.closed:
                self._cv.wait()
            return self._q.popleft() if self._q else None


@dataclass(frozen=True)
class ReconnectPolicy:
    attempts: int = 0
    delay_s: float = 1.0


class Receiver:
    """Owns the socket and the assembler; hands frames to ``handler``.

    ``on_datagram(raw_bytes, recv_stamp_us)`` sees every received datagram
    before parsing, on the ingest thread. ``handler`` runs on a separate
    consumer thread fed through a bounded drop-oldest queue.
    """

    def __init__(self, endpoint: Endpoint, handler: Callable[[MotionFrame], None], *,
                 assembler: Optional[AssemblerState] = None,
                 on_datagram: Optional[Callable[[bytes, int], None]] = None,
                 queue_depth: int = DEFAULT_QUEUE_DEPTH,
                 reconnect: ReconnectPolicy = ReconnectPolicy(),
                 idle_timeout_s: Optional[float] = None,
                 poll_s: float = 0.05,
                 bound: Optional[threading.Event] = None):
        self.endpoint = endpoint
        self.handler = handler
        self.assembler = assembler or AssemblerState()
        self.on_datagram = on_datagram
        self.queue = _FrameQueue(queue_depth)
        self.reconnect = reconnect
        self.idle_timeout_s = idle_timeout_s
        self.poll_s = poll_s
        self.bound = bound or threading.Event()
        self.local_address: Optional[tuple] = None
        self._handler_error: Optional[BaseException] = None
        self._last_rx: Optional[float] = None

    def stats(self) -> StreamStats:
        self.assembler._c["queue_overflow"] = self.queue.overflow
        return self.assembler.stats()

    def _consume(self, stop: threading.Event) -> None:
        while True:
            f = self.queue.get()
            if f is None:
                return
            try:
                self.handler(f)
            except BaseException as exc:  # surfaced by run()
                self._handler_error = exc
                stop.set()
                self.queue.close()
                return

    def _ingest(self, raw: bytes) -> None:
        stamp = time.time_ns() // 1000
        self._last_rx = time.monotonic()
        if self.on_datagram is not None:
            self.on_datagram(raw, stamp)
        try:
            d = parse_datagram(raw)
        except ProtocolError as exc:
            self.assembler.count("parse_errors")
            log.debug("dropping malformed datagram: %s", exc)
            return
        for f in self.assembler.feed(d, recv_stamp_us=stamp):
            self.queue.put(f)

    def _idle(self) -> bool:
        return (self.idle_timeout_s is not None and self._last_rx is not None
                and time.monotonic() - self._last_rx > self.idle_timeout_s)

    def run(self, stop: Optional[threading.Event] = None) -> StreamStats:
        stop = stop or threading.Event()
        worker = threading.Thread(target=self._consume, args=(stop,), name="frame-consumer", daemon=True)
        worker.start()
        try:
            if self.endpoint.transport is Transport.UDP:
                self._run_udp(stop)
            else:
                self._run_tcp(stop)
        finally:
            if self._handler_error is None:
                for f in self.assembler.flush():
                    self.queue.put(f)
            self.queue.close()
            worker.join()
        if self._handler_error is not None:
            raise self._handler_error
        return self.stats()

    def _run_udp(self, stop: threading.Event) -> None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
            sock.bind((self.endpoint.host, self.endpoint.port))
        except OSError as exc:
            sock.close()
            raise BindFailed(f"cannot bind {self.endpoint}: {exc}") from exc
        self.local_address = sock.getsockname()
        self.bound.set()
        log.info("bound %s", self.endpoint)
        sock.settimeout(self.poll_s)
        with sock:
            while not stop.is_set() and not self._idle():
                try:
                    raw = sock.recv(65535)
                except socket.timeout:
                    continue
                self._ingest(raw)

    def _connect(self) -> socket.socket:
        try:
            sock = socket.create_connection((self.endpoint.host, self.endpoint.port), timeout=5.0)
        except OSError as exc:
            raise ConnectionLost(f"cannot connect to {self.endpoint}: {exc}") from exc
        sock.settimeout(self.poll_s)
        return sock

    def _run_tcp(self, stop: threading.Event) -> None:
        attempts_left = self.reconnect.attempts
        first = True
        while not stop.is_set():
            try:
                sock = self._connect()
            except ConnectionLost:
                if first or attempts_left <= 0:
                    raise
                attempts_left -= 1
                stop.wait(self.reconnect.delay_s)
                continue
            first = False
            self.local_address = sock.getsockname()
            self.bound.set()
            log.info("connected %s", self.endpoint)
            reframer = TcpReframer()
            with sock:
                while not stop.is_set() and not self._idle():
                    try:
                        data = sock.recv(65536)
                    except socket.timeout:
                        continue
                    except OSError as exc:
                        data = b""
                        log.warning("TCP receive failed: %s", exc)
                    if not data:
                        break
                    for raw in reframer.push(data):
                        self._ingest(raw)
                else:
                    return
            if attempts_left <= 0:
                raise ConnectionLost(f"connection to {self.endpoint} closed")
            attempts_left -= 1
            log.warning("connection to %s lost, reconnecting", self.endpoint)
            stop.wait(self.reconnect.delay_s)


def receive_loop(endpoint: Endpoint, handler: Callable[[MotionFrame], None],
                 stop: Optional[threading.Event] = None, **kwargs) -> StreamStats:
    """Receive until ``stop`` is set; returns the final statistics."""
    return Receiver(endpoint, handler, **kwargs).run(stop)
