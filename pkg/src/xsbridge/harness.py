"""Synthetic motion, datagram emission, and datagram log record/replay.

Synthetic kinematics are exact: joint angles are sums of sinusoids and
segment velocities/accelerations come from analytic derivatives propagated
down the skeleton, so tests downstream have closed-form references.
"""

from __future__ import annotations

import logging
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Optional, Sequence

import numpy as np

from .kinematics import (
    DOF_AXES,
    JointId,
    ScaleData,
    SegmentId,
    default_scale,
    npose_positions,
    quaternion_to_euler_zxy,
    scale_to_text,
)
from .protocol import (
    HEADER_SIZE,
    AngularKinematicsItem,
    Datagram,
    DatagramHeader,
    JointAngleItem,
    LinearKinematicsItem,
    MarkerItem,
    PayloadKind,
    PoseEulerItem,
    PoseQuaternionItem,
    CenterOfMassItem,
    item_size,
    parse_datagram,
    point_id,
    serialize_datagram,
)
from .stream import Endpoint, MotionFrame, TcpReframer, Transport, build_frame

log = logging.getLogger(__name__)

RAD2DEG = 180.0 / math.pi
AMPLITUDE_LIMIT = math.pi / 2 - 1e-2
MAX_RATE_HZ = 240

STANDARD_KINDS = (
    PayloadKind.PoseQuaternion,
    PayloadKind.JointAngles,
    PayloadKind.LinearKinematics,
    PayloadKind.AngularKinematics,
    PayloadKind.CenterOfMass,
)
ALL_KINDS = tuple(PayloadKind)


class HarnessError(RuntimeError):
    pass


class PayloadTooSmall(ValueError):
    pass


class SendFailed(HarnessError):
    pass


class BadLogMagic(HarnessError):
    pass


class LogCorrupt(HarnessError):
    pass


# -- motion scripts ----------------------------------------------------------


@dataclass(frozen=True)
class Sinusoid:
    joint: JointId
    axis: str
    amplitude: float  # rad
    frequency: float  # Hz

    def __post_init__(self):
        if self.axis not in DOF_AXES:
            raise ValueError(f"axis {self.axis!r} not one of {DOF_AXES}")
        if not abs(self.amplitude) < AMPLITUDE_LIMIT:
            raise ValueError(f"amplitude {self.amplitude} rad must stay below {AMPLITUDE_LIMIT:.4f}")
        if not (math.isfinite(self.frequency) and self.frequency >= 0):
            raise ValueError(f"frequency {self.frequency}")

    def angle(self, t: float) -> float:
        return self.amplitude * math.sin(2 * math.pi * self.frequency * t)


@dataclass(frozen=True)
class MotionScript:
    """N-pose plus a (possibly empty) sum of per-DoF sinusoids."""

    motions: tuple[Sinusoid, ...] = ()
    scale: ScaleData = field(default_factory=default_scale)
    character_id: int = 0

    def __post_init__(self):
        per_dof: dict = {}
        for m in self.motions:
            key = (m.joint, m.axis)
            per_dof[key] = per_dof.get(key, 0.0) + abs(m.amplitude)
        for (j, a), total in per_dof.items():
            if not total < AMPLITUDE_LIMIT:
                raise ValueError(f"{j.name}_{a}: combined amplitude {total} too large")

    @classmethod
    def static_npose(cls, scale: Optional[ScaleData] = None, character_id: int = 0) -> "MotionScript":
        return cls((), scale or default_scale(), character_id)

    @classmethod
    def sinusoidal(cls, joint: JointId, axis: str, amplitude: float, frequency: float,
                   scale: Optional[ScaleData] = None, character_id: int = 0) -> "MotionScript":
        return cls((Sinusoid(joint, axis, amplitude, frequency),), scale or default_scale(), character_id)

    @classmethod
    def composite(cls, scripts: Sequence["MotionScript"], scale: Optional[ScaleData] = None,
                  character_id: int = 0) -> "MotionScript":
        motions = tuple(m for s in scripts for m in s.motions)
        return cls(motions, scale or default_scale(), character_id)

    def joint_angles(self, t: float) -> dict[JointId, tuple[float, float, float]]:
        """Analytic (z, x, y) angles in radians."""
        out = {j: [0.0, 0.0, 0.0] for j in JointId}
        for m in self.motions:
            out[m.joint][DOF_AXES.index(m.axis)] += m.angle(t)
        return {j: tuple(v) for j, v in out.items()}

    def joint_derivatives(self, t: float):
        """(angles, rates, accelerations) per joint as 3-arrays, radians."""
        ang = {j: np.zeros(3) for j in JointId}
        rate = {j: np.zeros(3) for j in JointId}
        acc = {j: np.zeros(3) for j in JointId}
        for m in self.motions:
            w = 2 * math.pi * m.frequency
            i = DOF_AXES.index(m.axis)
            ang[m.joint][i] += m.amplitude * math.sin(w * t)
            rate[m.joint][i] += m.amplitude * w * math.cos(w * t)
            acc[m.joint][i] += -m.amplitude * w * w * math.sin(w * t)
        return ang, rate, acc

    def describe(self) -> str:
        if not self.motions:
            return "static_npose"
        return "+".join(f"{m.joint.name}:{m.axis}:{m.amplitude!r}:{m.frequency!r}" for m in self.motions)


def parse_script(text: str, scale: Optional[ScaleData] = None, character_id: int = 0) -> MotionScript:
    """``static`` or ``joint:axis:amplitude_rad:freq_hz[+...]``."""
    text = text.strip()
    if text in ("", "static", "static_npose", "npose"):
        return MotionScript.static_npose(scale, character_id)
    motions = []
    for part in text.split("+"):
        if part.startswith("sinusoidal:"):
            part = part[len("sinusoidal:"):]
        fields = part.split(":")
        if len(fields) != 4:
            raise ValueError(f"bad motion {part!r}; expected joint:axis:amplitude:frequency")
        name, axis, amp, freq = fields
        try:
            joint = JointId[name]
        except KeyError:
            raise ValueError(f"unknown joint {name!r}") from None
        motions.append(Sinusoid(joint, axis, float(amp), float(freq)))
    return MotionScript(tuple(motions), scale or default_scale(), character_id)


# -- kinematics --------------------------------------------------------------

_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])
_EZ = np.array([0.0, 0.0, 1.0])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _cross(a, b) -> np.ndarray:
    # np.cross carries heavy per-call overhead for 3-vectors
    a0, a1, a2 = a.tolist()
    b0, b1, b2 = b.tolist()
    return np.array((a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0))


@dataclass
class SegmentState:
    """Global kinematics of one segment in SI units (rad, rad/s, rad/s^2)."""

    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    angular_velocity: np.ndarray
    angular_acceleration: np.ndarray


def synth_kinematics(script: MotionScript, t: float) -> dict[SegmentId, SegmentState]:
    """Forward kinematics with exact first and second time derivatives.

    The pelvis stays fixed at its N-pose position. For a joint with ZXY
    angles (a, b, c) the child's relative angular velocity, in the parent
    frame, is ``ez*a' + Rz ex*b' + Rz Rx ey*c'``.
    """
    ang, rate, acc = script.joint_derivatives(t)
    zero = np.zeros(3)
    root = npose_positions(script.scale)[SegmentId.Pelvis]
    states = {SegmentId.Pelvis: SegmentState(np.eye(3), np.array(root, dtype=float),
                                             zero.copy(), zero.copy(), zero.copy(), zero.copy())}
    for j in JointId:
        p = states[j.parent]
        (a, b, c), (da, db, dc), (dda, ddb, ddc) = ang[j], rate[j], acc[j]
        rz, rx, ry = _rz(a), _rx(b), _ry(c)
        rzx = rz @ rx
        e1, e2, e3 = _EZ, rz @ _EX, rzx @ _EY
        w_rel = e1 * da + e2 * db + e3 * dc
        # d/dt(Rz ex) = (ez a') x Rz ex ; d/dt(Rz Rx ey) = (ez a' + Rz ex b') x Rz Rx ey
        dw_rel = (e1 * dda + e2 * ddb + e3 * ddc
                  + _cross(e1 * da, e2) * db
                  + _cross(e1 * da + e2 * db, e3) * dc)
        r_off = p.rotation @ np.asarray(script.scale.offsets[j.child])
        w_rel_g = p.rotation @ w_rel
        states[j.child] = SegmentState(
            rotation=p.rotation @ rzx @ ry,
            position=p.position + r_off,
            velocity=p.velocity + _cross(p.angular_velocity, r_off),
            acceleration=(p.acceleration + _cross(p.angular_acceleration, r_off)
                          + _cross(p.angular_velocity, _cross(p.angular_velocity, r_off))),
            angular_velocity=p.angular_velocity + w_rel_g,
            angular_acceleration=(p.angular_acceleration + _cross(p.angular_velocity, w_rel_g)
                                  + p.rotation @ dw_rel),
        )
    return states


def matrix_to_quaternion(r: np.ndarray) -> tuple[float, float, float, float]:
    """Unit quaternion (w >= 0) from a rotation matrix."""
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = ((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)
    n = math.sqrt(sum(c * c for c in q))
    sign = -1.0 if q[0] < 0 else 1.0
    return tuple(float(sign * c / n) for c in q)


def _t3(v) -> tuple[float, float, float]:
    return (float(v[0]), float(v[1]), float(v[2]))


# a few anatomical landmarks, as (segment, point offset, position in segment frame / height)
_LANDMARKS = (
    (SegmentId.Head, 1, (0.0, 0.0, 0.12)),
    (SegmentId.RightFoot, 1, (-0.030, 0.0, -0.039)),
    (SegmentId.LeftFoot, 1, (-0.030, 0.0, -0.039)),
    (SegmentId.RightToe, 1, (0.030, 0.0, -0.009)),
    (SegmentId.LeftToe, 1, (0.030, 0.0, -0.009)),
)


def synth_frame(script: MotionScript, t: float, sample_counter: int = 0,
                kinds: Sequence[PayloadKind] = STANDARD_KINDS,
                states: Optional[dict[SegmentId, SegmentState]] = None) -> MotionFrame:
    """One frame of ``script`` at time ``t`` (s), in wire units, float64 precision."""
    if t < 0:
        raise ValueError("t must be >= 0")
    kinds = frozenset(kinds)
    states = states if states is not None else synth_kinematics(script, t)
    quats = {s: matrix_to_quaternion(st.rotation) for s, st in states.items()}
    items: dict[PayloadKind, list] = {}

    if PayloadKind.PoseQuaternion in kinds:
        items[PayloadKind.PoseQuaternion] = [
            PoseQuaternionItem(int(s), _t3(states[s].position), quats[s]) for s in SegmentId]
    if PayloadKind.PoseEuler in kinds:
        eul = []
        for s in SegmentId:
            r = quaternion_to_euler_zxy(quats[s])
            eul.append(PoseEulerItem(int(s), _t3(states[s].position),
                                     (r.z * RAD2DEG, r.x * RAD2DEG, r.y * RAD2DEG)))
        items[PayloadKind.PoseEuler] = eul
    if PayloadKind.LinearKinematics in kinds:
        items[PayloadKind.LinearKinematics] = [
            LinearKinematicsItem(int(s), _t3(st.position), _t3(st.velocity), _t3(st.acceleration))
            for s, st in ((s, states[s]) for s in SegmentId)]
    if PayloadKind.AngularKinematics in kinds:
        items[PayloadKind.AngularKinematics] = [
            AngularKinematicsItem(int(s), quats[s], _t3(st.angular_velocity * RAD2DEG),
                                  _t3(st.angular_acceleration * RAD2DEG))
            for s, st in ((s, states[s]) for s in SegmentId)]
    if PayloadKind.JointAngles in kinds:
        angles = script.joint_angles(t)
        items[PayloadKind.JointAngles] = [
            JointAngleItem(point_id(j.parent), point_id(j.child),
                           tuple(a * RAD2DEG for a in angles[j]))
            for j in JointId]
    if PayloadKind.CenterOfMass in kinds:
        items[PayloadKind.CenterOfMass] = [CenterOfMassItem(center_of_mass(script.scale, states))]
    if PayloadKind.VirtualMarkers in kinds:
        h = script.scale.height_m or 1.70
        items[PayloadKind.VirtualMarkers] = [
            MarkerItem(point_id(seg, off), tuple(c * h for c in local)) for seg, off, local in _LANDMARKS]
    if PayloadKind.MetaText in kinds:
        items[PayloadKind.MetaText] = [f"name:synthetic\nscript:{script.describe()}"]
    if PayloadKind.ScaleInfo in kinds:
        items[PayloadKind.ScaleInfo] = [scale_to_text(script.scale)]

    return build_frame(sample_counter, int(round(t * 1000)), script.character_id, items)


def center_of_mass(scale: ScaleData, states: dict[SegmentId, SegmentState]) -> tuple[float, float, float]:
    total = math.fsum(scale.mass_fractions[s] for s in SegmentId)
    return tuple(
        math.fsum(scale.mass_fractions[s] * float(states[s].position[k]) for s in SegmentId) / total
        for k in range(3))


# -- frames <-> datagrams ----------------------------------------------------

_F32 = struct.Struct(">f")


def _q(v: float) -> float:
    return _F32.unpack(_F32.pack(v))[0]


def quantize_frame(f: MotionFrame) -> MotionFrame:
    """The frame as it survives the wire (every float rounded to float32)."""
    out = []
    for d in frame_to_datagrams(f, 65000):
        out.append(parse_datagram(serialize_datagram(d)))
    items: dict = {}
    for d in out:
        items.setdefault(d.header.kind, []).extend(d.items)
    return build_frame(f.sample_counter, f.time_code_ms, f.character_id, items, f.recv_stamp_us)


def frame_items(f: MotionFrame) -> dict[PayloadKind, list]:
    """Items per payload kind in wire order."""
    items: dict[PayloadKind, list] = {}
    if f.pose_euler:
        items[PayloadKind.PoseEuler] = [f.pose_euler[k] for k in sorted(f.pose_euler)]
    if f.pose_quaternion:
        items[PayloadKind.PoseQuaternion] = [f.pose_quaternion[k] for k in sorted(f.pose_quaternion)]
    if f.markers:
        items[PayloadKind.VirtualMarkers] = list(f.markers)
    if f.meta_text:
        items[PayloadKind.MetaText] = list(f.meta_text)
    if f.scale_text:
        items[PayloadKind.ScaleInfo] = list(f.scale_text)
    if f.joint_angles:
        items[PayloadKind.JointAngles] = [f.joint_angles[j] for j in JointId if j in f.joint_angles]
    if f.linear:
        items[PayloadKind.LinearKinematics] = [f.linear[k] for k in sorted(f.linear)]
    if f.angular:
        items[PayloadKind.AngularKinematics] = [f.angular[k] for k in sorted(f.angular)]
    if f.com is not None:
        items[PayloadKind.CenterOfMass] = [CenterOfMassItem(tuple(f.com))]
    return items


def frame_to_datagrams(f: MotionFrame, max_payload_bytes: int = 1400) -> list[Datagram]:
    """Split a frame into datagrams, one run of indices per payload kind."""
    out = []
    for kind, items in frame_items(f).items():
        chunks: list[list] = [[]]
        used = 0
        for it in items:
            size = item_size(kind, it)
            if size > max_payload_bytes:
                raise PayloadTooSmall(
                    f"{kind.name} item of {size} bytes exceeds max_payload_bytes={max_payload_bytes}")
            if used + size > max_payload_bytes:
                chunks.append([])
                used = 0
            chunks[-1].append(it)
            used += size
        if len(chunks) > 0x80:
            raise PayloadTooSmall(f"{kind.name} needs {len(chunks)} datagrams, the index field allows 128")
        for i, chunk in enumerate(chunks):
            header = DatagramHeader(
                kind=kind,
                sample_counter=f.sample_counter,
                datagram_index=i,
                is_last_datagram=i == len(chunks) - 1,
                item_count=len(chunk),
                time_code_ms=f.time_code_ms,
                character_id=f.character_id,
                payload_size_bytes=sum(item_size(kind, it) for it in chunk),
            )
            out.append(Datagram(header, tuple(chunk)))
    return out


# -- emission ----------------------------------------------------------------


@dataclass(frozen=True)
class EmissionReport:
    frames_sent: int
    datagrams_sent: int
    bytes_sent: int
    duration_s: float
    jitter_mean_ms: float
    jitter_max_ms: float


class _Sender:
    """UDP sendto, or a TCP server that waits for one client."""

    def __init__(self, endpoint: Endpoint, accept_timeout_s: float = 10.0):
        self.endpoint = endpoint
        self._conn = None
        try:
            if endpoint.transport is Transport.UDP:
                self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, 1 << 22)
            else:
                self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
                self._sock.bind((endpoint.host, endpoint.port))
                self._sock.listen(1)
                self._sock.settimeout(accept_timeout_s)
                self._conn, _ = self._sock.accept()
        except OSError as exc:
            raise SendFailed(f"{endpoint}: {exc}") from exc

    def send(self, raw: bytes) -> None:
        try:
            if self._conn is not None:
                self._conn.sendall(raw)
            else:
                self._sock.sendto(raw, (self.endpoint.host, self.endpoint.port))
        except OSError as exc:
            raise SendFailed(f"{self.endpoint}: {exc}") from exc

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
        self._sock.close()


def _sleep_until(deadline: float) -> None:
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            return
        time.sleep(remaining if remaining > 0.002 else 0)


def stream_synthetic(endpoint: Endpoint, rate_hz: float, script: MotionScript, duration_s: float, *,
                     start_sample: int = 0, kinds: Sequence[PayloadKind] = STANDARD_KINDS,
                     max_payload_bytes: int = 1400, stop: Optional[threading.Event] = None) -> EmissionReport:
    """Send ``round(rate_hz * duration_s)`` frames on a fixed schedule.

    Sample ``k`` carries the script evaluated at ``t = k / rate_hz``.
    """
    if not (1 <= rate_hz <= MAX_RATE_HZ):
        raise ValueError(f"rate {rate_hz} Hz outside 1..{MAX_RATE_HZ}")
    if duration_s < 0:
        raise ValueError("duration must be >= 0")
    n_frames = int(round(rate_hz * duration_s))
    sender = _Sender(endpoint)
    period = 1.0 / rate_hz
    lateness = []
    n_dgrams = n_bytes = 0
    t0 = time.perf_counter()
    try:
        for k in range(n_frames):
            if stop is not None and stop.is_set():
                break
            # build ahead of the deadline, then send on time
            f = synth_frame(script, k / rate_hz, (start_sample + k) & 0xFFFFFFFF, kinds)
            raws = [serialize_datagram(d) for d in frame_to_datagrams(f, max_payload_bytes)]
            deadline = t0 + k * period
            _sleep_until(deadline)
            lateness.append(time.perf_counter() - deadline)
            for raw in raws:
                sender.send(raw)
                n_dgrams += 1
                n_bytes += len(raw)
    finally:
        sender.close()
    elapsed = time.perf_counter() - t0
    return EmissionReport(
        frames_sent=len(lateness),
        datagrams_sent=n_dgrams,
        bytes_sent=n_bytes,
        duration_s=elapsed,
        jitter_mean_ms=1000 * float(np.mean(lateness)) if lateness else 0.0,
        jitter_max_ms=1000 * float(np.max(lateness)) if lateness else 0.0,
    )


# -- log files ---------------------------------------------------------------

LOG_MAGIC = b"XBRLOG01"
_RECORD = struct.Struct(">IQ")
MAX_RECORD_BYTES = HEADER_SIZE + 0xFFFF


@dataclass(frozen=True)
class LogRecord:
    recv_timestamp_us: int
    data: bytes


class LogWriter:
    """Append-only datagram log; timestamps are forced strictly increasing."""

    def __init__(self, fh: BinaryIO, write_magic: bool = True):
        self._fh = fh
        self._last_ts: Optional[int] = None
        self.records = 0
        if write_magic:
            fh.write(LOG_MAGIC)

    @classmethod
    def open(cls, path) -> "LogWriter":
        return cls(open(path, "wb"))

    def write(self, data: bytes, recv_timestamp_us: Optional[int] = None) -> None:
        if not 0 < len(data) <= MAX_RECORD_BYTES:
            raise LogCorrupt(f"record of {len(data)} bytes outside 1..{MAX_RECORD_BYTES}")
        ts = time.time_ns() // 1000 if recv_timestamp_us is None else recv_timestamp_us
        if self._last_ts is not None and ts <= self._last_ts:
            ts = self._last_ts + 1
        self._last_ts = ts
        self._fh.write(_RECORD.pack(len(data), ts))
        self._fh.write(data)
        self.records += 1

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> Iterator[LogRecord]:
    with open(path, "rb") as fh:
        magic = fh.read(len(LOG_MAGIC))
        if magic != LOG_MAGIC:
            raise BadLogMagic(f"{path}: magic {magic!r}, expected {LOG_MAGIC!r}")
        last_ts = None
        offset = len(LOG_MAGIC)
        while True:
            head = fh.read(_RECORD.size)
            if not head:
                return
            if len(head) < _RECORD.size:
                raise LogCorrupt(f"{path}: truncated record header at byte {offset}")
            length, ts = _RECORD.unpack(head)
            if not 0 < length <= MAX_RECORD_BYTES:
                raise LogCorrupt(f"{path}: record length {length} at byte {offset}")
            data = fh.read(length)
            if len(data) < length:
                raise LogCorrupt(f"{path}: truncated record at byte {offset}")
            if last_ts is not None and ts <= last_ts:
                raise LogCorrupt(f"{path}: timestamp went backwards at byte {offset}")
            last_ts = ts
            offset += _RECORD.size + length
            yield LogRecord(ts, data)


@dataclass(frozen=True)
class RecordReport:
    records: int
    bytes: int
    duration_s: float


def record(endpoint: Endpoint, file_path, *, stop: Optional[threading.Event] = None,
           max_records: Optional[int] = None, duration_s: Optional[float] = None,
           idle_timeout_s: Optional[float] = None, ready: Optional[threading.Event] = None,
           poll_s: float = 0.05) -> RecordReport:
    """Write every received datagram, byte for byte, to a log file.

    UDP: listens on the endpoint. TCP: connects and re-frames the stream.
    Stops on ``stop``, after ``max_records``, ``duration_s``, or
    ``idle_timeout_s`` without traffic (counted from the first datagram).
    """
    stop = stop or threading.Event()
    n_bytes = 0
    try:
        if endpoint.transport is Transport.UDP:
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
            sock.bind((endpoint.host, endpoint.port))
            reframer = None
        else:
            sock = socket.create_connection((endpoint.host, endpoint.port), timeout=5.0)
            reframer = TcpReframer()
    except OSError as exc:
        raise HarnessError(f"{endpoint}: {exc}") from exc
    sock.settimeout(poll_s)
    if ready is not None:
        ready.set()
    log.info("recording %s to %s", endpoint, file_path)
    t0 = time.monotonic()
    last_rx = None
    try:
        writer = LogWriter.open(file_path)
    except OSError as exc:
        sock.close()
        raise HarnessError(f"{file_path}: {exc}") from exc
    with sock, writer:
        while not stop.is_set():
            now = time.monotonic()
            if duration_s is not None and now - t0 >= duration_s:
                break
            if idle_timeout_s is not None and last_rx is not None and now - last_rx > idle_timeout_s:
                break
            if max_records is not None and writer.records >= max_records:
                break
            try:
                data = sock.recv(65536)
            except socket.timeout:
                continue
            stamp = time.time_ns() // 1000
            last_rx = time.monotonic()
            if reframer is None:
                chunks = [data]
            elif not data:
                break
            else:
                chunks = reframer.push(data)
            for raw in chunks:
                writer.write(raw, stamp)
                n_bytes += len(raw)
        records = writer.records
    return RecordReport(records, n_bytes, time.monotonic() - t0)


@dataclass(frozen=True)
class ReplayReport:
    records: int
    bytes: int
    duration_s: float
    log_span_s: float


def replay(file_path, endpoint: Endpoint, rate_scale: float = 1.0, *,
           stop: Optional[threading.Event] = None) -> ReplayReport:
    """Re-send logged datagrams with inter-record gaps divided by ``rate_scale``."""
    if not (rate_scale > 0 and math.isfinite(rate_scale)):
        raise ValueError(f"rate_scale must be positive, got {rate_scale}")
    try:
        records = list(read_log(file_path))
    except OSError as exc:
        raise HarnessError(f"{file_path}: {exc}") from exc
    sender = _Sender(endpoint)
    n_bytes = 0
    t0 = time.perf_counter()
    try:
        if records:
            base = records[0].recv_timestamp_us
            for rec in records:
                if stop is not None and stop.is_set():
                    break
                _sleep_until(t0 + (rec.recv_timestamp_us - base) / 1e6 / rate_scale)
                sender.send(rec.data)
                n_bytes += len(rec.data)
    finally:
        sender.close()
    span = (records[-1].recv_timestamp_us - records[0].recv_timestamp_us) / 1e6 if records else 0.0
    return ReplayReport(len(records), n_bytes, time.perf_counter() - t0, span)


def write_log(path, records: Sequence[LogRecord]) -> None:
    with LogWriter.open(path) as w:
        for rec in records:
            w.write(rec.data, rec.recv_timestamp_us)

