"""Binary datagram codec for the MXTP real-time streaming protocol.

Every datagram is a 24-byte big-endian header followed by ``item_count``
payload items whose layout depends on the payload kind::

    offset size  field
    0      4     magic "MXTP"
    4      2     kind code, two ASCII decimal digits
    6      4     sample counter (u32)
    10     1     bit 7: last datagram of this sample/kind, bits 0-6: index
    11     1     item count (u8)
    12     4     time code, ms (u32)
    16     1     character id
    17     1     body segment count
    18     1     prop count
    19     1     finger segment count
    20     2     reserved
    22     2     payload size in bytes (u16)

See ``docs/protocol.md`` for the item layouts.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, replace
from typing import NamedTuple, Tuple, Union

Vec3 = Tuple[float, float, float]
Quat = Tuple[float, float, float, float]

MAGIC = b"MXTP"
HEADER_SIZE = 24
MAX_DATAGRAM_INDEX = 0x7F
LAST_FLAG = 0x80
BODY_SEGMENTS = 23

_HEADER = struct.Struct(">4s2sIBBIBBBBHH")


class ProtocolError(ValueError):
    pass


class TooShort(ProtocolError):
    pass


class BadMagic(ProtocolError):
    pass


class PayloadSizeMismatch(ProtocolError):
    pass


class ItemCountMismatch(ProtocolError):
    pass


class FieldOverflow(ProtocolError):
    pass


class InvalidItem(ProtocolError):
    pass


class PayloadKind(enum.IntEnum):
    PoseEuler = 1
    PoseQuaternion = 2
    VirtualMarkers = 3
    MetaText = 12
    ScaleInfo = 13
    JointAngles = 20
    LinearKinematics = 21
    AngularKinematics = 22
    CenterOfMass = 24

    @property
    def wire_code(self) -> bytes:
        return b"%02d" % self.value


@dataclass(frozen=True)
class UnknownKind:
    code: int

    @property
    def wire_code(self) -> bytes:
        return b"%02d" % self.code


Kind = Union[PayloadKind, UnknownKind]


def kind_from_code(code: int) -> Kind:
    try:
        return PayloadKind(code)
    except ValueError:
        return UnknownKind(code)


# -- items -------------------------------------------------------------------


class PoseEulerItem(NamedTuple):
    segment: int
    position: Vec3
    euler_deg: Vec3  # z, x, y


class PoseQuaternionItem(NamedTuple):
    segment: int
    position: Vec3
    orientation: Quat  # w, x, y, z


class MarkerItem(NamedTuple):
    point_id: int
    position: Vec3


class JointAngleItem(NamedTuple):
    parent_point: int
    child_point: int
    rotation_deg: Vec3  # z, x, y

    @property
    def parent_segment(self) -> int:
        return self.parent_point >> 8

    @property
    def child_segment(self) -> int:
        return self.child_point >> 8


class LinearKinematicsItem(NamedTuple):
    segment: int
    position: Vec3
    velocity: Vec3
    acceleration: Vec3


class AngularKinematicsItem(NamedTuple):
    segment: int
    orientation: Quat
    angular_velocity_deg: Vec3
    angular_acceleration_deg: Vec3


class CenterOfMassItem(NamedTuple):
    position: Vec3


def point_id(segment: int, offset: int = 0) -> int:
    """Anatomical point id: ``segment * 256 + offset``."""
    return (segment << 8) | offset


# per-kind row layout: struct, item type, row -> item, item -> row
_LAYOUTS = {
    PayloadKind.PoseEuler: (
        struct.Struct(">I6f"),
        PoseEulerItem,
        lambda r: PoseEulerItem(r[0], r[1:4], r[4:7]),
        lambda it: (it.segment, *it.position, *it.euler_deg),
    ),
    PayloadKind.PoseQuaternion: (
        struct.Struct(">I7f"),
        PoseQuaternionItem,
        lambda r: PoseQuaternionItem(r[0], r[1:4], r[4:8]),
        lambda it: (it.segment, *it.position, *it.orientation),
    ),
    PayloadKind.VirtualMarkers: (
        struct.Struct(">I3f"),
        MarkerItem,
        lambda r: MarkerItem(r[0], r[1:4]),
        lambda it: (it.point_id, *it.position),
    ),
    PayloadKind.JointAngles: (
        struct.Struct(">II3f"),
        JointAngleItem,
        lambda r: JointAngleItem(r[0], r[1], r[2:5]),
        lambda it: (it.parent_point, it.child_point, *it.rotation_deg),
    ),
    PayloadKind.LinearKinematics: (
        struct.Struct(">I9f"),
        LinearKinematicsItem,
        lambda r: LinearKinematicsItem(r[0], r[1:4], r[4:7], r[7:10]),
        lambda it: (it.segment, *it.position, *it.velocity, *it.acceleration),
    ),
    PayloadKind.AngularKinematics: (
        struct.Struct(">I10f"),
        AngularKinematicsItem,
        lambda r: AngularKinematicsItem(r[0], r[1:5], r[5:8], r[8:11]),
        lambda it: (it.segment, *it.orientation, *it.angular_velocity_deg,
                    *it.angular_acceleration_deg),
    ),
    PayloadKind.CenterOfMass: (
        struct.Struct(">3f"),
        CenterOfMassItem,
        lambda r: CenterOfMassItem(r),
        lambda it: tuple(it.position),
    ),
}
# number of leading unsigned integer fields per row
_INT_FIELDS = {
    PayloadKind.PoseEuler: 1,
    PayloadKind.PoseQuaternion: 1,
    PayloadKind.VirtualMarkers: 1,
    PayloadKind.JointAngles: 2,
    PayloadKind.LinearKinematics: 1,
    PayloadKind.AngularKinematics: 1,
    PayloadKind.CenterOfMass: 0,
}
TEXT_KINDS = frozenset({PayloadKind.MetaText, PayloadKind.ScaleInfo})
SEGMENT_KINDS = frozenset({
    PayloadKind.PoseEuler,
    PayloadKind.PoseQuaternion,
    PayloadKind.LinearKinematics,
    PayloadKind.AngularKinematics,
})
ITEM_SIZES = {k: layout[0].size for k, layout in _LAYOUTS.items()}

_TEXT_LEN = struct.Struct(">I")
_F32_MAX = struct.unpack(">f", b"\x7f\x7f\xff\xff")[0]


def item_size(kind: Kind, item) -> int:
    if kind in TEXT_KINDS:
        return _TEXT_LEN.size + len(item.encode("utf-8"))
    return ITEM_SIZES[kind]


# -- header ------------------------------------------------------------------


@dataclass(frozen=True)
class DatagramHeader:
    kind: Kind
    sample_counter: int
    datagram_index: int = 0
    is_last_datagram: bool = True
    item_count: int = 0
    time_code_ms: int = 0
    character_id: int = 0
    body_segment_count: int = BODY_SEGMENTS
    prop_count: int = 0
    finger_segment_count: int = 0
    payload_size_bytes: int = 0
    reserved: int = 0


def parse_header(buf: bytes) -> DatagramHeader:
    if len(buf) < HEADER_SIZE:
        raise TooShort(f"{len(buf)} bytes, header needs {HEADER_SIZE}")
    (magic, code, sample, idx, count, tc, char, body, props, fingers,
     reserved, size) = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"magic {magic!r}")
    if not (0x30 <= code[0] <= 0x39 and 0x30 <= code[1] <= 0x39):
        raise BadMagic(f"kind code {code!r} is not two decimal digits")
    return DatagramHeader(
        kind=kind_from_code(int(code)),
        sample_counter=sample,
        datagram_index=idx & MAX_DATAGRAM_INDEX,
        is_last_datagram=bool(idx & LAST_FLAG),
        item_count=count,
        time_code_ms=tc,
        character_id=char,
        body_segment_count=body,
        prop_count=props,
        finger_segment_count=fingers,
        payload_size_bytes=size,
        reserved=reserved,
    )


def _check_width(name: str, value: int, limit: int) -> None:
    if not isinstance(value, int) or not 0 <= value <= limit:
        raise FieldOverflow(f"{name}={value!r} outside 0..{limit}")


def serialize_header(h: DatagramHeader) -> bytes:
    code = h.kind.value if isinstance(h.kind, PayloadKind) else h.kind.code
    _check_width("kind", code, 99)
    _check_width("sample_counter", h.sample_counter, 0xFFFFFFFF)
    _check_width("datagram_index", h.datagram_index, MAX_DATAGRAM_INDEX)
    _check_width("item_count", h.item_count, 0xFF)
    _check_width("time_code_ms", h.time_code_ms, 0xFFFFFFFF)
    _check_width("character_id", h.character_id, 0xFF)
    _check_width("body_segment_count", h.body_segment_count, 0xFF)
    _check_width("prop_count", h.prop_count, 0xFF)
    _check_width("finger_segment_count", h.finger_segment_count, 0xFF)
    _check_width("payload_size_bytes", h.payload_size_bytes, 0xFFFF)
    _check_width("reserved", h.reserved, 0xFFFF)
    return _HEADER.pack(
        MAGIC, b"%02d" % code, h.sample_counter,
        h.datagram_index | (LAST_FLAG if h.is_last_datagram else 0),
        h.item_count, h.time_code_ms, h.character_id, h.body_segment_count,
        h.prop_count, h.finger_segment_count, h.reserved, h.payload_size_bytes,
    )


# -- datagram ----------------------------------------------------------------


@dataclass(frozen=True)
class Datagram:
    """Header plus decoded items.

    For unknown kinds ``items`` holds the raw payload as a single ``bytes``
    element and ``header.item_count`` is carried through untouched.
    """

    header: DatagramHeader
    items: tuple = ()


def _max_segment(h: DatagramHeader) -> int:
    return h.body_segment_count + h.prop_count + h.finger_segment_count


def _check_header(h: DatagramHeader) -> None:
    if h.kind in SEGMENT_KINDS and h.body_segment_count != BODY_SEGMENTS:
        raise InvalidItem(
            f"body_segment_count {h.body_segment_count} for {h.kind.name}, expected {BODY_SEGMENTS}")


def _decode_text(payload: memoryview, count: int) -> tuple:
    items = []
    pos = 0
    n = len(payload)
    for _ in range(count):
        if pos + 4 > n:
            raise ItemCountMismatch(f"text item {len(items)} truncated")
        (length,) = _TEXT_LEN.unpack_from(payload, pos)
        pos += 4
        if pos + length > n:
            raise ItemCountMismatch(f"text item {len(items)} declares {length} bytes past payload end")
        try:
            items.append(bytes(payload[pos:pos + length]).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise InvalidItem(f"text item {len(items)} is not UTF-8: {exc}") from None
        pos += length
    if pos != n:
        raise ItemCountMismatch(f"{n - pos} bytes left after {count} text items")
    return tuple(items)


def parse_datagram(buf: bytes) -> Datagram:
    h = parse_header(buf)
    if len(buf) != HEADER_SIZE + h.payload_size_bytes:
        raise PayloadSizeMismatch(
            f"payload_size {h.payload_size_bytes} but {len(buf) - HEADER_SIZE} payload bytes present")
    payload = memoryview(buf)[HEADER_SIZE:]
    kind = h.kind
    if isinstance(kind, UnknownKind):
        return Datagram(h, (bytes(payload),))
    _check_header(h)
    if kind in TEXT_KINDS:
        return Datagram(h, _decode_text(payload, h.item_count))

    st, _, build, _ = _LAYOUTS[kind]
    if h.item_count * st.size != len(payload):
        raise ItemCountMismatch(
            f"{h.item_count} x {st.size}-byte items != {len(payload)} payload bytes")
    if kind is PayloadKind.CenterOfMass and h.item_count != 1:
        raise ItemCountMismatch(f"CenterOfMass carries exactly one item, got {h.item_count}")

    n_int = _INT_FIELDS[kind]
    check_seg = kind in SEGMENT_KINDS
    max_seg = _max_segment(h)
    isfinite = math.isfinite
    items = []
    for row in st.iter_unpack(payload):
        # float32 values cannot overflow a float64 sum, so NaN/inf anywhere shows up here
        if not isfinite(sum(row[n_int:])):
            raise InvalidItem(f"non-finite value in {kind.name} item {len(items)}")
        if check_seg and not 1 <= row[0] <= max_seg:
            raise InvalidItem(f"segment index {row[0]} outside 1..{max_seg}")
        items.append(build(row))
    return Datagram(h, tuple(items))


def _pack_items(kind: PayloadKind, items) -> bytes:
    if kind in TEXT_KINDS:
        out = bytearray()
        for text in items:
            if not isinstance(text, str):
                raise InvalidItem(f"{kind.name} items must be str, got {type(text).__name__}")
            raw = text.encode("utf-8")
            out += _TEXT_LEN.pack(len(raw))
            out += raw
        return bytes(out)
    st, cls, _, flatten = _LAYOUTS[kind]
    out = bytearray()
    n_int = _INT_FIELDS[kind]
    for it in items:
        if not isinstance(it, cls):
            raise InvalidItem(f"{kind.name} expects {cls.__name__}, got {type(it).__name__}")
        row = flatten(it)
        for v in row[:n_int]:
            _check_width(f"{cls.__name__} id", v, 0xFFFFFFFF)
        for v in row[n_int:]:
            if not math.isfinite(v):
                raise InvalidItem(f"non-finite value in {cls.__name__}")
            if abs(v) > _F32_MAX:
                raise FieldOverflow(f"{v!r} does not fit a float32")
        out += st.pack(*row)
    return bytes(out)


def serialize_datagram(d: Datagram) -> bytes:
    """Encode ``d``; ``item_count`` and ``payload_size_bytes`` are recomputed."""
    h = d.header
    if isinstance(h.kind, UnknownKind):
        if len(d.items) != 1 or not isinstance(d.items[0], (bytes, bytearray)):
            raise InvalidItem("unknown-kind datagrams carry one raw bytes payload")
        payload = bytes(d.items[0])
        count = h.item_count
    else:
        _check_header(h)
        if h.kind is PayloadKind.CenterOfMass and len(d.items) != 1:
            raise ItemCountMismatch(f"CenterOfMass carries exactly one item, got {len(d.items)}")
        if h.kind in SEGMENT_KINDS:
            max_seg = _max_segment(h)
            for it in d.items:
                if not 1 <= it.segment <= max_seg:
                    raise InvalidItem(f"segment index {it.segment} outside 1..{max_seg}")
        payload = _pack_items(h.kind, d.items)
        count = len(d.items)
    if count > 0xFF:
        raise FieldOverflow(f"{count} items exceed the 8-bit item count")
    if len(payload) > 0xFFFF:
        raise FieldOverflow(f"payload of {len(payload)} bytes exceeds 65535")
    header = serialize_header(_replace_counts(h, count, len(payload)))
    return header + payload


def _replace_counts(h: DatagramHeader, count: int, size: int) -> DatagramHeader:
    if h.item_count == count and h.payload_size_bytes == size:
        return h
    return replace(h, item_count=count, payload_size_bytes=size)



def format_datagram(d: Datagram) -> str:
    """Multi-line human-readable rendering for debugging."""
    h = d.header
    kind = h.kind.name if isinstance(h.kind, PayloadKind) else f"unknown({h.kind.code:02d})"
    lines = [
        f"{kind} sample={h.sample_counter} index={h.datagram_index}{' last' if h.is_last_datagram else ''} "
        f"items={h.item_count} time_code_ms={h.time_code_ms} character={h.character_id} "
        f"segments={h.body_segment_count}+{h.prop_count}+{h.finger_segment_count} payload={h.payload_size_bytes}B"
    ]
    for item in d.items:
        if isinstance(item, bytes):
            lines.append(f"  raw {item.hex()}")
        elif isinstance(item, str):
            lines.append(f"  text {item!r}")
        else:
            fields = []
            for name, value in zip(item._fields, item):
                if isinstance(value, tuple):
                    value = "(" + ", ".join(f"{v:.6g}" for v in value) + ")"
                fields.append(f"{name}={value}")
            lines.append("  " + " ".join(fields))
    return "\n".join(lines)
