"""MotionFrame -> middleware message schemas (link states, joint state, TF, CoM).

Wire angles arrive in degrees and leave in radians. Poses are global
(parent frame ``world``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .kinematics import (
    DOF_AXES,
    JointId,
    RotationZXY,
    SegmentId,
    UnitQuaternion,
    euler_zxy_to_quaternion,
)
from .stream import MotionFrame

Vec3 = tuple[float, float, float]
WORLD_FRAME = "world"
_ZERO = (0.0, 0.0, 0.0)
_DEG = math.pi / 180.0
_SEGMENTS = tuple((int(s), s.name) for s in SegmentId)


class IncompleteFrame(ValueError):
    def __init__(self, missing: Sequence[str]):
        self.missing = tuple(missing)
        super().__init__("frame is missing: " + ", ".join(self.missing))


class MsgPose(NamedTuple):
    position: Vec3
    orientation: UnitQuaternion


class Twist(NamedTuple):
    linear: Vec3
    angular: Vec3


class Accel(NamedTuple):
    linear: Vec3
    angular: Vec3


class LinkState(NamedTuple):
    name: str
    pose: MsgPose
    twist: Twist
    accel: Accel


@dataclass(frozen=True)
class LinkStateMessage:
    stamp_us: int
    time_code_ms: int
    links: tuple[LinkState, ...]
    # kinematics categories that were absent and zero-filled
    zero_filled: frozenset[str] = frozenset()


@dataclass(frozen=True)
class JointStateMessage:
    stamp_us: int
    time_code_ms: int
    names: tuple[str, ...]
    positions: tuple[float, ...]


class TransformMessage(NamedTuple):
    stamp_us: int
    parent_frame_id: str
    child_frame_id: str
    translation: Vec3
    rotation: UnitQuaternion


@dataclass(frozen=True)
class PointMessage:
    stamp_us: int
    position: Vec3


# -- axis remap --------------------------------------------------------------


class AxisRemap:
    """Signed permutation of the global axes, e.g. ``"-y,x,z"``.

    Entry ``i`` names which source axis (with sign) becomes output axis
    ``i``. Only proper rotations are accepted so quaternions stay valid.
    """

    def __init__(self, spec: str = "x,y,z"):
        parts = [p.strip() for p in spec.split(",")]
        if len(parts) != 3:
            raise ValueError(f"axis remap {spec!r} needs three entries")
        perm, signs = [], []
        for p in parts:
            sign = -1.0 if p.startswith("-") else 1.0
            axis = p.lstrip("+-")
            if axis not in ("x", "y", "z"):
                raise ValueError(f"axis remap {spec!r}: bad entry {p!r}")
            perm.append("xyz".index(axis))
            signs.append(sign)
        if sorted(perm) != [0, 1, 2]:
            raise ValueError(f"axis remap {spec!r} is not a permutation")
        # determinant of a signed permutation matrix
        parity = 1
        for i in range(3):
            for j in range(i + 1, 3):
                if perm[i] > perm[j]:
                    parity = -parity
        if parity * signs[0] * signs[1] * signs[2] < 0:
            raise ValueError(f"axis remap {spec!r} is a reflection")
        self.spec = ",".join(parts)
        self.perm = tuple(perm)
        self.signs = tuple(signs)
        self.is_identity = self.perm == (0, 1, 2) and self.signs == (1.0, 1.0, 1.0)

    def vec(self, v: Sequence[float]) -> Vec3:
        if self.is_identity:
            return v
        p, s = self.perm, self.signs
        return (s[0] * v[p[0]], s[1] * v[p[1]], s[2] * v[p[2]])

    def quat(self, q: UnitQuaternion) -> UnitQuaternion:
        if self.is_identity:
            return q
        x, y, z = self.vec((q.x, q.y, q.z))
        return UnitQuaternion(q.w, x, y, z)


IDENTITY_REMAP = AxisRemap()


# -- mapping -----------------------------------------------------------------


def joint_dof_name(j: JointId, axis: str) -> str:
    if axis not in DOF_AXES:
        raise ValueError(f"axis {axis!r} not one of {DOF_AXES}")
    return f"{j.name}_{axis}"


JOINT_STATE_NAMES = tuple(joint_dof_name(j, a) for j in JointId for a in DOF_AXES)


def _unit(q: Sequence[float]) -> UnitQuaternion:
    return UnitQuaternion.from_components(*q)


def _deg(v: Sequence[float]) -> Vec3:
    return (v[0] * _DEG, v[1] * _DEG, v[2] * _DEG)


def segment_poses(f: MotionFrame) -> list[MsgPose]:
    """Global pose per body segment in wire order; quaternion payload wins over Euler."""
    poses = []
    missing = []
    for i, name in _SEGMENTS:
        item = f.pose_quaternion.get(i)
        if item is not None:
            poses.append(MsgPose(item.position, _unit(item.orientation)))
            continue
        item = f.pose_euler.get(i)
        if item is not None:
            z, x, y = _deg(item.euler_deg)
            poses.append(MsgPose(item.position, euler_zxy_to_quaternion(RotationZXY(z, x, y))))
            continue
        missing.append(name)
    if missing:
        raise IncompleteFrame(missing)
    return poses


def map_link_states(f: MotionFrame, remap: AxisRemap = IDENTITY_REMAP) -> LinkStateMessage:
    poses = segment_poses(f)
    zero_filled = set()
    links = []
    vec, quat = remap.vec, remap.quat
    for (i, name), pose in zip(_SEGMENTS, poses):
        lin = f.linear.get(i)
        ang = f.angular.get(i)
        if lin is None:
            zero_filled.add("linear")
            v = a = _ZERO
        else:
            v, a = lin.velocity, lin.acceleration
        if ang is None:
            zero_filled.add("angular")
            w = dw = _ZERO
        else:
            w, dw = _deg(ang.angular_velocity_deg), _deg(ang.angular_acceleration_deg)
        links.append(LinkState(
            name,
            MsgPose(vec(pose.position), quat(pose.orientation)),
            Twist(vec(v), vec(w)),
            Accel(vec(a), vec(dw)),
        ))
    return LinkStateMessage(f.recv_stamp_us, f.time_code_ms, tuple(links), frozenset(zero_filled))


def map_joint_state(f: MotionFrame) -> JointStateMessage:
    missing = [j.name for j in JointId if j not in f.joint_angles]
    if missing:
        raise IncompleteFrame(missing)
    positions = []
    for j in JointId:
        positions.extend(_deg(f.joint_angles[j].rotation_deg))
    return JointStateMessage(f.recv_stamp_us, f.time_code_ms, JOINT_STATE_NAMES, tuple(positions))


def map_transforms(f: MotionFrame, remap: AxisRemap = IDENTITY_REMAP) -> list[TransformMessage]:
    return [
        TransformMessage(f.recv_stamp_us, WORLD_FRAME, name, remap.vec(pose.position), remap.quat(pose.orientation))
        for (_, name), pose in zip(_SEGMENTS, segment_poses(f))
    ]


def map_com(f: MotionFrame, remap: AxisRemap = IDENTITY_REMAP) -> Optional[PointMessage]:
    if f.com is None:
        return None
    return PointMessage(f.recv_stamp_us, remap.vec(f.com))


@dataclass(frozen=True)
class BridgeMessages:
    link_states: LinkStateMessage
    joint_state: JointStateMessage
    transforms: tuple[TransformMessage, ...]
    com: Optional[PointMessage]


def map_frame(f: MotionFrame, remap: AxisRemap = IDENTITY_REMAP) -> BridgeMessages:
    """All messages for one frame; the transforms reuse the link-state poses."""
    links = map_link_states(f, remap)
    transforms = tuple(
        TransformMessage(f.recv_stamp_us, WORLD_FRAME, ls.name, ls.pose.position, ls.pose.orientation)
        for ls in links.links
    )
    return BridgeMessages(links, map_joint_state(f), transforms, map_com(f, remap))
