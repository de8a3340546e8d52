"""Human skeleton model: segments, joints, rotations and the N-pose.

Conventions used throughout the package:

* Global frame is right-handed, Z up, X forward, Y to the subject's left,
  with its origin at the right heel.
* Joint angles are intrinsic Z-X-Y Euler angles, ``R = Rz(z) @ Rx(x) @ Ry(y)``,
  with z = flexion/extension, x = abduction/adduction and
  y = internal/external rotation.
* Quaternions are scalar-first ``(w, x, y, z)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional, Sequence, Tuple

Vec3 = Tuple[float, float, float]

GIMBAL_MARGIN = 1e-3
_NORM_TOL = 1e-6


class OutOfRange(ValueError):
    pass


class NonFinite(ValueError):
    pass


class NotNormalized(ValueError):
    pass


class InvalidScale(ValueError):
    pass


class SegmentId(enum.IntEnum):
    """Body segments with their 1-based wire index."""

    Pelvis = 1
    L5 = 2
    L3 = 3
    T12 = 4
    T8 = 5
    Neck = 6
    Head = 7
    RightShoulder = 8
    RightUpperArm = 9
    RightForeArm = 10
    RightHand = 11
    LeftShoulder = 12
    LeftUpperArm = 13
    LeftForeArm = 14
    LeftHand = 15
    RightUpperLeg = 16
    RightLowerLeg = 17
    RightFoot = 18
    RightToe = 19
    LeftUpperLeg = 20
    LeftLowerLeg = 21
    LeftFoot = 22
    LeftToe = 23


class JointId(enum.Enum):
    """Anatomical 3-DoF joints as ``(parent, child)`` segment pairs."""

    jL5S1 = (SegmentId.Pelvis, SegmentId.L5)
    jL4L3 = (SegmentId.L5, SegmentId.L3)
    jL1T12 = (SegmentId.L3, SegmentId.T12)
    jT9T8 = (SegmentId.T12, SegmentId.T8)
    jT1C7 = (SegmentId.T8, SegmentId.Neck)
    jC1Head = (SegmentId.Neck, SegmentId.Head)
    jRightT4Shoulder = (SegmentId.T8, SegmentId.RightShoulder)
    jRightShoulder = (SegmentId.RightShoulder, SegmentId.RightUpperArm)
    jRightElbow = (SegmentId.RightUpperArm, SegmentId.RightForeArm)
    jRightWrist = (SegmentId.RightForeArm, SegmentId.RightHand)
    jLeftT4Shoulder = (SegmentId.T8, SegmentId.LeftShoulder)
    jLeftShoulder = (SegmentId.LeftShoulder, SegmentId.LeftUpperArm)
    jLeftElbow = (SegmentId.LeftUpperArm, SegmentId.LeftForeArm)
    jLeftWrist = (SegmentId.LeftForeArm, SegmentId.LeftHand)
    jRightHip = (SegmentId.Pelvis, SegmentId.RightUpperLeg)
    jRightKnee = (SegmentId.RightUpperLeg, SegmentId.RightLowerLeg)
    jRightAnkle = (SegmentId.RightLowerLeg, SegmentId.RightFoot)
    jRightBallFoot = (SegmentId.RightFoot, SegmentId.RightToe)
    jLeftHip = (SegmentId.Pelvis, SegmentId.LeftUpperLeg)
    jLeftKnee = (SegmentId.LeftUpperLeg, SegmentId.LeftLowerLeg)
    jLeftAnkle = (SegmentId.LeftLowerLeg, SegmentId.LeftFoot)
    jLeftBallFoot = (SegmentId.LeftFoot, SegmentId.LeftToe)

    @property
    def parent(self) -> SegmentId:
        return self.value[0]

    @property
    def child(self) -> SegmentId:
        return self.value[1]


DOF_AXES = ("z", "x", "y")

_PARENT = {j.child: j.parent for j in JointId}
_JOINT_BY_CHILD = {j.child: j for j in JointId}
_JOINT_BY_PAIR = {(int(j.parent), int(j.child)): j for j in JointId}


def segment_from_index(i: int) -> SegmentId:
    if not 1 <= i <= len(SegmentId):
        raise OutOfRange(f"segment index {i} outside 1..{len(SegmentId)}")
    return SegmentId(i)


def parent_segment(s: SegmentId) -> Optional[SegmentId]:
    return _PARENT.get(s)


def joint_for_child(s: SegmentId) -> Optional[JointId]:
    return _JOINT_BY_CHILD.get(s)


def joint_from_segments(parent: int, child: int) -> Optional[JointId]:
    return _JOINT_BY_PAIR.get((parent, child))


def joint_definitions() -> list[tuple[JointId, SegmentId, SegmentId]]:
    return [(j, j.parent, j.child) for j in JointId]


@dataclass(frozen=True)
class SkeletonTopology:
    root: SegmentId
    edges: tuple[tuple[JointId, SegmentId, SegmentId], ...]

    def children(self, s: SegmentId) -> list[SegmentId]:
        return [c for _, p, c in self.edges if p == s]

    def traversal(self) -> list[SegmentId]:
        """Segments in depth-first order from the root."""
        order = []
        stack = [self.root]
        while stack:
            s = stack.pop()
            order.append(s)
            stack.extend(reversed(self.children(s)))
        return order


def skeleton_topology() -> SkeletonTopology:
    return SkeletonTopology(SegmentId.Pelvis, tuple(joint_definitions()))


# -- rotations ---------------------------------------------------------------


@dataclass(frozen=True)
class RotationZXY:
    z: float
    x: float
    y: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.z, self.x, self.y)):
            raise NonFinite(f"non-finite Euler angles {self}")


@dataclass(frozen=True)
class UnitQuaternion:
    """Scalar-first unit quaternion.

    The constructor accepts components within 1e-6 of unit norm and
    renormalizes them; use :meth:`from_components` for arbitrary input.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        w, x, y, z = self.w, self.x, self.y, self.z
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if not math.isfinite(n):
            raise NonFinite(f"non-finite quaternion {(w, x, y, z)}")
        if abs(n - 1.0) > _NORM_TOL:
            raise NotNormalized(f"quaternion norm {n!r}")
        if n != 1.0:
            _set = object.__setattr__
            _set(self, "w", w / n)
            _set(self, "x", x / n)
            _set(self, "y", y / n)
            _set(self, "z", z / n)

    @classmethod
    def from_components(cls, w: float, x: float, y: float, z: float) -> "UnitQuaternion":
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if not math.isfinite(n):
            raise NonFinite(f"non-finite quaternion {(w, x, y, z)}")
        if n == 0.0:
            raise NotNormalized("zero quaternion")
        # already unit length to rounding; skip the constructor's re-check
        q = object.__new__(cls)
        _set = object.__setattr__
        _set(q, "w", w / n)
        _set(q, "x", x / n)
        _set(q, "y", y / n)
        _set(q, "z", z / n)
        return q

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.as_tuple()))

    def to_matrix(self) -> list[list[float]]:
        w, x, y, z = self.w, self.x, self.y, self.z
        return [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]


def quaternion_multiply(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, float, float]:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def euler_zxy_to_quaternion(r: RotationZXY) -> UnitQuaternion:
    for v in (r.z, r.x, r.y):
        if not math.isfinite(v):
            raise NonFinite(f"non-finite Euler angles {r}")
    cz, sz = math.cos(r.z / 2), math.sin(r.z / 2)
    cx, sx = math.cos(r.x / 2), math.sin(r.x / 2)
    cy, sy = math.cos(r.y / 2), math.sin(r.y / 2)
    # qz * qx * qy, expanded
    w = cz * cx * cy - sz * sx * sy
    x = cz * sx * cy - sz * cx * sy
    y = cz * cx * sy + sz * sx * cy
    z = sz * cx * cy + cz * sx * sy
    return UnitQuaternion.from_components(w, x, y, z)


def quaternion_to_euler_zxy(q) -> RotationZXY:
    """Decompose ``q`` into intrinsic ZXY angles.

    ``x`` lies in [-pi/2, pi/2]; ``z`` and ``y`` in (-pi, pi]. Within
    ``GIMBAL_MARGIN`` of ``|x| = pi/2`` the y angle is pinned to 0 and the
    remaining rotation is reported in z.
    """
    if isinstance(q, UnitQuaternion):
        w, x, y, z = q.as_tuple()
    else:
        w, x, y, z = (float(v) for v in q)
        if not all(math.isfinite(v) for v in (w, x, y, z)):
            raise NonFinite(f"non-finite quaternion {(w, x, y, z)}")
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if abs(n - 1.0) > _NORM_TOL:
            raise NotNormalized(f"quaternion norm {n!r}")
        w, x, y, z = w / n, x / n, y / n, z / n

    r21 = 2 * (y * z + w * x)
    r01 = 2 * (x * y - w * z)
    r11 = 1 - 2 * (x * x + z * z)
    ax = math.atan2(r21, math.hypot(r01, r11))
    if abs(ax) > math.pi / 2 - GIMBAL_MARGIN:
        r00 = 1 - 2 * (y * y + z * z)
        r10 = 2 * (x * y + w * z)
        return RotationZXY(math.atan2(r10, r00), ax, 0.0)
    r20 = 2 * (x * z - w * y)
    r22 = 1 - 2 * (x * x + y * y)
    return RotationZXY(math.atan2(-r01, r11), ax, math.atan2(-r20, r22))


@dataclass(frozen=True)
class Pose:
    position: Vec3
    orientation: UnitQuaternion

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.position):
            raise NonFinite(f"non-finite position {self.position}")


# -- scale data --------------------------------------------------------------

# Offsets of each segment origin from its parent's origin, as fractions of
# body height, in the parent frame (N-pose, arms hanging at the sides).
_OFFSET_FRACTIONS: dict[SegmentId, Vec3] = {
    SegmentId.Pelvis: (0.0, 0.0, 0.0),
    SegmentId.L5: (0.0, 0.0, 0.060),
    SegmentId.L3: (0.0, 0.0, 0.060),
    SegmentId.T12: (0.0, 0.0, 0.060),
    SegmentId.T8: (0.0, 0.0, 0.060),
    SegmentId.Neck: (0.0, 0.0, 0.140),
    SegmentId.Head: (0.0, 0.0, 0.060),
    SegmentId.RightShoulder: (0.0, -0.020, 0.110),
    SegmentId.RightUpperArm: (0.0, -0.100, 0.0),
    SegmentId.RightForeArm: (0.0, 0.0, -0.170),
    SegmentId.RightHand: (0.0, 0.0, -0.150),
    SegmentId.LeftShoulder: (0.0, 0.020, 0.110),
    SegmentId.LeftUpperArm: (0.0, 0.100, 0.0),
    SegmentId.LeftForeArm: (0.0, 0.0, -0.170),
    SegmentId.LeftHand: (0.0, 0.0, -0.150),
    SegmentId.RightUpperLeg: (0.0, -0.055, 0.0),
    SegmentId.RightLowerLeg: (0.0, 0.0, -0.245),
    SegmentId.RightFoot: (0.0, 0.0, -0.246),
    SegmentId.RightToe: (0.090, 0.0, -0.030),
    SegmentId.LeftUpperLeg: (0.0, 0.055, 0.0),
    SegmentId.LeftLowerLeg: (0.0, 0.0, -0.245),
    SegmentId.LeftFoot: (0.0, 0.0, -0.246),
    SegmentId.LeftToe: (0.090, 0.0, -0.030),
}
# Right heel relative to the RightFoot origin (the ankle).
_HEEL_FRACTION: Vec3 = (-0.030, 0.0, -0.039)

_RAW_MASS = {
    SegmentId.Pelvis: 0.142,
    SegmentId.L5: 0.050,
    SegmentId.L3: 0.050,
    SegmentId.T12: 0.050,
    SegmentId.T8: 0.130,
    SegmentId.Neck: 0.012,
    SegmentId.Head: 0.069,
    SegmentId.RightShoulder: 0.010,
    SegmentId.RightUpperArm: 0.027,
    SegmentId.RightForeArm: 0.016,
    SegmentId.RightHand: 0.006,
    SegmentId.LeftShoulder: 0.010,
    SegmentId.LeftUpperArm: 0.027,
    SegmentId.LeftForeArm: 0.016,
    SegmentId.LeftHand: 0.006,
    SegmentId.RightUpperLeg: 0.142,
    SegmentId.RightLowerLeg: 0.043,
    SegmentId.RightFoot: 0.012,
    SegmentId.RightToe: 0.002,
    SegmentId.LeftUpperLeg: 0.142,
    SegmentId.LeftLowerLeg: 0.043,
    SegmentId.LeftFoot: 0.012,
    SegmentId.LeftToe: 0.002,
}
_RAW_MASS_TOTAL = math.fsum(_RAW_MASS.values())

MIN_HEIGHT_M = 0.5
MAX_HEIGHT_M = 2.5


@dataclass(frozen=True)
class ScaleData:
    """Per-segment origin offsets (m, parent frame) and mass fractions.

    ``heel_offset`` locates the right heel in the RightFoot frame; the
    global origin is placed there.
    """

    offsets: Mapping[SegmentId, Vec3]
    mass_fractions: Mapping[SegmentId, float]
    heel_offset: Vec3 = (0.0, 0.0, 0.0)
    height_m: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "offsets", MappingProxyType(
            {SegmentId(k): tuple(float(c) for c in v) for k, v in self.offsets.items()}))
        object.__setattr__(self, "mass_fractions", MappingProxyType(
            {SegmentId(k): float(v) for k, v in self.mass_fractions.items()}))
        object.__setattr__(self, "heel_offset", tuple(float(c) for c in self.heel_offset))
        self.validate()

    def validate(self) -> None:
        missing = [s.name for s in SegmentId if s not in self.offsets or s not in self.mass_fractions]
        if missing:
            raise InvalidScale(f"missing segments: {', '.join(missing)}")
        for s, off in self.offsets.items():
            if len(off) != 3 or not all(math.isfinite(c) for c in off):
                raise InvalidScale(f"non-finite offset for {s.name}: {off}")
        if len(self.heel_offset) != 3 or not all(math.isfinite(c) for c in self.heel_offset):
            raise InvalidScale(f"non-finite heel offset {self.heel_offset}")
        for s, m in self.mass_fractions.items():
            if not math.isfinite(m) or m < 0:
                raise InvalidScale(f"bad mass fraction for {s.name}: {m}")
        total = math.fsum(self.mass_fractions.values())
        if abs(total - 1.0) > 1e-9:
            raise InvalidScale(f"mass fractions sum to {total!r}")


def default_scale(height_m: float = 1.70) -> ScaleData:
    if not (MIN_HEIGHT_M <= height_m <= MAX_HEIGHT_M):
        raise OutOfRange(f"height {height_m} m outside {MIN_HEIGHT_M}..{MAX_HEIGHT_M}")
    return _scaled(height_m)


def _scaled(height_m: float) -> ScaleData:
    offsets = {s: tuple(c * height_m for c in f) for s, f in _OFFSET_FRACTIONS.items()}
    masses = {s: m / _RAW_MASS_TOTAL for s, m in _RAW_MASS.items()}
    return ScaleData(offsets, masses, tuple(c * height_m for c in _HEEL_FRACTION), height_m)


def _add(a: Sequence[float], b: Sequence[float]) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def npose_positions(scale: ScaleData) -> dict[SegmentId, Vec3]:
    """Segment origin positions in the N-pose, Pelvis at its heel-based offset."""
    root = (0.0, 0.0, 0.0)
    # walk the right leg down to the heel; everything is axis-aligned in N-pose
    chain = [SegmentId.RightUpperLeg, SegmentId.RightLowerLeg, SegmentId.RightFoot]
    heel = root
    for s in chain:
        heel = _add(heel, scale.offsets[s])
    heel = _add(heel, scale.heel_offset)
    pelvis = (-heel[0], -heel[1], -heel[2])

    positions = {SegmentId.Pelvis: pelvis}
    for j in JointId:  # parents always precede children in this ordering
        positions[j.child] = _add(positions[j.parent], scale.offsets[j.child])
    return {s: positions[s] for s in SegmentId}


def forward_npose(scale: ScaleData) -> dict[SegmentId, Pose]:
    ident = UnitQuaternion.identity()
    return {s: Pose(p, ident) for s, p in npose_positions(scale).items()}


def scale_to_text(scale: ScaleData) -> str:
    """Encode as ``segment_name ox oy oz mass_fraction`` lines."""
    lines = []
    for s in SegmentId:
        ox, oy, oz = scale.offsets[s]
        lines.append(f"{s.name} {ox!r} {oy!r} {oz!r} {scale.mass_fractions[s]!r}")
    hx, hy, hz = scale.heel_offset
    lines.append(f"heel {hx!r} {hy!r} {hz!r} 0.0")
    return "\n".join(lines) + "\n"


def scale_from_text(text: str) -> ScaleData:
    offsets, masses = {}, {}
    heel = (0.0, 0.0, 0.0)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise InvalidScale(f"line {lineno}: expected 5 fields, got {len(parts)}")
        name, *nums = parts
        try:
            ox, oy, oz, mass = (float(v) for v in nums)
        except ValueError as exc:
            raise InvalidScale(f"line {lineno}: {exc}") from None
        if name == "heel":
            heel = (ox, oy, oz)
            continue
        try:
            seg = SegmentId[name]
        except KeyError:
            raise InvalidScale(f"line {lineno}: unknown segment {name!r}") from None
        offsets[seg] = (ox, oy, oz)
        masses[seg] = mass
    return ScaleData(offsets, masses, heel)
