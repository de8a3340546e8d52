import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xsbridge.kinematics import (
    GIMBAL_MARGIN,
    InvalidScale,
    JointId,
    NonFinite,
    NotNormalized,
    OutOfRange,
    RotationZXY,
    ScaleData,
    SegmentId,
    UnitQuaternion,
    default_scale,
    euler_zxy_to_quaternion,
    forward_npose,
    joint_definitions,
    parent_segment,
    quaternion_multiply,
    quaternion_to_euler_zxy,
    scale_from_text,
    scale_to_text,
    segment_from_index,
    skeleton_topology,
)

from oracles import quat_matrix, zxy_matrix

SAFE_X = math.pi / 2 - GIMBAL_MARGIN
angle = st.floats(-math.pi, math.pi, allow_nan=False)
safe_x = st.floats(-SAFE_X + 1e-9, SAFE_X - 1e-9, allow_nan=False)


def wrap(a):
    return math.atan2(math.sin(a), math.cos(a))


# -- topology ----------------------------------------------------------------

SEGMENT_ORDER = [
    "Pelvis", "L5", "L3", "T12", "T8", "Neck", "Head",
    "RightShoulder", "RightUpperArm", "RightForeArm", "RightHand",
    "LeftShoulder", "LeftUpperArm", "LeftForeArm", "LeftHand",
    "RightUpperLeg", "RightLowerLeg", "RightFoot", "RightToe",
    "LeftUpperLeg", "LeftLowerLeg", "LeftFoot", "LeftToe",
]


def test_segment_indices_follow_listing_order():
    assert [s.name for s in SegmentId] == SEGMENT_ORDER
    assert [int(s) for s in SegmentId] == list(range(1, 24))


def test_segment_from_index():
    assert segment_from_index(1) is SegmentId.Pelvis
    assert segment_from_index(23) is SegmentId.LeftToe
    for bad in (0, 24, -1):
        with pytest.raises(OutOfRange):
            segment_from_index(bad)


def test_parent_segment_examples():
    assert parent_segment(SegmentId.Pelvis) is None
    assert parent_segment(SegmentId.Head) is SegmentId.Neck
    assert parent_segment(SegmentId.RightHand) is SegmentId.RightForeArm


def test_joint_definitions():
    defs = joint_definitions()
    assert len(defs) == 22 == len(JointId)
    by_name = {j.name: (p, c) for j, p, c in defs}
    assert by_name["jRightElbow"] == (SegmentId.RightUpperArm, SegmentId.RightForeArm)
    children = [c for _, _, c in defs]
    assert len(set(children)) == 22
    assert set(children) == set(SegmentId) - {SegmentId.Pelvis}
    assert all(j.name.startswith("j") for j, _, _ in defs)
    assert joint_definitions() == defs


def test_topology_is_tree_rooted_at_pelvis():
    topo = skeleton_topology()
    assert topo.root is SegmentId.Pelvis
    assert len(topo.edges) == 22
    order = topo.traversal()
    assert sorted(order) == sorted(SegmentId)
    assert order[0] is SegmentId.Pelvis


@pytest.mark.parametrize("chain", [
    ["Pelvis", "L5", "L3", "T12", "T8", "Neck", "Head"],
    ["T8", "RightShoulder", "RightUpperArm", "RightForeArm", "RightHand"],
    ["T8", "LeftShoulder", "LeftUpperArm", "LeftForeArm", "LeftHand"],
    ["Pelvis", "RightUpperLeg", "RightLowerLeg", "RightFoot", "RightToe"],
    ["Pelvis", "LeftUpperLeg", "LeftLowerLeg", "LeftFoot", "LeftToe"],
])
def test_chains(chain):
    for parent, child in zip(chain, chain[1:]):
        assert parent_segment(SegmentId[child]) is SegmentId[parent]


# -- rotations ---------------------------------------------------------------


def test_euler_examples():
    assert euler_zxy_to_quaternion(RotationZXY(0, 0, 0)).as_tuple() == (1.0, 0.0, 0.0, 0.0)
    q = euler_zxy_to_quaternion(RotationZXY(math.pi / 2, 0, 0))
    h = math.sqrt(2) / 2
    assert q.as_tuple() == pytest.approx((h, 0, 0, h), abs=1e-15)


def test_quaternion_to_euler_examples():
    r = quaternion_to_euler_zxy(UnitQuaternion(1, 0, 0, 0))
    assert (r.z, r.x, r.y) == (0.0, 0.0, 0.0)
    h = math.sqrt(2) / 2
    r = quaternion_to_euler_zxy(UnitQuaternion(h, 0, 0, h))
    assert (r.z, r.x, r.y) == pytest.approx((math.pi / 2, 0, 0), abs=1e-15)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_angles_rejected(bad):
    with pytest.raises(NonFinite):
        RotationZXY(0.0, bad, 0.0)


def test_not_normalized():
    with pytest.raises(NotNormalized):
        quaternion_to_euler_zxy((1.0, 0.1, 0.0, 0.0))
    with pytest.raises(NotNormalized):
        UnitQuaternion(2.0, 0.0, 0.0, 0.0)
    # within tolerance: accepted and renormalized
    q = UnitQuaternion(1.0 + 5e-7, 0.0, 0.0, 0.0)
    assert q.w == 1.0


@given(angle, angle, angle)
def test_quaternion_matches_matrix_product(z, x, y):
    q = euler_zxy_to_quaternion(RotationZXY(z, x, y))
    np.testing.assert_allclose(quat_matrix(*q.as_tuple()), zxy_matrix(z, x, y), rtol=0, atol=1e-12)
    assert abs(q.norm() - 1.0) <= 1e-9


@given(angle, safe_x, angle)
def test_euler_roundtrip_away_from_gimbal_lock(z, x, y):
    r = quaternion_to_euler_zxy(euler_zxy_to_quaternion(RotationZXY(z, x, y)))
    assert abs(wrap(r.z - z)) < 1e-9
    assert abs(r.x - x) < 1e-9
    assert abs(wrap(r.y - y)) < 1e-9


@given(st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4).filter(lambda v: sum(c * c for c in v) > 1e-3))
def test_quaternion_roundtrip_up_to_sign(v):
    q = UnitQuaternion.from_components(*v)
    r = quaternion_to_euler_zxy(q)
    back = euler_zxy_to_quaternion(r).as_tuple()
    if abs(r.x) < SAFE_X:
        sign = 1.0 if sum(a * b for a, b in zip(back, q.as_tuple())) >= 0 else -1.0
        assert max(abs(sign * b - a) for a, b in zip(q.as_tuple(), back)) < 1e-9


@given(angle, st.sampled_from([1.0, -1.0]), st.floats(0, GIMBAL_MARGIN * 0.99), angle)
def test_gimbal_lock_folds_into_z(z, sign, eps, y):
    x = sign * (math.pi / 2 - eps)
    q = euler_zxy_to_quaternion(RotationZXY(z, x, y))
    r = quaternion_to_euler_zxy(q)
    assert r.y == 0.0
    # the decomposition still reproduces the rotation up to the pinned residual
    np.testing.assert_allclose(zxy_matrix(r.z, r.x, r.y), quat_matrix(*q.as_tuple()), atol=5e-3)


def test_quaternion_multiply_composes_matrices():
    a = euler_zxy_to_quaternion(RotationZXY(0.3, -0.2, 1.1)).as_tuple()
    b = euler_zxy_to_quaternion(RotationZXY(-1.4, 0.7, 0.25)).as_tuple()
    np.testing.assert_allclose(quat_matrix(*quaternion_multiply(a, b)),
                               quat_matrix(*a) @ quat_matrix(*b), atol=1e-14)


# -- scale and N-pose --------------------------------------------------------


def test_default_scale_invariants():
    s = default_scale()
    assert abs(math.fsum(s.mass_fractions.values()) - 1.0) <= 1e-9
    assert all(m >= 0 for m in s.mass_fractions.values())
    assert set(s.offsets) == set(SegmentId)


def test_default_scale_height_is_linear():
    # heights above 2.5 m are out of range, so double 1.2 m instead of 1.7 m
    a, b = default_scale(1.2), default_scale(2.4)
    for seg in SegmentId:
        for ca, cb in zip(a.offsets[seg], b.offsets[seg]):
            assert cb == pytest.approx(2 * ca, rel=1e-15, abs=1e-18)
        assert a.mass_fractions[seg] == b.mass_fractions[seg]


@pytest.mark.parametrize("height", [0.4, 2.6, 3.4])
def test_default_scale_out_of_range(height):
    with pytest.raises(OutOfRange):
        default_scale(height)


def test_invalid_scale():
    s = default_scale()
    offsets = dict(s.offsets)
    offsets[SegmentId.Head] = (0.0, math.nan, 0.0)
    with pytest.raises(InvalidScale):
        ScaleData(offsets, s.mass_fractions)
    masses = dict(s.mass_fractions)
    masses[SegmentId.Head] += 0.01
    with pytest.raises(InvalidScale):
        ScaleData(s.offsets, masses)


def test_scale_text_roundtrip():
    s = default_scale(1.83)
    assert scale_from_text(scale_to_text(s)) == s


def test_forward_npose_identity_orientations():
    poses = forward_npose(default_scale())
    assert len(poses) == 23
    assert all(p.orientation.as_tuple() == (1.0, 0.0, 0.0, 0.0) for p in poses.values())


def test_forward_npose_offsets_oracle():
    scale = default_scale(1.77)
    poses = forward_npose(scale)
    for j, parent, child in joint_definitions():
        diff = np.subtract(poses[child].position, poses[parent].position)
        np.testing.assert_allclose(diff, scale.offsets[child], rtol=0, atol=1e-12)


def test_right_heel_at_origin():
    scale = default_scale()
    poses = forward_npose(scale)
    heel = np.add(poses[SegmentId.RightFoot].position, scale.heel_offset)
    np.testing.assert_allclose(heel, 0.0, atol=1e-12)
    assert poses[SegmentId.RightFoot].position[2] > 0


def test_forward_npose_deterministic():
    s = default_scale()
    assert forward_npose(s) == forward_npose(s)
