"""Independent reference implementations used as test oracles.

Nothing here calls into the code under test except for plain data types.
"""

from __future__ import annotations

import math
import random
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np


# -- rotations ---------------------------------------------------------------


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def zxy_matrix(z, x, y):
    return rot_z(z) @ rot_x(x) @ rot_y(y)


def quat_matrix(w, x, y, z):
    """Rotation matrix of a unit quaternion via the sandwich product q v q*."""
    q = np.array([w, x, y, z], dtype=float)

    def mul(a, b):
        aw, av = a[0], a[1:]
        bw, bv = b[0], b[1:]
        return np.concatenate(([aw * bw - av @ bv], aw * bv + bw * av + np.cross(av, bv)))

    conj = q * np.array([1, -1, -1, -1])
    cols = [mul(mul(q, np.concatenate(([0.0], e))), conj)[1:] for e in np.eye(3)]
    return np.column_stack(cols)


def axis_angle_matrix(axis, angle):
    """Rodrigues' formula."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx


def rpy_matrix(r, p, y):
    """URDF fixed-axis roll-pitch-yaw: Rz(yaw) Ry(pitch) Rx(roll)."""
    return rot_z(y) @ rot_y(p) @ rot_x(r)


# -- URDF forward kinematics -------------------------------------------------


def urdf_forward_kinematics(text: str, positions: dict[str, float] | None = None) -> dict[str, np.ndarray]:
    """World position of every link origin, root link at the world origin."""
    positions = positions or {}
    root = ET.fromstring(text)
    joints = {}
    for j in root.iter("joint"):
        origin = j.find("origin")
        xyz = [float(v) for v in origin.get("xyz", "0 0 0").split()] if origin is not None else [0, 0, 0]
        rpy = [float(v) for v in origin.get("rpy", "0 0 0").split()] if origin is not None else [0, 0, 0]
        axis_el = j.find("axis")
        axis = [float(v) for v in axis_el.get("xyz").split()] if axis_el is not None else [1, 0, 0]
        joints[j.find("child").get("link")] = (j.get("name"), j.find("parent").get("link"),
                                              np.array(xyz), rpy_matrix(*rpy), axis, j.get("type"))
    links = [link.get("name") for link in root.iter("link")]
    (base,) = [n for n in links if n not in joints]

    world: dict[str, tuple[np.ndarray, np.ndarray]] = {base: (np.eye(3), np.zeros(3))}

    def resolve(name):
        if name in world:
            return world[name]
        jname, parent, xyz, rot, axis, jtype = joints[name]
        pr, pp = resolve(parent)
        q = positions.get(jname, 0.0) if jtype == "revolute" else 0.0
        r = pr @ rot @ axis_angle_matrix(axis, q)
        world[name] = (r, pp + pr @ xyz)
        return world[name]

    for n in links:
        resolve(n)
    return {n: p for n, (_, p) in world.items()}


# -- centre of mass ----------------------------------------------------------


def weighted_mean(points, weights) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    return (w[:, None] * pts).sum(axis=0) / w.sum()


# -- wire format -------------------------------------------------------------


def golden_header(kind_code: int, sample: int, index: int, last: bool, count: int, time_code: int,
                  character: int, body: int, props: int, fingers: int, payload: int) -> bytes:
    """Header bytes assembled field by field, independent of the package."""
    out = b"MXTP" + b"%02d" % kind_code
    out += sample.to_bytes(4, "big")
    out += bytes([(0x80 if last else 0) | index, count])
    out += time_code.to_bytes(4, "big")
    out += bytes([character, body, props, fingers])
    out += (0).to_bytes(2, "big")
    out += payload.to_bytes(2, "big")
    return out


def f32(v: float) -> float:
    return struct.unpack(">f", struct.pack(">f", v))[0]


# -- reassembly --------------------------------------------------------------


@dataclass
class Delivery:
    """One datagram as scheduled by the fault injector."""

    sample: int
    key: tuple  # (kind code, datagram index)
    raw: bytes


def inject_faults(per_sample: list[list[bytes]], keys: list[list[tuple]], *, rng: random.Random,
                  reorder: float, duplicate: float, drop_samples: set[int], drop_one: set[int]) -> list[Delivery]:
    """Schedule datagrams with drops, duplicates and bounded reordering.

    A datagram of sample ``s`` is never delivered after the first datagram of
    sample ``s + 2`` so every fault stays inside the assembler's window.
    """
    seq: list[Delivery] = []
    for s, (raws, ks) in enumerate(zip(per_sample, keys)):
        if s in drop_samples:
            continue
        victim = rng.randrange(len(raws)) if s in drop_one else None
        for i, (raw, k) in enumerate(zip(raws, ks)):
            if i != victim:
                seq.append(Delivery(s, k, raw))

    # duplicates: copy inserted later, still inside the window
    out = list(seq)
    i = 0
    while i < len(out):
        if rng.random() < duplicate:
            d = out[i]
            hi = _limit_in(out, i, d.sample)
            out.insert(rng.randint(i + 1, hi + 1), Delivery(d.sample, d.key, d.raw))
            i += 1
        i += 1
    # reordering: move a datagram later by a bounded amount
    n_moves = int(round(reorder * len(out)))
    for _ in range(n_moves):
        i = rng.randrange(len(out))
        d = out[i]
        hi = _limit_in(out, i, d.sample)
        if hi > i:
            out.pop(i)
            out.insert(rng.randint(i + 1, hi), d)
    return out


def _limit_in(seq, pos, sample):
    # last position before the first datagram of sample + 2
    j = pos
    while j + 1 < len(seq) and seq[j + 1].sample < sample + 2:
        j += 1
    return j


def reference_assembly(deliveries: list[Delivery], expected_keys: list[set]) -> tuple[list[int], int]:
    """Brute force: samples whose every datagram arrived, in order, plus gap count.

    ``expected_keys[s]`` is the full datagram key set that sample ``s`` was
    split into. Gaps are counted between consecutive complete samples, from
    the first to the last sample that reached the receiver.
    """
    got: dict[int, set] = {}
    for d in deliveries:
        got.setdefault(d.sample, set()).add(d.key)
    complete = [s for s in sorted(got) if got[s] == expected_keys[s]]
    gaps = sum(b - a - 1 for a, b in zip(complete, complete[1:]))
    return complete, gaps
