"""URDF human model: 23 segment links, 3 revolute joints per anatomical joint.

Each anatomical joint J between segments P and C becomes the chain::

    P --J_z--> J_f1 --J_x--> J_f2 --J_y--> C

so the revolute joint names equal the joint-state names and a joint-state
vector can drive the model without translation.
"""

from __future__ import annotations

import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional

from .kinematics import DOF_AXES, ScaleData, SkeletonTopology
from .mapper import joint_dof_name

log = logging.getLogger(__name__)

AXIS_VECTORS = {"z": (0.0, 0.0, 1.0), "x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0)}
VIRTUAL_MASS_KG = 1e-6
DEFAULT_BODY_MASS_KG = 75.0
JOINT_LIMIT = 2 * math.pi
JOINT_EFFORT = 1000.0
JOINT_VELOCITY = 100.0
_VISUAL_RADIUS = 0.04


class UrdfError(ValueError):
    pass


class MalformedXml(UrdfError):
    pass


class UnsupportedJointType(UrdfError):
    pass


@dataclass(frozen=True)
class Inertial:
    mass: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    inertia: tuple[float, float, float] = (0.0, 0.0, 0.0)  # ixx, iyy, izz


@dataclass(frozen=True)
class Visual:
    """A cylinder from the link origin to ``tip`` (link frame)."""

    tip: tuple[float, float, float]
    radius: float = _VISUAL_RADIUS


@dataclass(frozen=True)
class LinkSpec:
    name: str
    kind: str = "segment"  # or "virtual"
    inertial: Optional[Inertial] = None
    visual: Optional[Visual] = None

    def __post_init__(self):
        if self.kind not in ("segment", "virtual"):
            raise ValueError(f"link kind {self.kind!r}")
        if self.kind == "virtual" and self.visual is not None:
            raise ValueError(f"virtual link {self.name} cannot have a visual")
        if self.kind == "virtual" and self.inertial is not None and self.inertial.mass > VIRTUAL_MASS_KG:
            raise ValueError(f"virtual link {self.name} cannot carry mass")


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    child: str
    axis: tuple[float, float, float]
    xyz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)
    type: str = "revolute"
    lower: float = -JOINT_LIMIT
    upper: float = JOINT_LIMIT
    effort: float = JOINT_EFFORT
    velocity: float = JOINT_VELOCITY

    def __post_init__(self):
        if abs(math.sqrt(sum(c * c for c in self.axis)) - 1.0) > 1e-12:
            raise ValueError(f"joint {self.name}: axis {self.axis} is not unit length")


@dataclass(frozen=True)
class UrdfDocument:
    robot_name: str
    links: tuple[LinkSpec, ...] = field(default_factory=tuple)
    joints: tuple[JointSpec, ...] = field(default_factory=tuple)

    @property
    def segment_links(self) -> int:
        return sum(1 for link in self.links if link.kind == "segment")

    @property
    def virtual_links(self) -> int:
        return sum(1 for link in self.links if link.kind == "virtual")

    @property
    def revolute_joints(self) -> int:
        return sum(1 for j in self.joints if j.type == "revolute")


def _segment_inertial(mass: float, length: float) -> Inertial:
    # slender rod about the transverse axes, thin cylinder about the long one
    length = max(length, 2 * _VISUAL_RADIUS)
    transverse = mass * length * length / 12.0
    axial = 0.5 * mass * _VISUAL_RADIUS ** 2
    return Inertial(mass, (0.0, 0.0, 0.0), (transverse, transverse, axial))


def generate_urdf(topo: SkeletonTopology, scale: ScaleData, robot_name: str = "human", *,
                  body_mass_kg: float = DEFAULT_BODY_MASS_KG, physics: bool = False,
                  visuals: bool = True) -> UrdfDocument:
    """Build the model; ``physics`` gives virtual links a 1e-6 kg mass."""
    scale.validate()
    virtual_inertial = Inertial(VIRTUAL_MASS_KG, inertia=(1e-9, 1e-9, 1e-9)) if physics else None
    parent_of = {child: (jid, parent) for jid, parent, child in topo.edges}

    links = []
    joints = []
    for seg in topo.traversal():
        if seg in parent_of:
            jid, parent = parent_of[seg]
            offset = scale.offsets[seg]
            if not any(offset):
                log.warning("%s has a zero-length offset; its joint origins coincide", jid.name)
            chain = [parent.name, f"{jid.name}_f1", f"{jid.name}_f2", seg.name]
            for k, axis in enumerate(DOF_AXES):
                if k < 2:
                    links.append(LinkSpec(chain[k + 1], "virtual", virtual_inertial))
                joints.append(JointSpec(
                    joint_dof_name(jid, axis),
                    chain[k],
                    chain[k + 1],
                    AXIS_VECTORS[axis],
                    xyz=offset if k == 0 else (0.0, 0.0, 0.0),
                ))
        children = topo.children(seg)
        tip = scale.offsets[children[0]] if children else (0.0, 0.0, 0.0)
        length = math.sqrt(sum(c * c for c in tip))
        links.append(LinkSpec(
            seg.name,
            "segment",
            _segment_inertial(scale.mass_fractions[seg] * body_mass_kg, length),
            Visual(tip) if visuals and length > 0 else None,
        ))
    return UrdfDocument(robot_name, tuple(links), tuple(joints))


# -- rendering ---------------------------------------------------------------


def _num(v: float) -> str:
    v = float(v)
    if v == 0.0:
        return "0"
    return repr(v)


def _vec(v) -> str:
    return " ".join(_num(c) for c in v)


def _cylinder_rpy(tip) -> tuple[float, float, float]:
    """rpy turning the link z axis onto ``tip``."""
    x, y, z = tip
    return (0.0, math.atan2(math.hypot(x, y), z), math.atan2(y, x))


def render_xml(doc: UrdfDocument) -> str:
    if not doc.robot_name:
        log.warning("robot name is empty")
    robot = ET.Element("robot", name=doc.robot_name)
    for link in doc.links:
        el = ET.SubElement(robot, "link", name=link.name)
        if link.inertial is not None:
            inertial = ET.SubElement(el, "inertial")
            ET.SubElement(inertial, "origin", xyz=_vec(link.inertial.origin), rpy="0 0 0")
            ET.SubElement(inertial, "mass", value=_num(link.inertial.mass))
            ixx, iyy, izz = link.inertial.inertia
            ET.SubElement(inertial, "inertia", ixx=_num(ixx), ixy="0", ixz="0",
                          iyy=_num(iyy), iyz="0", izz=_num(izz))
        if link.visual is not None:
            visual = ET.SubElement(el, "visual")
            tip = link.visual.tip
            mid = tuple(c / 2 for c in tip)
            ET.SubElement(visual, "origin", xyz=_vec(mid), rpy=_vec(_cylinder_rpy(tip)))
            geometry = ET.SubElement(visual, "geometry")
            length = math.sqrt(sum(c * c for c in tip))
            ET.SubElement(geometry, "cylinder", radius=_num(link.visual.radius), length=_num(length))
    for j in doc.joints:
        el = ET.SubElement(robot, "joint", name=j.name, type=j.type)
        ET.SubElement(el, "parent", link=j.parent)
        ET.SubElement(el, "child", link=j.child)
        ET.SubElement(el, "origin", xyz=_vec(j.xyz), rpy=_vec(j.rpy))
        ET.SubElement(el, "axis", xyz=_vec(j.axis))
        if j.type == "revolute":
            ET.SubElement(el, "limit", lower=_num(j.lower), upper=_num(j.upper),
                          effort=_num(j.effort), velocity=_num(j.velocity))
    ET.indent(robot, space="  ")
    return '<?xml version="1.0"?>\n' + ET.tostring(robot, encoding="unicode") + "\n"


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class UrdfSummary:
    links: int
    virtual_links: int
    revolute_joints: int
    is_tree: bool

    def as_dict(self) -> dict:
        return {
            "links": self.links,
            "virtual_links": self.virtual_links,
            "revolute_joints": self.revolute_joints,
            "is_tree": self.is_tree,
        }


def _is_virtual(link: ET.Element) -> bool:
    if link.find("visual") is not None or link.find("collision") is not None:
        return False
    inertial = link.find("inertial")
    if inertial is None:
        return True
    mass = inertial.find("mass")
    try:
        return mass is None or float(mass.get("value", "0")) <= VIRTUAL_MASS_KG
    except ValueError:
        raise MalformedXml(f"link {link.get('name')}: bad mass value") from None


def validate_urdf(text: str) -> UrdfSummary:
    """Count links and joints in URDF text and check that it forms a tree.

    A link is counted as virtual when it has no visual or collision element
    and carries at most 1e-6 kg.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from None
    if root.tag != "robot":
        raise MalformedXml(f"root element is <{root.tag}>, expected <robot>")

    names = []
    virtual = 0
    for link in root.iter("link"):
        if link.get("name") is None:
            raise MalformedXml("link without a name")
        names.append(link.get("name"))
        virtual += _is_virtual(link)

    revolute = 0
    edges = []
    for joint in root.iter("joint"):
        jtype = joint.get("type")
        if jtype not in ("revolute", "fixed"):
            raise UnsupportedJointType(f"joint {joint.get('name')!r} has type {jtype!r}")
        revolute += jtype == "revolute"
        parent, child = joint.find("parent"), joint.find("child")
        if parent is None or child is None:
            raise MalformedXml(f"joint {joint.get('name')!r} lacks parent or child")
        edges.append((parent.get("link"), child.get("link")))

    return UrdfSummary(len(names) - virtual, virtual, revolute, _forms_tree(names, edges))


def _forms_tree(names: list, edges: list) -> bool:
    nodes = set(names)
    if len(nodes) != len(names) or not nodes:
        return False
    parent = {}
    for p, c in edges:
        if p not in nodes or c not in nodes or c in parent:
            return False
        parent[c] = p
    roots = nodes - set(parent)
    if len(roots) != 1 or len(edges) != len(nodes) - 1:
        return False
    # walk up from every node; a cycle never reaches the root
    (root,) = roots
    for n in nodes:
        seen = set()
        while n != root:
            if n in seen:
                return False
            seen.add(n)
            n = parent[n]
    return True
