"""URDF ingestion and emission, structure simplification and normalization."""

from __future__ import annotations

import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    DegenerateExtent,
    IoFailure,
    UnresolvedLinkName,
    UnsupportedJointType,
    XmlMalformed,
)
from .kinematics import (
    Aabb,
    ArticulatedObject,
    Joint,
    JointKind,
    Link,
    RigidTransform,
    build_graph,
    drop_link,
    merge_links,
    screw_pitch,
    transform_object,
)
from .mesh import TriMesh, concatenate

log = logging.getLogger(__name__)

__all__ = [
    "Origin",
    "RawVisual",
    "RawLink",
    "RawJoint",
    "RawUrdfModel",
    "NormalizationTransform",
    "parse_urdf",
    "globalize",
    "simplify",
    "normalize",
    "emit_urdf",
    "rpy_matrix",
    "SCREW_AXIS_TOL",
]

KNOWN_ELEMENTS = {
    "robot", "link", "visual", "collision", "geometry", "mesh", "origin",
    "joint", "parent", "child", "axis", "limit",
}
URDF_JOINT_TYPES = {"revolute", "continuous", "prismatic", "fixed"}
SCREW_AXIS_TOL = 1e-3
HELPER_VOLUME_TOL = 1e-9
NORMALIZED_HALF_SPAN = 0.9


def rpy_matrix(rpy) -> np.ndarray:
    """URDF fixed-axis roll/pitch/yaw: ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    r, p, y = rpy
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


@dataclass(frozen=True)
class Origin:
    xyz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def transform(self) -> RigidTransform:
        return RigidTransform(rpy_matrix(self.rpy), np.array(self.xyz, dtype=np.float64))


@dataclass
class RawVisual:
    filename: str
    origin: Origin = Origin()
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass
class RawLink:
    name: str
    visuals: list[RawVisual] = field(default_factory=list)
    collisions: list[RawVisual] = field(default_factory=list)
    resolver: Optional[Callable[[str], TriMesh]] = field(default=None, repr=False)

    def load_mesh(self) -> Optional[TriMesh]:
        """Load and merge the link's geometry in link-local coordinates.

        Visual geometry is used when present, collision geometry otherwise.
        Nothing is read until this is called.
        """
        shapes = self.visuals or self.collisions
        if not shapes or self.resolver is None:
            return None
        parts = []
        for vis in shapes:
            mesh = self.resolver(vis.filename)
            v = mesh.vertices * np.array(vis.scale)
            parts.append(TriMesh(v, mesh.faces).transformed(
                rpy_matrix(vis.origin.rpy), vis.origin.xyz))
        return concatenate(parts)


@dataclass
class RawJoint:
    name: str
    type: str
    parent: str
    child: str
    origin: Origin = Origin()
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    lower: Optional[float] = None
    upper: Optional[float] = None
    has_limit: bool = False


@dataclass
class RawUrdfModel:
    name: str
    links: list[RawLink]
    joints: list[RawJoint]
    warnings: list[str] = field(default_factory=list)


def _floats(text: Optional[str], default, n=3) -> tuple:
    if text is None:
        return default
    vals = tuple(float(x) for x in text.split())
    if len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {text!r}")
    return vals


def _origin(el) -> Origin:
    if el is None:
        return Origin()
    return Origin(_floats(el.get("xyz"), (0.0, 0.0, 0.0)), _floats(el.get("rpy"), (0.0, 0.0, 0.0)))


def _mesh_shapes(parent, tag: str, warnings: list) -> list[RawVisual]:
    out = []
    for shape in parent.findall(tag):
        geom = shape.find("geometry")
        mesh = None if geom is None else geom.find("mesh")
        if mesh is None:
            warnings.append(f"{tag} without <mesh> geometry ignored")
            continue
        scale = _floats(mesh.get("scale"), (1.0, 1.0, 1.0))
        out.append(RawVisual(mesh.get("filename", ""), _origin(shape.find("origin")), scale))
    return out


def parse_urdf(xml_text: str, mesh_resolver: Optional[Callable[[str], TriMesh]] = None) -> RawUrdfModel:
    """Parse the supported URDF subset.

    Unknown elements are skipped and reported in ``model.warnings``. Meshes are
    not read here; ``mesh_resolver`` is stored on each link and invoked by
    :meth:`RawLink.load_mesh`.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise XmlMalformed(f"malformed XML at line {line}, column {col}: {exc}", line, col) from None
    if root.tag != "robot":
        raise XmlMalformed(f"root element is <{root.tag}>, expected <robot>")
    warnings: list[str] = []
    for el in root.iter():
        if el.tag not in KNOWN_ELEMENTS:
            warnings.append(f"ignored element <{el.tag}>")

    links = []
    try:
        for el in root.findall("link"):
            links.append(RawLink(
                el.get("name", ""),
                _mesh_shapes(el, "visual", warnings),
                _mesh_shapes(el, "collision", warnings),
                mesh_resolver,
            ))
        names = {l.name for l in links}
        joints = []
        for el in root.findall("joint"):
            jname = el.get("name", "")
            jtype = el.get("type", "")
            if jtype not in URDF_JOINT_TYPES:
                raise UnsupportedJointType(f"joint {jname!r} has unsupported type {jtype!r}")
            parent_el, child_el = el.find("parent"), el.find("child")
            parent = None if parent_el is None else parent_el.get("link")
            child = None if child_el is None else child_el.get("link")
            for ref in (parent, child):
                if ref not in names:
                    raise UnresolvedLinkName(f"joint {jname!r} refers to unknown link {ref!r}")
            axis_el = el.find("axis")
            axis = _floats(None if axis_el is None else axis_el.get("xyz"), (1.0, 0.0, 0.0))
            limit_el = el.find("limit")
            lower = upper = None
            if limit_el is not None:
                lower = float(limit_el.get("lower", 0.0))
                upper = float(limit_el.get("upper", 0.0))
            joints.append(RawJoint(jname, jtype, parent, child, _origin(el.find("origin")),
                                   axis, lower, upper, limit_el is not None))
    except ValueError as exc:
        raise XmlMalformed(f"bad numeric attribute: {exc}") from None
    return RawUrdfModel(root.get("name", ""), links, joints, warnings)


def globalize(model: RawUrdfModel, category: Optional[str] = None) -> ArticulatedObject:
    """Express every joint and link mesh in the world frame at zero configuration."""
    index = {l.name: i for i, l in enumerate(model.links)}
    # validate structure first, on a skeleton object, so graph errors surface early
    skeleton = ArticulatedObject(
        tuple(Link(i, l.name, Aabb((0, 0, 0), (0, 0, 0))) for i, l in enumerate(model.links)),
        tuple(Joint(k, JointKind.FIXED, index[j.parent], index[j.child])
              for k, j in enumerate(model.joints)),
    )
    graph = build_graph(skeleton)

    by_child = {index[j.child]: (k, j) for k, j in enumerate(model.joints)}
    frames: dict[int, RigidTransform] = {graph.root: RigidTransform.identity()}
    order = [graph.root]
    for node in order:
        for child in graph.children(node):
            _, rj = by_child[child]
            frames[child] = frames[node].compose(rj.origin.transform())
            order.append(child)

    links = []
    for i, rl in enumerate(model.links):
        mesh = rl.load_mesh()
        frame = frames[i]
        if mesh is not None and len(mesh.vertices):
            world = mesh.transformed(frame.rotation, frame.translation)
            links.append(Link.from_mesh(i, rl.name, world))
        else:
            p = tuple(frame.translation)
            links.append(Link(i, rl.name, Aabb(p, p)))

    joints = []
    for k, rj in enumerate(model.joints):
        c = index[rj.child]
        frame = frames[c]
        axis = frame.apply_vector(np.array(rj.axis, dtype=np.float64))
        n = np.linalg.norm(axis)
        axis = axis / n if n > 0 else np.array([1.0, 0.0, 0.0])
        origin = tuple(frame.translation)
        if rj.type == "revolute" and rj.has_limit:
            kind, limit = JointKind.REVOLUTE, (rj.lower, rj.upper)
        elif rj.type in ("revolute", "continuous"):
            kind, limit = JointKind.CONTINUOUS, None
        elif rj.type == "prismatic":
            kind = JointKind.PRISMATIC
            limit = (rj.lower or 0.0, rj.upper or 0.0)
            origin = None
        else:
            kind, limit = JointKind.FIXED, None
        joints.append(Joint(k, kind, index[rj.parent], c, tuple(axis), origin, limit, rj.name))
    obj = ArticulatedObject(tuple(links), tuple(joints), category, model.name or None)
    build_graph(obj)
    return obj


# -- simplification ----------------------------------------------------------------

def _axis_angle(a, b) -> float:
    d = float(np.clip(np.dot(a, b), -1.0, 1.0))
    return math.acos(d)


def _is_helper(link: Link) -> bool:
    return link.mesh is None or link.mesh.volume() < HELPER_VOLUME_TOL


def _fuse_one_screw(obj: ArticulatedObject) -> Optional[ArticulatedObject]:
    children: dict[int, list[Joint]] = {}
    parent_joint: dict[int, Joint] = {}
    for j in obj.joints:
        children.setdefault(j.parent, []).append(j)
        parent_joint[j.child] = j
    rot_kinds = (JointKind.REVOLUTE, JointKind.CONTINUOUS)
    for upper in sorted(obj.joints, key=lambda j: j.id):
        mid = upper.child
        outs = children.get(mid, [])
        if len(outs) != 1 or not _is_helper(obj.link(mid)):
            continue
        lower = outs[0]
        pair = {upper.kind in rot_kinds, lower.kind in rot_kinds}
        kinds = {upper.kind, lower.kind}
        if JointKind.PRISMATIC not in kinds or pair != {True, False}:
            continue
        rev = upper if upper.kind in rot_kinds else lower
        pri = lower if rev is upper else upper
        angle = _axis_angle(rev.axis, pri.axis)
        if angle <= SCREW_AXIS_TOL:
            limit = pri.limit
        elif math.pi - angle <= SCREW_AXIS_TOL:
            limit = (-pri.limit[1], -pri.limit[0])
        else:
            continue
        screw = Joint(upper.id, JointKind.SCREW, upper.parent, lower.child,
                      rev.axis_dir, rev.axis_origin, limit, rev.name)
        joints = [screw if j.id == upper.id else j for j in obj.joints if j.id != lower.id]
        return drop_link(obj, mid, joints)
    return None


def simplify(obj: ArticulatedObject) -> ArticulatedObject:
    """Merge fixed joints away and fuse revolute+prismatic helper pairs into screws."""
    while True:
        fixed = [j for j in obj.joints if j.kind == JointKind.FIXED]
        if not fixed:
            break
        j = min(fixed, key=lambda j: j.id)
        obj = merge_links(obj, keep=j.parent, absorb=j.child)
    while True:
        fused = _fuse_one_screw(obj)
        if fused is None:
            break
        obj = fused
    return obj


# -- normalization -----------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationTransform:
    """``p_normalized = scale * p + offset``."""

    scale: float
    offset: tuple[float, float, float]

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) + np.array(self.offset)

    def invert(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.array(self.offset)) / self.scale

    def to_dict(self) -> dict:
        return {"scale": self.scale, "offset": list(self.offset)}

    @classmethod
    def from_dict(cls, d) -> "NormalizationTransform":
        return cls(float(d["scale"]), tuple(float(x) for x in d["offset"]))


def normalize(obj: ArticulatedObject) -> tuple[ArticulatedObject, NormalizationTransform]:
    """Uniformly fit the object into ``[-0.9, 0.9]^3``, centred on the origin."""
    box = obj.union_aabb()
    span = float(box.extent.max())
    if not np.all(np.isfinite(box.extent)) or span <= 0:
        raise DegenerateExtent(f"object extent {box.extent.tolist()} cannot be normalized")
    scale = 2.0 * NORMALIZED_HALF_SPAN / span
    offset = tuple(-scale * box.center)
    return transform_object(obj, scale=scale, offset=offset), NormalizationTransform(scale, offset)


# -- emission ----------------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _link_frame_positions(obj: ArticulatedObject) -> dict[int, np.ndarray]:
    """World position of each link frame in emitted URDF.

    A link frame sits on its parent joint's origin; prismatic children inherit
    their parent's frame position. All frames are unrotated.
    """
    graph = build_graph(obj)
    pos = {graph.root: np.zeros(3)}
    order = [graph.root]
    joint_by_child = {j.child: j for j in obj.joints}
    for node in order:
        for c in graph.children(node):
            j = joint_by_child[c]
            pos[c] = j.origin if j.axis_origin is not None else pos[node]
            order.append(c)
    return pos


def emit_urdf(obj: ArticulatedObject,
              mesh_writer: Optional[Callable[[Link], Optional[str]]] = None,
              name: Optional[str] = None) -> str:
    """Serialize an object as URDF.

    ``mesh_writer`` receives each link with its mesh expressed in the emitted
    link frame and returns the filename to reference, or ``None`` to omit
    geometry. Screw joints are written as a revolute+prismatic pair joined by a
    generated helper link.
    """
    frames = _link_frame_positions(obj)
    robot = ET.Element("robot", name=name or obj.name or "object")
    has_screw = any(j.kind == JointKind.SCREW for j in obj.joints)
    if has_screw:
        robot.append(ET.Comment(
            " screw joints are written as revolute + prismatic pairs through *_screw_helper links "))
    names = {l.id: l.name or f"link_{l.id}" for l in obj.links}

    for l in sorted(obj.links, key=lambda l: l.id):
        el = ET.SubElement(robot, "link", name=names[l.id])
        if mesh_writer is None:
            continue
        local_mesh = None
        if l.mesh is not None:
            local_mesh = l.mesh.transformed(translation=-frames[l.id])
        local = Link(l.id, l.name, Aabb(tuple(l.aabb.lo - frames[l.id]),
                                        tuple(l.aabb.hi - frames[l.id])), local_mesh)
        try:
            filename = mesh_writer(local)
        except OSError as exc:
            raise IoFailure(f"cannot write mesh for link {l.name!r}: {exc}") from exc
        if filename:
            vis = ET.SubElement(el, "visual")
            ET.SubElement(vis, "origin", xyz="0 0 0", rpy="0 0 0")
            geom = ET.SubElement(vis, "geometry")
            ET.SubElement(geom, "mesh", filename=filename)

    for j in sorted(obj.joints, key=lambda j: j.id):
        jname = j.name or f"joint_{j.id}"
        parent, child = names[j.parent], names[j.child]
        rel = (j.origin if j.axis_origin is not None else frames[j.child]) - frames[j.parent]
        if j.kind == JointKind.SCREW:
            helper = f"{jname}_screw_helper"
            ET.SubElement(robot, "link", name=helper)
            lo, hi = j.limit
            pitch = screw_pitch(j)
            rev = _joint_el(robot, jname, "revolute", parent, helper, rel, j.axis_dir)
            if pitch > 0:
                ET.SubElement(rev, "limit", lower=repr(lo / pitch), upper=repr(hi / pitch))
            else:
                ET.SubElement(rev, "limit", lower="0.0", upper="0.0")
            pri = _joint_el(robot, f"{jname}_screw_slide", "prismatic", helper, child,
                            np.zeros(3), j.axis_dir)
            ET.SubElement(pri, "limit", lower=repr(lo), upper=repr(hi))
            continue
        el = _joint_el(robot, jname, j.kind.value, parent, child, rel, j.axis_dir)
        if j.limit is not None:
            ET.SubElement(el, "limit", lower=repr(j.limit[0]), upper=repr(j.limit[1]))
    ET.indent(robot)
    return ET.tostring(robot, encoding="unicode") + "\n"


def _joint_el(robot, name, jtype, parent, child, xyz, axis):
    el = ET.SubElement(robot, "joint", name=name, type=jtype)
    ET.SubElement(el, "origin", xyz=_fmt(xyz), rpy="0 0 0")
    ET.SubElement(el, "parent", link=parent)
    ET.SubElement(el, "child", link=child)
    ET.SubElement(el, "axis", xyz=_fmt(axis))
    return el
