"""Articulated-object domain model, kinematic graph and joint posing."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DanglingReference,
    InvalidJoint,
    MultipleParents,
    MultipleRoots,
    NotAdjacent,
    UnknownJoint,
)
from .mesh import TriMesh, concatenate

__all__ = [
    "Aabb",
    "Link",
    "Joint",
    "JointKind",
    "ArticulatedObject",
    "KinematicGraph",
    "RigidTransform",
    "build_graph",
    "pose_part",
    "merge_links",
    "drop_link",
    "subtree_links",
    "transform_object",
    "union_aabb",
    "screw_pitch",
    "CONTAINMENT_TOL",
]

CONTAINMENT_TOL = 1e-4
AXIS_NORM_TOL = 1e-9


def _vec3(v) -> tuple[float, float, float]:
    a = [float(x) for x in v]
    if len(a) != 3:
        raise ValueError(f"expected a 3-vector, got {v!r}")
    return (a[0], a[1], a[2])


@dataclass(frozen=True)
class Aabb:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        lo, hi = _vec3(self.min), _vec3(self.max)
        if any(l > h for l, h in zip(lo, hi)):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def from_points(cls, points) -> "Aabb":
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(tuple(p.min(axis=0)), tuple(p.max(axis=0)))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.min)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def volume(self) -> float:
        return float(np.prod(self.extent))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(tuple(np.minimum(self.lo, other.lo)), tuple(np.maximum(self.hi, other.hi)))

    def inflate(self, pad: float) -> "Aabb":
        return Aabb(tuple(self.lo - pad), tuple(self.hi + pad))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=1)

    def contains_box(self, other: "Aabb", tol: float = 0.0) -> bool:
        return bool(np.all(self.lo <= other.lo + tol) and np.all(self.hi >= other.hi - tol))

    def corners(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])


def union_aabb(boxes: Sequence[Aabb]) -> Aabb:
    boxes = list(boxes)
    out = boxes[0]
    for b in boxes[1:]:
        out = out.union(b)
    return out


@dataclass(frozen=True, eq=False)
class Link:
    """A rigid part. When a mesh is attached it must lie inside the box."""

    id: int
    name: str
    aabb: Aabb
    mesh: Optional[TriMesh] = None

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("link id must be non-negative")
        if self.mesh is not None and len(self.mesh.vertices):
            inside = self.aabb.contains(self.mesh.vertices, tol=CONTAINMENT_TOL)
            if not inside.all():
                raise ValueError(f"mesh of link {self.id} leaves its bounding box")

    @classmethod
    def from_mesh(cls, id: int, name: str, mesh: TriMesh) -> "Link":
        """Build a link whose box is recomputed from the mesh."""
        return cls(id, name, Aabb.from_points(mesh.vertices), mesh)

    def with_mesh(self, mesh: Optional[TriMesh]) -> "Link":
        if mesh is None or len(mesh.vertices) == 0:
            return replace(self, mesh=None)
        return replace(self, aabb=Aabb.from_points(mesh.vertices), mesh=mesh)


class JointKind(str, enum.Enum):
    REVOLUTE = "revolute"
    CONTINUOUS = "continuous"
    PRISMATIC = "prismatic"
    SCREW = "screw"
    FIXED = "fixed"

    @property
    def is_rotational(self) -> bool:
        return self in (JointKind.REVOLUTE, JointKind.CONTINUOUS)

    @property
    def has_origin(self) -> bool:
        return self in (JointKind.REVOLUTE, JointKind.CONTINUOUS, JointKind.SCREW)

    @property
    def has_limit(self) -> bool:
        return self in (JointKind.REVOLUTE, JointKind.PRISMATIC, JointKind.SCREW)

    @property
    def translational_limit(self) -> bool:
        return self in (JointKind.PRISMATIC, JointKind.SCREW)


@dataclass(frozen=True)
class Joint:
    """One joint, with axis and origin expressed in the world frame.

    ``limit`` is radians for revolute joints and length units for prismatic and
    screw joints. The interval may arrive reversed (``lo > hi``); consumers
    that need an ordered interval use :meth:`ordered_limit`.
    """

    id: int
    kind: JointKind
    parent: int
    child: int
    axis_dir: tuple[float, float, float] = (1.0, 0.0, 0.0)
    axis_origin: Optional[tuple[float, float, float]] = None
    limit: Optional[tuple[float, float]] = None
    name: Optional[str] = None

    def __post_init__(self):
        kind = JointKind(self.kind)
        object.__setattr__(self, "kind", kind)
        axis = _vec3(self.axis_dir)
        norm = math.sqrt(sum(a * a for a in axis))
        if abs(norm - 1.0) > AXIS_NORM_TOL:
            raise InvalidJoint(f"joint {self.id}: axis norm {norm} is not 1")
        object.__setattr__(self, "axis_dir", axis)
        if self.parent == self.child:
            raise InvalidJoint(f"joint {self.id}: parent equals child ({self.parent})")
        if kind == JointKind.PRISMATIC:
            if self.axis_origin is not None:
                raise InvalidJoint(f"joint {self.id}: prismatic joints carry no origin")
        elif kind.has_origin:
            if self.axis_origin is None:
                raise InvalidJoint(f"joint {self.id}: {kind.value} joint needs an origin")
        if self.axis_origin is not None:
            object.__setattr__(self, "axis_origin", _vec3(self.axis_origin))
        if kind.has_limit:
            if self.limit is None:
                raise InvalidJoint(f"joint {self.id}: {kind.value} joint needs a limit")
            lo, hi = (float(x) for x in self.limit)
            object.__setattr__(self, "limit", (lo, hi))
        elif self.limit is not None:
            raise InvalidJoint(f"joint {self.id}: {kind.value} joints carry no limit")

    @property
    def axis(self) -> np.ndarray:
        return np.array(self.axis_dir)

    @property
    def origin(self) -> np.ndarray:
        return np.zeros(3) if self.axis_origin is None else np.array(self.axis_origin)

    def ordered_limit(self) -> Optional[tuple[float, float]]:
        if self.limit is None:
            return None
        lo, hi = self.limit
        return (min(lo, hi), max(lo, hi))


@dataclass(frozen=True, eq=False)
class ArticulatedObject:
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    category: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "joints", tuple(self.joints))
        ids = [l.id for l in self.links]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate link ids")
        jids = [j.id for j in self.joints]
        if len(set(jids)) != len(jids):
            raise ValueError("duplicate joint ids")

    def link(self, link_id: int) -> Link:
        for l in self.links:
            if l.id == link_id:
                return l
        raise KeyError(link_id)

    def joint(self, joint_id: int) -> Joint:
        for j in self.joints:
            if j.id == joint_id:
                return j
        raise UnknownJoint(f"no joint with id {joint_id}")

    def union_aabb(self, prefer_mesh: bool = True) -> Aabb:
        """Union box of all links; meshes are used when any link has one."""
        meshes = [l.mesh for l in self.links if l.mesh is not None and len(l.mesh.vertices)]
        if prefer_mesh and meshes:
            return Aabb.from_points(np.concatenate([m.vertices for m in meshes]))
        return union_aabb([l.aabb for l in self.links])

    def replace(self, **changes) -> "ArticulatedObject":
        return replace(self, **changes)


@dataclass(frozen=True)
class KinematicGraph:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int, int], ...]
    root: int

    def children(self, node: int) -> list[int]:
        return [c for p, c, _ in self.edges if p == node]

    def parent_edge(self, node: int) -> Optional[tuple[int, int, int]]:
        for e in self.edges:
            if e[1] == node:
                return e
        return None


def build_graph(obj: ArticulatedObject) -> KinematicGraph:
    """Validate the link/joint structure and return its kinematic tree."""
    link_ids = {l.id for l in obj.links}
    for j in obj.joints:
        missing = [x for x in (j.parent, j.child) if x not in link_ids]
        if missing:
            raise DanglingReference(
                f"joint {j.id} references unknown link(s) {missing}", ids=[j.id, *missing]
            )
    incoming: dict[int, list[int]] = {}
    for j in obj.joints:
        incoming.setdefault(j.child, []).append(j.id)
    multi = {c: js for c, js in incoming.items() if len(js) > 1}
    if multi:
        child, js = min(multi.items())
        raise MultipleParents(f"link {child} is the child of joints {sorted(js)}", ids=[child, *js])

    parent_of = {j.child: j.parent for j in obj.joints}
    # walk up from every node; a revisit means a cycle
    for start in sorted(link_ids):
        seen = [start]
        node = start
        while node in parent_of:
            node = parent_of[node]
            if node == start or node in seen:
                cyc = seen[seen.index(node):] if node in seen else seen
                raise CycleDetected(f"cycle through links {sorted(set(cyc))}", ids=sorted(set(cyc)))
            seen.append(node)

    roots = sorted(link_ids - set(parent_of))
    if len(roots) != 1:
        raise MultipleRoots(f"expected one root link, found {roots}", ids=roots)
    edges = tuple(sorted((j.parent, j.child, j.id) for j in obj.joints))
    return KinematicGraph(tuple(sorted(link_ids)), edges, roots[0])


def subtree_links(obj: ArticulatedObject, link_id: int) -> list[int]:
    """``link_id`` and every link below it."""
    children: dict[int, list[int]] = {}
    for j in obj.joints:
        children.setdefault(j.parent, []).append(j.child)
    out, stack = [], [link_id]
    while stack:
        n = stack.pop()
        if n in out:
            continue
        out.append(n)
        stack.extend(children.get(n, []))
    return sorted(out)


# -- rigid transforms ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit ``axis``."""
    x, y, z = np.asarray(axis, dtype=np.float64)
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def screw_pitch(joint: Joint) -> float:
    """Translation per radian of rotation for a screw joint.

    One full turn covers the whole translation range. A zero-width range gives
    zero pitch, in which case the joint does not rotate.
    """
    lo, hi = joint.ordered_limit()
    return (hi - lo) / (2.0 * math.pi)


def pose_part(obj: ArticulatedObject, joint_id: int, q: float) -> RigidTransform:
    """World-frame transform applied to the child subtree of a joint at value ``q``."""
    joint = obj.joint(joint_id)
    kind = joint.kind
    if kind == JointKind.FIXED or q == 0:
        return RigidTransform.identity()
    axis = joint.axis
    if kind == JointKind.PRISMATIC:
        return RigidTransform(np.eye(3), q * axis)
    if kind in (JointKind.REVOLUTE, JointKind.CONTINUOUS):
        angle = q
        shift = np.zeros(3)
    else:
        pitch = screw_pitch(joint)
        angle = q / pitch if pitch > 0 else 0.0
        shift = q * axis
    rot = axis_angle_matrix(axis, angle)
    o = joint.origin
    return RigidTransform(rot, o - rot @ o + shift)


# -- structural edits -------------------------------------------------------------

def _compact(links: list[Link], joints: list[Joint], category, name) -> ArticulatedObject:
    """Renumber links to 0..n-1 (and joints to 0..m-1) keeping relative order."""
    links = sorted(links, key=lambda l: l.id)
    remap = {l.id: i for i, l in enumerate(links)}
    new_links = [replace(l, id=remap[l.id]) for l in links]
    new_joints = [
        replace(j, id=i, parent=remap[j.parent], child=remap[j.child])
        for i, j in enumerate(sorted(joints, key=lambda j: j.id))
    ]
    return ArticulatedObject(tuple(new_links), tuple(new_joints), category, name)


def merge_links(obj: ArticulatedObject, keep: int, absorb: int) -> ArticulatedObject:
    """Fold link ``absorb`` into its neighbour ``keep`` and drop the joint between them."""
    connecting = [j for j in obj.joints if {j.parent, j.child} == {keep, absorb}]
    if not connecting:
        raise NotAdjacent(f"links {keep} and {absorb} share no joint")
    drop = connecting[0]
    k, a = obj.link(keep), obj.link(absorb)
    if k.mesh is not None or a.mesh is not None:
        mesh = concatenate([k.mesh, a.mesh])
        box = Aabb.from_points(mesh.vertices).union(k.aabb).union(a.aabb)
    else:
        mesh = None
        box = k.aabb.union(a.aabb)
    merged = Link(k.id, k.name, box, mesh)
    links = [merged if l.id == keep else l for l in obj.links if l.id != absorb]
    joints = []
    for j in obj.joints:
        if j.id == drop.id:
            continue
        parent = keep if j.parent == absorb else j.parent
        child = keep if j.child == absorb else j.child
        joints.append(replace(j, parent=parent, child=child))
    return _compact(links, joints, obj.category, obj.name)


def drop_link(obj: ArticulatedObject, link_id: int, joints: Sequence[Joint]) -> ArticulatedObject:
    """Remove a link outright, replacing the joint list; ids are compacted."""
    links = [l for l in obj.links if l.id != link_id]
    return _compact(links, list(joints), obj.category, obj.name)


def transform_object(
    obj: ArticulatedObject, rotation=None, scale: float = 1.0, offset=None
) -> ArticulatedObject:
    """Apply ``p -> scale * R p + offset`` to geometry and joints.

    Axis directions are rotated only; translation limits scale with the object
    and rotation limits are untouched. Boxes are recomputed from meshes when
    present, otherwise from the eight transformed corners.
    """
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    t = np.zeros(3) if offset is None else np.asarray(offset, dtype=np.float64)

    def pts(p):
        return scale * (np.asarray(p, dtype=np.float64) @ R.T) + t

    links = []
    for l in obj.links:
        if l.mesh is not None:
            mesh = l.mesh.transformed(R, t, scale)
            box = Aabb.from_points(mesh.vertices)
            links.append(Link(l.id, l.name, box, mesh))
        else:
            links.append(Link(l.id, l.name, Aabb.from_points(pts(l.aabb.corners()))))
    joints = []
    for j in obj.joints:
        axis = R @ j.axis
        axis = axis / np.linalg.norm(axis)
        origin = None if j.axis_origin is None else tuple(pts(j.origin))
        limit = j.limit
        if limit is not None and j.kind.translational_limit:
            limit = (limit[0] * scale, limit[1] * scale)
        joints.append(replace(j, axis_dir=tuple(axis), axis_origin=origin, limit=limit))
    return ArticulatedObject(tuple(links), tuple(joints), obj.category, obj.name)
