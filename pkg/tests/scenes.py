"""Constructed articulated scenes with analytically known contact values."""

import json
import math
from pathlib import Path

import numpy as np

from artkit.assets import save_asset
from artkit.kinematics import Aabb, ArticulatedObject, Joint, JointKind, Link
from artkit.mesh import box_mesh, concatenate, save_mesh


def box_link(link_id, name, lo, hi):
    return Link.from_mesh(link_id, name, box_mesh(lo, hi))


def hinged_door(wall=True, upper_deg=135.0, width=0.8, thickness=0.05, height=1.0):
    """Panel hinged on the z axis; a wall on the x < 0 side stops it at exactly 90 degrees."""
    links = [
        box_link(0, "wall", (-0.1, 0.0, 0.0), (0.0, width + 0.1, height)) if wall
        else box_link(0, "post", (-0.1, -0.2, 0.0), (0.0, -0.1, height)),
        box_link(1, "door", (0.0, -thickness, 0.0), (width, 0.0, height)),
    ]
    joint = Joint(0, JointKind.REVOLUTE, 0, 1, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0),
                  (0.0, math.radians(upper_deg)))
    return ArticulatedObject(tuple(links), (joint,), "door")


def drawer_cabinet(depth=0.4, travel_factor=1.5, wall_t=0.05):
    """Hollow drawer sliding along -z into a cavity whose back wall sits ``depth`` behind it.

    Returns the object and the analytic contact travel (``depth``).
    """
    w, h, length, t = 0.6, 0.3, 0.3, 0.02
    z_back = -length - depth
    back = box_link(0, "back", (-0.5, -0.4, z_back - 0.1), (0.5, 0.4, z_back))
    drawer = concatenate([
        box_mesh((-w / 2, -h / 2, -t), (w / 2, h / 2, 0.0)),                 # front
        box_mesh((-w / 2, -h / 2, -length), (w / 2, h / 2, -length + t)),    # back
        box_mesh((-w / 2, -h / 2, -length + t), (-w / 2 + t, h / 2, -t)),    # left
        box_mesh((w / 2 - t, -h / 2, -length + t), (w / 2, h / 2, -t)),      # right
        box_mesh((-w / 2 + t, -h / 2, -length + t), (w / 2 - t, -h / 2 + t, -t)),  # bottom
    ])
    links = [back, Link.from_mesh(1, "drawer", drawer)]
    joint = Joint(0, JointKind.PRISMATIC, 0, 1, (0.0, 0.0, -1.0), None,
                  (0.0, travel_factor * depth))
    return ArticulatedObject(tuple(links), (joint,), "drawer"), depth


def door_and_drawer():
    """One colliding revolute door plus one collision-free drawer on the same body."""
    body = box_link(0, "wall", (-0.1, 0.0, 0.0), (0.0, 0.9, 1.0))
    door = box_link(1, "door", (0.0, -0.05, 0.0), (0.8, 0.0, 1.0))
    slider = box_link(2, "slider", (-0.1, 1.2, 0.0), (0.0, 1.4, 0.2))
    joints = (
        Joint(0, JointKind.REVOLUTE, 0, 1, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0),
              (0.0, math.radians(135.0))),
        Joint(1, JointKind.PRISMATIC, 0, 2, (0.0, 1.0, 0.0), None, (0.0, 0.3)),
    )
    return ArticulatedObject((body, door, slider), joints, "mixed")


FIXTURE_URDF = """<?xml version="1.0"?>
<robot name="bottle_rig">
  <link name="base">
    <visual><geometry><mesh filename="package://meshes/base.obj"/></geometry></visual>
  </link>
  <link name="bracket">
    <visual><origin xyz="0 0 0"/><geometry><mesh filename="meshes/bracket.obj"/></geometry></visual>
  </link>
  <link name="label">
    <visual><geometry><mesh filename="meshes/label.obj"/></geometry></visual>
  </link>
  <link name="cap_helper"/>
  <link name="cap">
    <visual><geometry><mesh filename="meshes/cap.obj"/></geometry></visual>
  </link>
  <joint name="bracket_mount" type="fixed">
    <parent link="base"/><child link="bracket"/>
    <origin xyz="1.0 0 0" rpy="0 0 0"/>
  </joint>
  <joint name="label_mount" type="fixed">
    <parent link="bracket"/><child link="label"/>
    <origin xyz="0 0.5 0"/>
  </joint>
  <joint name="cap_twist" type="revolute">
    <parent link="base"/><child link="cap_helper"/>
    <origin xyz="0.25 0.25 2.0"/>
    <axis xyz="0 0 1"/>
    <limit lower="0" upper="6.283185307179586" effort="1" velocity="1"/>
  </joint>
  <joint name="cap_lift" type="prismatic">
    <parent link="cap_helper"/><child link="cap"/>
    <axis xyz="0 0 1"/>
    <limit lower="0" upper="0.05" effort="1" velocity="1"/>
  </joint>
  <gazebo reference="base"/>
</robot>
"""


def write_fixture_urdf(directory):
    """Write the fixture URDF and its meshes; returns the URDF path.

    The raw model spans z in [0, 2.4] (the longest axis) before normalization.
    """
    d = Path(directory)
    (d / "meshes").mkdir(parents=True, exist_ok=True)
    save_mesh(box_mesh((0, 0, 0), (0.5, 0.5, 2.0)), d / "meshes" / "base.obj")
    save_mesh(box_mesh((0, 0, 0), (0.2, 0.2, 0.5)), d / "meshes" / "bracket.obj")
    save_mesh(box_mesh((0, 0, 0), (0.1, 0.1, 0.1)), d / "meshes" / "label.obj")
    save_mesh(box_mesh((-0.2, -0.2, 0.0), (0.2, 0.2, 0.4)), d / "meshes" / "cap.obj")
    path = d / "rig.urdf"
    path.write_text(FIXTURE_URDF, encoding="utf-8")
    return path


MOVABLE_KINDS = (JointKind.REVOLUTE, JointKind.CONTINUOUS, JointKind.PRISMATIC, JointKind.SCREW)


def random_object(rng, max_joints=20, kinds=MOVABLE_KINDS):
    """Random valid tree of box links inside [-1, 1]^3 with movable joints."""
    n_joints = int(rng.integers(0, max_joints + 1))
    n = n_joints + 1
    links = []
    for i in range(n):
        a, b = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        links.append(Link(i, f"part{i}", Aabb(np.minimum(a, b), np.maximum(a, b))))
    joints = []
    for k in range(n_joints):
        child = k + 1
        parent = int(rng.integers(0, child))
        kind = kinds[int(rng.integers(len(kinds)))]
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        origin = tuple(rng.uniform(-1, 1, 3)) if kind.has_origin else None
        limit = None
        if kind == JointKind.REVOLUTE:
            limit = tuple(sorted(rng.uniform(-math.pi, math.pi, 2)))
        elif kind.translational_limit:
            limit = tuple(sorted(rng.uniform(-1, 1, 2)))
        joints.append(Joint(k, kind, parent, child, tuple(axis), origin, limit))
    # shuffle link ids so the tree is not trivially ordered
    perm = rng.permutation(n)
    links = [Link(int(perm[l.id]), l.name, l.aabb) for l in links]
    joints = [Joint(j.id, j.kind, int(perm[j.parent]), int(perm[j.child]), j.axis_dir,
                    j.axis_origin, j.limit) for j in joints]
    return ArticulatedObject(tuple(sorted(links, key=lambda l: l.id)), tuple(joints))


def write_dataset(directory, n_random=6, seed=0):
    """Corpus input tree: ``<dir>/<id>/mobility.urdf`` plus ``meta.json`` per object.

    Holds the constructed scenes, the fixture URDF, ``n_random`` random objects
    and one object with 24 joints that the default policy must drop.
    """
    root = Path(directory)
    rng = np.random.default_rng(seed)
    objects = {"door": hinged_door(), "drawer": drawer_cabinet()[0], "mixed": door_and_drawer()}
    for i in range(n_random):
        objects[f"rand{i:02d}"] = random_object(rng, max_joints=6).replace(category=f"cat{i % 3}")
    big = random_object(rng, max_joints=40)
    while len(big.joints) <= 20:
        big = random_object(rng, max_joints=40)
    objects["big"] = big.replace(category="cat0")
    for oid, obj in objects.items():
        d = root / oid
        save_asset(obj, d / "mobility.urdf")
        (d / "meta.json").write_text(json.dumps({"category": obj.category, "source": "synthetic"}))
    write_fixture_urdf(root / "rig")
    (root / "rig" / "rig.urdf").rename(root / "rig" / "mobility.urdf")
    (root / "rig" / "meta.json").write_text(json.dumps({"category": "bottle", "source": "fixture"}))
    return root


def random_box_instance(rng, n_points=200, n_boxes=5):
    """Random point set plus boxes that leave many points uncovered."""
    boxes = []
    for _ in range(n_boxes):
        a, b = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        c = (a + b) / 2
        boxes.append(Aabb(c - np.abs(a - b) / 4, c + np.abs(a - b) / 4))
    return rng.uniform(-1, 1, (n_points, 3)), boxes


def random_tree_edges(rng, n):
    """Random rooted tree on nodes 0..n-1 as (parent, child) pairs."""
    return [(int(rng.integers(0, k)), k) for k in range(1, n)]


def tree_object(n, edges):
    links = tuple(Link(i, f"l{i}", Aabb((0, 0, 0), (1, 1, 1))) for i in range(n))
    joints = tuple(Joint(k, JointKind.PRISMATIC, p, c, (1, 0, 0), None, (0, 1))
                   for k, (p, c) in enumerate(edges))
    return ArticulatedObject(links, joints)
