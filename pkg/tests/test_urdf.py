import math

import numpy as np
import pytest

from artkit.assets import ingest_urdf, load_asset, save_asset
from artkit.errors import (
    DegenerateExtent,
    UnresolvedLinkName,
    UnsupportedJointType,
    XmlMalformed,
)
from artkit.kinematics import Aabb, ArticulatedObject, Joint, JointKind, Link
from artkit.mesh import box_mesh
from artkit.urdf import emit_urdf, globalize, normalize, parse_urdf, rpy_matrix, simplify

from scenes import box_link, hinged_door, write_fixture_urdf


def _meshes(table):
    return lambda name: table[name]


CHAIN = """<robot name="chain">
  <link name="a"/><link name="b"/><link name="c"/>
  <joint name="j1" type="revolute">
    <parent link="a"/><child link="b"/><origin xyz="1 0 0"/>
    <axis xyz="0 0 1"/><limit lower="0" upper="1"/>
  </joint>
  <joint name="j2" type="prismatic">
    <parent link="b"/><child link="c"/><origin xyz="1 0 0"/><axis xyz="1 0 0"/>
    <limit lower="0" upper="0.5"/>
  </joint>
</robot>"""


class TestParse:
    def test_chain_structure(self):
        m = parse_urdf(CHAIN)
        assert [l.name for l in m.links] == ["a", "b", "c"]
        assert [(j.parent, j.child, j.type) for j in m.joints] == [
            ("a", "b", "revolute"), ("b", "c", "prismatic")]
        assert m.warnings == []

    def test_malformed_reports_position(self):
        with pytest.raises(XmlMalformed) as exc:
            parse_urdf("<robot>\n  <link name='a'>\n</robot>")
        assert exc.value.line == 3

    def test_wrong_root(self):
        with pytest.raises(XmlMalformed):
            parse_urdf("<model/>")

    def test_unknown_joint_type(self):
        xml = CHAIN.replace('type="prismatic"', 'type="planar"')
        with pytest.raises(UnsupportedJointType):
            parse_urdf(xml)

    def test_unresolved_link(self):
        xml = CHAIN.replace('<child link="c"/>', '<child link="zz"/>')
        with pytest.raises(UnresolvedLinkName):
            parse_urdf(xml)

    def test_unknown_elements_warn(self):
        m = parse_urdf(CHAIN.replace("</robot>", "<transmission/></robot>"))
        assert m.warnings == ["ignored element <transmission>"]

    def test_bad_number(self):
        with pytest.raises(XmlMalformed):
            parse_urdf(CHAIN.replace('upper="1"', 'upper="one"'))


class TestGlobalize:
    def test_chain_origin_composes(self):
        obj = globalize(parse_urdf(CHAIN))
        j1, j2 = obj.joints
        np.testing.assert_allclose(j1.origin, [1, 0, 0])
        assert j2.axis_origin is None
        # the prismatic child frame sits at (2, 0, 0)
        np.testing.assert_allclose(obj.links[2].aabb.lo, [2, 0, 0])

    def test_rotated_frame_maps_axis(self):
        xml = """<robot name="r"><link name="a"/><link name="b"/>
          <joint name="j" type="continuous"><parent link="a"/><child link="b"/>
            <origin xyz="0 0 0" rpy="0 1.5707963267948966 0"/><axis xyz="1 0 0"/>
          </joint></robot>"""
        obj = globalize(parse_urdf(xml))
        assert obj.joints[0].kind == JointKind.CONTINUOUS
        np.testing.assert_allclose(obj.joints[0].axis, [0, 0, -1], atol=1e-12)

    def test_revolute_without_limit_is_continuous(self):
        xml = CHAIN.replace('<limit lower="0" upper="1"/>', "")
        assert globalize(parse_urdf(xml)).joints[0].kind == JointKind.CONTINUOUS

    def test_mesh_baked_into_world(self):
        xml = """<robot name="m"><link name="a"/>
          <link name="b"><visual><origin xyz="0 0 1"/>
            <geometry><mesh filename="cube"/></geometry></visual></link>
          <joint name="j" type="fixed"><parent link="a"/><child link="b"/>
            <origin xyz="2 0 0"/></joint></robot>"""
        obj = globalize(parse_urdf(xml, _meshes({"cube": box_mesh((0, 0, 0), (1, 1, 1))})))
        assert obj.links[1].aabb == Aabb((2, 0, 1), (3, 1, 2))

    def test_rpy_matrix_is_fixed_axis_xyz(self):
        r = rpy_matrix((0.1, 0.2, 0.3))
        rx = rpy_matrix((0.1, 0, 0))
        ry = rpy_matrix((0, 0.2, 0))
        rz = rpy_matrix((0, 0, 0.3))
        np.testing.assert_allclose(r, rz @ ry @ rx, atol=1e-12)


class TestSimplify:
    def test_fixed_joints_merged(self):
        links = (box_link(0, "a", (0, 0, 0), (1, 1, 1)),
                 box_link(1, "b", (1, 0, 0), (2, 1, 1)),
                 box_link(2, "c", (2, 0, 0), (3, 1, 1)))
        joints = (Joint(0, JointKind.FIXED, 0, 1),
                  Joint(1, JointKind.PRISMATIC, 1, 2, (1, 0, 0), None, (0, 1)))
        out = simplify(ArticulatedObject(links, joints))
        assert [j.kind for j in out.joints] == [JointKind.PRISMATIC]
        assert out.links[0].aabb == Aabb((0, 0, 0), (2, 1, 1))

    def test_screw_pair_fused(self):
        links = (box_link(0, "base", (0, 0, 0), (1, 1, 1)),
                 Link(1, "helper", Aabb((0.5, 0.5, 1), (0.5, 0.5, 1))),
                 box_link(2, "cap", (0.4, 0.4, 1), (0.6, 0.6, 1.2)))
        joints = (Joint(0, JointKind.REVOLUTE, 0, 1, (0, 0, 1), (0.5, 0.5, 1), (0, 2 * math.pi), "twist"),
                  Joint(1, JointKind.PRISMATIC, 1, 2, (0, 0, -1), None, (0, 0.1)))
        out = simplify(ArticulatedObject(links, joints))
        assert len(out.links) == 2
        (j,) = out.joints
        assert j.kind == JointKind.SCREW
        np.testing.assert_allclose(j.axis, [0, 0, 1])
        # anti-parallel slide: limit negated into the revolute axis convention
        assert sorted(j.limit) == pytest.approx([-0.1, 0.0])
        assert j.name == "twist"

    def test_non_parallel_pair_not_fused(self):
        links = (box_link(0, "base", (0, 0, 0), (1, 1, 1)),
                 Link(1, "helper", Aabb((0.5, 0.5, 1), (0.5, 0.5, 1))),
                 box_link(2, "cap", (0.4, 0.4, 1), (0.6, 0.6, 1.2)))
        joints = (Joint(0, JointKind.REVOLUTE, 0, 1, (0, 0, 1), (0.5, 0.5, 1), (0, 1)),
                  Joint(1, JointKind.PRISMATIC, 1, 2, (1, 0, 0), None, (0, 0.1)))
        out = simplify(ArticulatedObject(links, joints))
        assert [j.kind for j in out.joints] == [JointKind.REVOLUTE, JointKind.PRISMATIC]


class TestNormalize:
    def test_cube_maps_to_centered_range(self):
        obj = ArticulatedObject((box_link(0, "a", (0, 0, 0), (2, 2, 2)),), ())
        out, t = normalize(obj)
        assert t.scale == pytest.approx(0.9)
        np.testing.assert_allclose(out.links[0].aabb.lo, [-0.9] * 3)
        np.testing.assert_allclose(out.links[0].aabb.hi, [0.9] * 3)
        np.testing.assert_allclose(t.invert(t.apply([[0.3, 1, 2]])), [[0.3, 1, 2]])

    def test_degenerate(self):
        obj = ArticulatedObject((Link(0, "p", Aabb((1, 1, 1), (1, 1, 1))),), ())
        with pytest.raises(DegenerateExtent):
            normalize(obj)


def _joint_params(obj):
    out = []
    for j in obj.joints:
        out.append((j.kind, tuple(j.axis), tuple(j.origin), j.limit))
    return out


class TestEmit:
    def test_round_trip_door(self, tmp_path):
        obj = hinged_door()
        save_asset(obj, tmp_path / "door.urdf")
        back, meta = load_asset(tmp_path / "door.urdf")
        assert meta["category"] == "door"
        for a, b in zip(obj.links, back.links):
            np.testing.assert_allclose(a.aabb.lo, b.aabb.lo, atol=1e-12)
            np.testing.assert_allclose(a.aabb.hi, b.aabb.hi, atol=1e-12)
        (ja,), (jb,) = obj.joints, back.joints
        assert ja.kind == jb.kind
        np.testing.assert_allclose(ja.origin, jb.origin, atol=1e-12)
        assert ja.limit == jb.limit

    def test_emit_without_writer_keeps_structure(self):
        xml = emit_urdf(hinged_door())
        m = parse_urdf(xml)
        assert [j.type for j in m.joints] == ["revolute"]


class TestPipeline:
    def test_fixture_ingest(self, tmp_path):
        obj, transform, warnings = ingest_urdf(write_fixture_urdf(tmp_path / "src"), "bottle")
        kinds = [j.kind for j in obj.joints]
        assert JointKind.FIXED not in kinds
        assert kinds == [JointKind.SCREW]
        assert obj.union_aabb().extent.max() == pytest.approx(1.8, abs=1e-12)
        assert warnings == ["ignored element <gazebo>"]

    def test_fixture_emit_reparse_drift(self, tmp_path):
        obj, _, _ = ingest_urdf(write_fixture_urdf(tmp_path / "src"), "bottle")
        save_asset(obj, tmp_path / "out" / "rig.urdf")
        back, _ = load_asset(tmp_path / "out" / "rig.urdf")
        assert len(back.links) == len(obj.links)
        for (ka, aa, oa, la), (kb, ab, ob, lb) in zip(_joint_params(obj), _joint_params(back)):
            assert ka == kb
            assert np.max(np.abs(np.subtract(aa, ab))) <= 1e-6
            assert np.max(np.abs(np.subtract(oa, ob))) <= 1e-6
            assert np.max(np.abs(np.subtract(la, lb))) <= 1e-6
        for a, b in zip(obj.links, back.links):
            assert np.max(np.abs(a.aabb.lo - b.aabb.lo)) <= 1e-6
            assert np.max(np.abs(a.aabb.hi - b.aabb.hi)) <= 1e-6
