import json

import numpy as np
import pytest

from artkit.codec import build_axis_codebook, encode_object
from artkit.corpus import (
    AugmentParams,
    CorpusEntry,
    FilterPolicy,
    REFERENCE_TEMPLATE,
    apply_augmentation,
    assign_tasks,
    dataset_stats,
    emit_sample,
    filter_object,
    load_policy,
    object_rng,
    sample_augmentation,
    y_rotation,
)
from artkit.kinematics import Aabb, ArticulatedObject, Joint, JointKind, Link

from scenes import door_and_drawer, hinged_door, random_object


class TestAugmentation:
    def test_quarter_turns_exact(self):
        np.testing.assert_array_equal(y_rotation(90) @ [0, 0, 1], [1, 0, 0])
        np.testing.assert_array_equal(y_rotation(180) @ [1, 2, 3], [-1, 2, -3])
        np.testing.assert_array_equal(y_rotation(270) @ [1, 0, 0], [0, 0, 1])

    def test_half_turn_maps_boxes(self):
        obj = ArticulatedObject((Link(0, "a", Aabb((0.1, 0.2, 0.3), (0.4, 0.5, 0.6))),), ())
        out = apply_augmentation(obj, AugmentParams(True, 1.0, 180))
        assert out.links[0].aabb == Aabb((-0.4, 0.2, -0.6), (-0.1, 0.5, -0.3))

    def test_joint_follows_geometry(self):
        obj = hinged_door()
        j = Joint(0, JointKind.REVOLUTE, 0, 1, (0, 0, 1), (0.0, 0.0, 0.5), (0, 1))
        out = apply_augmentation(obj.replace(joints=(j,)), AugmentParams(True, 0.9, 90))
        np.testing.assert_allclose(out.joints[0].axis, [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(out.joints[0].origin, [0.45, 0, 0], atol=1e-12)
        assert out.joints[0].limit == (0.0, 1.0)

    def test_not_applied_is_identity(self):
        obj = hinged_door()
        assert apply_augmentation(obj, AugmentParams(False)) is obj

    def test_frequency_and_ranges(self):
        rng = np.random.default_rng(0)
        params = [sample_augmentation(rng) for _ in range(10000)]
        rate = sum(p.applied for p in params) / len(params)
        assert abs(rate - 0.75) <= 0.03
        applied = [p for p in params if p.applied]
        assert all(0.8 <= p.scale <= 1.05 for p in applied)
        assert {p.rotation_deg for p in applied} == {90, 180, 270}

    def test_object_rng_independent_of_order(self):
        a = object_rng(7, "obj-1").random()
        object_rng(7, "obj-0").random()
        assert object_rng(7, "obj-1").random() == a
        assert object_rng(8, "obj-1").random() != a


class TestFilter:
    def test_too_many_joints(self):
        rng = np.random.default_rng(2)
        while True:
            obj = random_object(rng, max_joints=30)
            if len(obj.joints) > 20:
                break
        d = filter_object(obj, FilterPolicy(min_part_volume_fraction=1e-12))
        assert not d.keep
        assert "TooManyJoints" in d.reasons

    def test_excluded_category(self):
        d = filter_object(hinged_door().replace(category="Keyboard"))
        assert not d.keep and d.reasons == ("ExcludedCategory",)

    def test_small_part_merged(self):
        obj = door_and_drawer()
        tiny = Link(3, "screw", Aabb((0.5, -0.05, 0.5), (0.501, -0.049, 0.501)))
        j = Joint(2, JointKind.FIXED, 1, 3)
        d = filter_object(obj.replace(links=obj.links + (tiny,), joints=obj.joints + (j,)))
        assert d.keep
        assert d.reasons == ("MergedSmallPart:screw",)
        assert len(d.object.links) == 3

    def test_policy_text(self):
        p = load_policy("max_joints = 5\nexcluded_categories = lamp, Fan\n")
        assert p.max_joints == 5
        assert p.excluded_categories == frozenset({"lamp", "fan"})
        with pytest.raises(ValueError):
            load_policy("nonsense = 1")


class TestSamples:
    def test_task_shapes(self):
        obj = door_and_drawer()
        script = encode_object(obj, build_axis_codebook())
        layout, art = script.render_layout(), script.render_articulation()
        s1, s2, s3 = (emit_sample(obj, t, point_cloud="pcd/x.ply") for t in (1, 2, 3))
        assert s1.gpt == layout
        assert s2.gpt == art and s2.human.endswith(layout)
        assert s3.gpt == layout + "\n" + art
        assert s3.human.startswith("<point_cloud>\nDetect part boxes and joints.\n")
        assert REFERENCE_TEMPLATE in s1.human

    def test_sharegpt_record(self):
        rec = json.loads(emit_sample(hinged_door(), 1, point_cloud="pcd/a.ply").to_json())
        assert [c["from"] for c in rec["conversations"]] == ["human", "gpt"]
        assert rec["point_clouds"] == ["pcd/a.ply"]

    @pytest.mark.parametrize("n", [0, 1, 7, 10, 33, 101])
    def test_task_ratio(self, n):
        tasks = assign_tasks(n, seed=3)
        for t, share in zip((1, 2, 3), (0.3, 0.2, 0.5)):
            assert abs(tasks.count(t) - share * n) <= 1
        assert assign_tasks(n, seed=3) == tasks


class TestStats:
    def test_histogram_overflow(self):
        entries = []
        for i, n_joints in enumerate([0, 2, 25]):
            links = tuple(Link(k, f"l{k}", Aabb((0, 0, 0), (1, 1, 1))) for k in range(n_joints + 1))
            joints = tuple(Joint(k, JointKind.PRISMATIC, 0, k + 1, (1, 0, 0), None, (0, 1))
                           for k in range(n_joints))
            entries.append(CorpusEntry(str(i), ArticulatedObject(links, joints, "x"), "s"))
        stats = dataset_stats(entries)
        assert stats["link_histogram"]["1"] == 1
        assert stats["link_histogram"]["3"] == 1
        assert stats["link_histogram"][">21"] == 1
        assert stats["max_links"] == 26
        assert stats["categories"] == {"x": 3}
