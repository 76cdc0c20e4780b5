import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artkit.codec import (
    ArticulationScript,
    QuantBox,
    QuantJoint,
    build_axis_codebook,
    dequantize_box,
    dequantize_origin,
    encode_axis,
    encode_object,
    parse_script,
    parse_script_text,
    quantize_box,
    quantize_origin,
    quantize_rot_limit,
    quantize_trans_limit,
)
from artkit.errors import (
    BinOutOfRange,
    GraphInvalid,
    IndexOutOfRange,
    NonUnitVector,
    ScriptSyntaxError,
    TooManyParts,
    UnencodableJoint,
)
from artkit.kinematics import Aabb, ArticulatedObject, Joint, JointKind, Link, build_graph

from oracles import ceil_bin, floor_bin
from scenes import hinged_door, random_object

REFERENCE = (Path(__file__).parent / "data" / "reference_script.txt").read_text()


class TestScalarQuantizers:
    def test_rotation_limit_bins(self):
        assert quantize_rot_limit(0.0) == 24
        assert quantize_rot_limit(math.pi / 2) == 30
        assert quantize_rot_limit(-math.pi / 2) == 18

    def test_translation_limit_bins(self):
        assert quantize_trans_limit(0.0) == 32
        assert quantize_trans_limit(0.3717) == 38

    def test_origin_bins(self):
        assert quantize_origin((0.24, -1.0, 1.0)) == (79, 0, 128)
        assert dequantize_origin((64, 0, 128)) == (0.0, -1.0, 1.0)

    def test_out_of_range_clamps_with_warning(self, caplog):
        assert quantize_trans_limit(5.0) == 64
        assert "clamped" in caplog.text

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-1, 1, allow_nan=False))
    def test_box_bins_match_exact_oracle(self, c):
        q = quantize_box(Aabb((c, c, c), (c, c, c)))
        assert q.min_bins[0] == floor_bin(c)
        assert q.max_bins[0] == ceil_bin(c)

    def test_bin_edges_are_exact(self):
        for k in range(129):
            c = k / 64 - 1
            q = quantize_box(Aabb((c,) * 3, (c,) * 3))
            assert q.min_bins == (k,) * 3 == q.max_bins

    def test_dequantized_box_contains_original(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            a, b = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
            box = Aabb(np.minimum(a, b), np.maximum(a, b))
            back = dequantize_box(quantize_box(box))
            assert back.contains_box(box)
            assert np.all(box.lo - back.lo <= 1 / 64) and np.all(back.hi - box.hi <= 1 / 64)


class TestCodebook:
    def test_size_and_signed_axes(self):
        cb = build_axis_codebook()
        assert len(cb) == 128
        expected = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
        for i, v in enumerate(expected):
            assert cb[i] == v

    def test_unit_and_self_encoding(self):
        cb = build_axis_codebook()
        e = np.array(cb.entries)
        np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-12)
        assert [cb.encode(v) for v in cb.entries] == list(range(128))

    def test_distinct_entries(self):
        e = np.array(build_axis_codebook().entries)
        dots = e @ e.T - 2 * np.eye(len(e))
        # minimum pairwise separation of the construction
        assert math.degrees(math.acos(dots.max())) == pytest.approx(12.43, abs=0.01)

    def test_non_unit_rejected(self):
        with pytest.raises(NonUnitVector):
            encode_axis((1, 1, 0), build_axis_codebook())

    def test_csv_dump(self):
        lines = build_axis_codebook().to_csv().splitlines()
        assert lines[0] == "index,x,y,z,source"
        assert lines[1] == "0,1.0,0.0,0.0,circle-xy"
        assert len(lines) == 129


class TestScriptValues:
    def test_box_range(self):
        with pytest.raises(BinOutOfRange):
            QuantBox((0, 0, 0), (129, 1, 1))

    def test_box_order(self):
        with pytest.raises(BinOutOfRange):
            QuantBox((5, 0, 0), (4, 1, 1))

    def test_joint_index_checked(self):
        with pytest.raises(IndexOutOfRange):
            ArticulationScript((QuantBox((0,) * 3, (1,) * 3),),
                               (QuantJoint(JointKind.PRISMATIC, 0, 3, 4, None, (32, 33)),))

    def test_fixed_joint_unencodable(self):
        obj = ArticulatedObject((Link(0, "a", Aabb((0,) * 3, (0.1,) * 3)),
                                 Link(1, "b", Aabb((0,) * 3, (0.2,) * 3))),
                                (Joint(0, JointKind.FIXED, 0, 1),))
        with pytest.raises(UnencodableJoint):
            encode_object(obj)

    def test_too_many_parts(self):
        links = tuple(Link(i, f"l{i}", Aabb((0,) * 3, (0.1,) * 3)) for i in range(129))
        with pytest.raises(TooManyParts):
            encode_object(ArticulatedObject(links, ()))


class TestReferenceScript:
    def test_parse_token_form(self):
        script = parse_script_text(REFERENCE)
        assert len(script.boxes) == 7
        assert script.boxes[0] == QuantBox((6, 30, 44), (122, 98, 81))
        assert script.boxes[6] == QuantBox((88, 41, 79), (120, 83, 84))
        kinds = [j.kind for j in script.joints]
        assert kinds == [JointKind.PRISMATIC] * 2 + [JointKind.REVOLUTE] * 4
        assert [j.limit_bins for j in script.joints] == [
            (32, 38), (32, 38), (18, 24), (18, 24), (24, 30), (24, 30)]
        assert [j.origin_bins for j in script.joints[2:]] == [
            (8, 62, 79), (42, 62, 79), (84, 62, 79), (119, 62, 79)]

    def test_decode_is_star_rooted_at_zero(self):
        obj = parse_script(REFERENCE)
        assert len(obj.links) == 7
        g = build_graph(obj)
        assert g.root == 0
        assert sorted(g.children(0)) == [1, 2, 3, 4, 5, 6]
        assert obj.joints[0].axis_dir == (0.0, 0.0, 1.0)
        assert obj.joints[2].axis_dir == (0.0, 1.0, 0.0)
        assert obj.joints[4].limit == pytest.approx((0.0, math.pi / 2))
        assert obj.joints[0].limit == pytest.approx((0.0, 0.375))

    def test_token_and_human_forms_agree(self):
        script = parse_script_text(REFERENCE)
        assert parse_script_text(script.render("human")) == script
        assert parse_script_text(script.render("token")) == script


class TestParseErrors:
    def test_bin_out_of_range(self):
        with pytest.raises(BinOutOfRange):
            parse_script_text(REFERENCE.replace("<P_122>", "<P_200>"))

    def test_syntax_error_position(self):
        text = REFERENCE.replace("bbox_1 = BBox(", "bbox_1 = Box(")
        with pytest.raises(ScriptSyntaxError) as exc:
            parse_script_text(text)
        assert (exc.value.line, exc.value.column) == (6, 14)
        assert exc.value.expected

    def test_truncated(self):
        with pytest.raises(ScriptSyntaxError):
            parse_script_text(REFERENCE[: len(REFERENCE) // 2])

    def test_box_index_mismatch(self):
        with pytest.raises(IndexOutOfRange):
            parse_script_text(REFERENCE.replace("bbox_3 =", "bbox_9 ="))

    def test_joint_to_missing_box(self):
        with pytest.raises(IndexOutOfRange):
            parse_script_text(REFERENCE.replace("0, 6, <D_2>", "0, 9, <D_2>"))

    def test_graph_invalid(self):
        with pytest.raises(GraphInvalid):
            parse_script(REFERENCE.replace("0, 6, <D_2>", "0, 5, <D_2>"))

    def test_alternate_delimiters(self):
        text = (REFERENCE.replace("layout_start", "layout_s").replace("layout_end", "layout_e")
                .replace("art_start", "art_s").replace("art_end", "art_e"))
        assert parse_script_text(text) == parse_script_text(REFERENCE)


class TestRoundTrip:
    def test_random_objects(self):
        rng = np.random.default_rng(3)
        cb = build_axis_codebook()
        for _ in range(100):
            script = encode_object(random_object(rng), cb)
            text = script.render()
            assert encode_object(parse_script(text, cb), cb) == script
            assert parse_script_text(text).render() == text

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            obj = random_object(rng)
            perm = rng.permutation(len(obj.links))
            links = tuple(Link(int(perm[l.id]), l.name, l.aabb) for l in obj.links)
            joints = tuple(Joint(j.id, j.kind, int(perm[j.parent]), int(perm[j.child]),
                                 j.axis_dir, j.axis_origin, j.limit) for j in reversed(obj.joints))
            shuffled = ArticulatedObject(tuple(sorted(links, key=lambda l: l.id)), joints)
            assert encode_object(shuffled).render() == encode_object(obj).render()

    def test_door_script(self):
        text = encode_object(hinged_door()).render("human")
        assert "RevoluteJoint(" in text
        assert "[24, 33]" in text  # 0 and 135 degrees, 15 degrees per bin
