from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oivae.data import DataError
from oivae.mocap import (
    Joint,
    MotionSequence,
    ParseError,
    SkeletonDef,
    channel_ranges,
    denormalize_angles,
    load_subject,
    normalize_angles,
    normalize_trials,
    parse_motion,
    parse_skeleton,
    write_motion,
    write_skeleton,
)

FIXTURES = Path(__file__).parent / "fixtures"
ASF = (FIXTURES / "mini.asf").read_text()
AMC = (FIXTURES / "mini_01.amc").read_text()


@pytest.fixture
def skel():
    return parse_skeleton(ASF)


class TestSkeleton:
    def test_bones(self, skel):
        assert skel.root_order == ("tx", "ty", "tz", "rx", "ry", "rz")
        assert skel.joint_names == ["lfemur", "ltibia", "lfoot"]
        assert skel.static_bones == ["lhipjoint"]
        assert skel.joint("lfoot").dofs == ("rx", "rz")
        assert skel.joint("lfemur").limits == ((-160.0, 20.0), (-70.0, 70.0), (-60.0, 70.0))
        assert skel.n_channels == 12

    def test_hierarchy_and_units(self, skel):
        assert skel.hierarchy[0] == ("root", ("lhipjoint",))
        assert skel.units["angle"] == "deg"

    def _break(self, old, new):
        assert old in ASF
        return ASF.replace(old, new, 1)

    @pytest.mark.parametrize(
        "old,new,msg",
        [
            ("dof rx\n", "dof qx\n", "unknown dof token 'qx'"),
            ("    limits (-10.0 170.0)\n", "", "declares 1 dof but 0 limits"),
            ("(-70.0 20.0)", "(-70.0 abc)", "non-numeric limit"),
            ("order TX TY TZ RX RY RZ", "order TX TY QZ", "unknown root channel"),
            ("name lfoot", "name lfemur", "duplicate bone names"),
            (":bonedata", ":bonedatax", "missing :bonedata"),
            ("dof rx rz", "dof", "between 1 and 3"),
        ],
    )
    def test_errors(self, old, new, msg):
        with pytest.raises(ParseError, match=msg):
            parse_skeleton(self._break(old, new))

    def test_error_carries_line(self):
        text = self._break("dof rx\n", "dof qx\n")
        with pytest.raises(ParseError) as info:
            parse_skeleton(text)
        assert info.value.line == text.splitlines().index("    dof qx") + 1
        assert str(info.value).startswith(f"line {info.value.line}:")


class TestMotion:
    def test_parse(self, skel):
        m = parse_motion(AMC, skel, trial_id="mini_01")
        assert m.frames.shape == (3, 12)
        assert m.frames[0, :3].tolist() == [9.37216, 17.8693, -17.3198]
        assert m.frames[1, 9] == -10.0 and m.frames[1, 10] == 90.0

    def test_empty(self, skel):
        assert parse_motion(":FULLY-SPECIFIED\n", skel).frames.shape == (0, 12)

    @pytest.mark.parametrize(
        "old,new,msg",
        [
            ("ltibia -10.0\n", "ltibia -10.0 3.0\n", r"frame 2: joint 'ltibia' has 2 values, expected 1"),
            ("ltibia -10.0\n", "", r"frame 2: missing joint line\(s\) \['ltibia'\]"),
            ("\n3\n", "\n2\n", "frame number 2 does not increase"),
            ("lfoot 90.0 -70.0", "lhand 90.0 -70.0", "unknown joint 'lhand'"),
            ("ltibia 80.0", "ltibia eighty", "non-numeric"),
            ("ltibia 80.0", "ltibia 80.0\nltibia 80.0", "listed twice"),
        ],
    )
    def test_errors(self, skel, old, new, msg):
        assert old in AMC
        with pytest.raises(ParseError, match=msg):
            parse_motion(AMC.replace(old, new, 1), skel)

    def test_values_before_frame(self, skel):
        with pytest.raises(ParseError, match="before the first frame"):
            parse_motion(":DEGREES\nroot 1 2 3 4 5 6\n", skel)


limit = st.floats(-180, 180, allow_nan=False).map(lambda v: round(v, 3))


@st.composite
def skeletons(draw):
    n = draw(st.integers(1, 4))
    joints = []
    for i in range(n):
        dofs = tuple(draw(st.lists(st.sampled_from(["rx", "ry", "rz"]), min_size=1, max_size=3, unique=True)))
        lims = []
        for _ in dofs:
            a, b = draw(limit), draw(limit)
            lims.append((min(a, b) - 1.0, max(a, b) + 1.0))
        joints.append(Joint(f"bone{i}", dofs, tuple(lims)))
    static = [f"fixed{i}" for i in range(draw(st.integers(0, 2)))]
    return SkeletonDef(("tx", "ty", "tz", "rx", "ry", "rz"), joints, static, [], {"angle": "deg"})


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(skel=skeletons(), n_frames=st.integers(0, 4), seed=st.integers(0, 1000))
    def test_write_then_parse(self, skel, n_frames, seed):
        back = parse_skeleton(write_skeleton(skel))
        assert back.joints == skel.joints
        assert back.static_bones == skel.static_bones
        frames = np.random.default_rng(seed).uniform(-200, 200, size=(n_frames, skel.n_channels))
        seq = parse_motion(write_motion(MotionSequence(frames), skel), back)
        assert seq.frames.tobytes() == frames.tobytes()

    def test_fixture_round_trip(self, skel):
        again = parse_skeleton(write_skeleton(skel))
        assert again.joints == skel.joints and again.hierarchy == skel.hierarchy


class TestNormalize:
    def test_limits_map_to_unit_interval(self, skel):
        m = parse_motion(AMC, skel)
        ds, warnings = normalize_angles(m, skel)
        assert warnings == []
        assert ds.groups.names == ("root", "lfemur", "ltibia", "lfoot")
        assert ds.groups.widths == (3, 3, 1, 2)
        # frame 2 sits on the upper limits of lfemur, the lower of ltibia
        assert ds.data[1, 3:6].tolist() == [1.0, 1.0, 1.0]
        assert ds.data[1, 6] == 0.0
        assert ds.data[2, 3:6].tolist() == [0.0, 0.0, 0.0]
        assert ds.data[0, 7] == 0.0 and ds.data[2, 7] == 0.5
        # root rotation uses the observed range
        assert ds.data[:, 0].tolist() == [0.0, pytest.approx(0.51677 / 1.01677), 1.0]

    @pytest.mark.parametrize("mode,width", [("rotation", 9), ("full", 12), ("exclude", 6)])
    def test_root_modes(self, skel, mode, width):
        ds, _ = normalize_angles(parse_motion(AMC, skel), skel, root_mode=mode)
        assert ds.data.shape == (3, width)
        assert ("root" in ds.groups.names) == (mode != "exclude")

    def test_out_of_range_kept_and_reported(self, skel):
        m = parse_motion(AMC.replace("ltibia 80.0", "ltibia 350.0"), skel)
        ds, warnings = normalize_angles(m, skel)
        assert ds.data[0, 6] == pytest.approx(2.0)
        assert warnings == ["ltibia: 1 value(s) outside declared range"]

    def test_denormalize_inverts(self, skel):
        m = parse_motion(AMC, skel)
        ds, _ = normalize_angles(m, skel, root_mode="full")
        ranges = channel_ranges(skel, m.frames, "full")
        np.testing.assert_allclose(denormalize_angles(ds.data, ranges), m.frames, atol=1e-12)

    def test_degenerate_limit(self, skel):
        text = ASF.replace("(-10.0 170.0)", "(5.0 5.0)")
        s = parse_skeleton(text)
        with pytest.raises(DataError, match="degenerate"):
            normalize_angles(parse_motion(AMC, s), s)

    def test_unknown_root_mode(self, skel):
        with pytest.raises(ValueError):
            channel_ranges(skel, np.zeros((1, 12)), "sideways")


class TestSubject:
    def test_load_and_normalize_with_train_ranges(self, tmp_path, skel):
        (tmp_path / "07.asf").write_text(ASF)
        (tmp_path / "07_01.amc").write_text(AMC)
        (tmp_path / "07_02.amc").write_text(AMC.replace("-1.0 -6.5 -2.5", "-0.5 -6.0 -2.0"))
        s, seqs = load_subject(tmp_path, "07", [1, 2])
        assert sorted(seqs) == [1, 2] and seqs[2].trial_id == "07_02"
        out, warnings = normalize_trials(s, seqs, train_ids=[1])
        assert out[1].data[:, 0].max() == 1.0
        assert out[2].data[2, 0] > 1.0
        assert any(w.startswith("trial 2: root") for w in warnings)

    def test_missing_file(self, tmp_path):
        (tmp_path / "07.asf").write_text(ASF)
        with pytest.raises(FileNotFoundError):
            load_subject(tmp_path, "07", [3])
