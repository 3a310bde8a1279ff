import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from mmvr import quat
from mmvr.errors import BVHSyntaxError, FrameCountError, InputError, MissingJointError
from mmvr.mocap_io import (GaitParams, RawClip, Skeleton, default_skeleton, load_joint_map, parse_bvh, synth_gait,
                           write_bvh)
from mmvr.pose_db import build_pose_db

MINIMAL = """HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0 1 0
  }
}
MOTION
Frames: 2
Frame Time: 0.0333
0 1 0 0 0 0
0.5 1 0 10 20 30
"""


def test_minimal_document():
    clip = parse_bvh(MINIMAL)
    assert len(clip.skeleton) == 1 and clip.n_frames == 2
    assert clip.frame_time == pytest.approx(0.0333)
    assert np.allclose(clip.positions[1, 0], [0.5, 1, 0])


def test_declared_channel_order_is_honoured():
    clip = parse_bvh(MINIMAL)
    # channels Z, X, Y: intrinsic rotation R = Rz Rx Ry
    expected = Rotation.from_euler("ZXY", [10, 20, 30], degrees=True).as_quat()
    expected = np.r_[expected[3], expected[:3]]
    assert abs(np.dot(clip.rotations[1, 0], expected)) == pytest.approx(1.0, abs=1e-12)


def test_missing_value_names_the_row():
    bad = MINIMAL.replace("0.5 1 0 10 20 30", "0.5 1 0 10 20")
    with pytest.raises(FrameCountError, match="2"):
        parse_bvh(bad)


@pytest.mark.parametrize("text", ["", "HIERARCHY\nROOT Hips\n{\n", MINIMAL.replace("CHANNELS 6", "CHANNELS 7"),
                                  MINIMAL.replace("Frames: 2", "Frames: 3")])
def test_malformed_documents_raise_input_errors(text):
    with pytest.raises(InputError):
        parse_bvh(text)


def test_syntax_error_has_location():
    with pytest.raises(BVHSyntaxError) as info:
        parse_bvh(MINIMAL.replace("OFFSET 0 0 0", "OFFSET 0 zero 0"))
    assert info.value.line == 4


def test_identity_clip_writes_zero_row():
    sk = Skeleton(["Root"], [-1], [[0, 0, 0]], [("Xposition", "Yposition", "Zposition",
                                                  "Zrotation", "Yrotation", "Xrotation")])
    clip = RawClip(sk, 1 / 30, quat.identity((1, 1)), np.zeros((1, 1, 3)))
    rows = write_bvh(clip).strip().splitlines()
    assert [float(v) for v in rows[-1].split()] == [0.0] * 6


def test_non_unit_quaternion_rejected_by_writer():
    sk = default_skeleton()
    clip = RawClip(sk, 1 / 60, np.full((1, len(sk), 4), 0.9), np.zeros((1, len(sk), 3)))
    with pytest.raises(InputError):
        write_bvh(clip)


def test_round_trip_of_generated_clip(recipe_clip):
    back = parse_bvh(write_bvh(recipe_clip))
    assert back.skeleton.same_topology(recipe_clip.skeleton)
    assert back.allclose(recipe_clip, atol=1e-4)


@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_round_trip_random_clips(n_joints, n_frames, seed):
    rng = np.random.default_rng(seed)
    parents, path = [-1], [0]
    for i in range(1, n_joints):
        # depth-first order: the parent lies on the path from the root to the previous joint
        path = path[:int(rng.integers(1, len(path) + 1))]
        parents.append(path[-1])
        path.append(i)
    chans = [("Xposition", "Yposition", "Zposition", "Zrotation", "Yrotation", "Xrotation")] + \
        [("Zrotation", "Xrotation", "Yrotation")] * (n_joints - 1)
    sk = Skeleton([f"J{i}" for i in range(n_joints)], parents, rng.normal(size=(n_joints, 3)), chans)
    rot = Rotation.random(n_frames * n_joints, random_state=seed % 2**31).as_quat().reshape(n_frames, n_joints, 4)
    rot = np.concatenate([rot[..., 3:], rot[..., :3]], axis=-1)
    pos = np.broadcast_to(sk.offsets, (n_frames, n_joints, 3)).copy()
    pos[:, 0] = rng.normal(size=(n_frames, 3))
    clip = RawClip(sk, 1 / 60, rot, pos)
    assert parse_bvh(write_bvh(clip)).allclose(clip, atol=1e-4)


def test_writer_rejects_non_depth_first_order():
    sk = Skeleton(["A", "B", "C", "D"], [-1, 0, 0, 1], np.zeros((4, 3)), [("Zrotation", "Yrotation", "Xrotation")] * 4)
    clip = RawClip(sk, 1 / 60, quat.identity((1, 4)), np.zeros((1, 4, 3)))
    with pytest.raises(InputError, match="depth-first"):
        write_bvh(clip)


def test_joint_map_table():
    m = load_joint_map('hips = "pelvis"\nhead = "skull"\n')
    assert m["hips"] == "pelvis" and m["left_toe"] == "LeftToe"
    with pytest.raises(InputError):
        load_joint_map('tail = "Tail"\n')
    with pytest.raises(MissingJointError):
        default_skeleton().resolve(m)


# --- synthetic gait ---------------------------------------------------------

def test_synth_is_deterministic():
    p = GaitParams(speed=1.3, heading=((0, 0), (3, 1.0)), head_yaw=0.4, duration=5, seed=9)
    a, b = synth_gait(p), synth_gait(p)
    assert np.array_equal(a.rotations, b.rotations) and np.array_equal(a.positions, b.positions)
    c = synth_gait(p, seed=10)
    assert not np.array_equal(a.rotations, c.rotations)


def test_zero_speed_keeps_root_still():
    clip = synth_gait(GaitParams(speed=0.0, duration=4.0))
    gp, _ = clip.global_transforms()
    hips_xz = gp[:, 0][:, [0, 2]]
    assert np.allclose(hips_xz, hips_xz[0], atol=1e-12)


@pytest.mark.parametrize("heading", [0.0, 0.7, -2.0])
def test_constant_speed_displacement(heading):
    clip = synth_gait(GaitParams(speed=1.2, heading=heading, duration=10.0))
    gp, _ = clip.global_transforms()
    d = gp[-1, 0] - gp[0, 0]
    assert np.hypot(d[0], d[2]) == pytest.approx(12.0, abs=1e-3)
    assert np.arctan2(d[0], d[2]) == pytest.approx(heading, abs=1e-6)


def test_stance_toe_slower_than_swing(walk_clip):
    db = build_pose_db([walk_clip])
    j = walk_clip.skeleton.resolve()
    gp, _ = walk_clip.global_transforms()
    speed = np.linalg.norm(np.gradient(gp, walk_clip.frame_time, axis=0), axis=-1)
    for side in ("left_toe", "right_toe"):
        s = speed[:, j[side]]
        c = db.contacts[:, 0 if side.startswith("left") else 1]
        period = int(round(walk_clip.fps / 0.9))
        for a in range(0, walk_clip.n_frames - period, period):
            cyc_s, cyc_c = s[a:a + period], c[a:a + period]
            if cyc_c.any() and (~cyc_c).any():
                assert cyc_s[cyc_c].max() < cyc_s[~cyc_c].max()


def test_generated_clips_are_valid(recipe_clip):
    recipe_clip.validate(min_frames=2)
    assert np.all(np.diff(recipe_clip.times) > 0)
