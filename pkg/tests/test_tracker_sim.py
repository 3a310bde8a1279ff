import numpy as np
import pytest

from mmvr import quat
from mmvr.errors import DegenerateOrientationError, InputError
from mmvr.mocap_io import RawClip, default_skeleton
from mmvr.rotation6d import yaw_to_6d
from mmvr.tracker_sim import (IDENTITY_OFFSETS, NET_INPUT_SIZE, TrackerTrace, hmd_yaw, hmd_yaws, read_ground_truth,
                              simulate_trackers, to_local_frame, trace_from_jsonl, trace_to_jsonl,
                              write_ground_truth, yaw_rotate_6d)


def _spin_clip(rate=1.0, n=120):
    sk = default_skeleton()
    t = np.arange(n) / 60.0
    pos = np.broadcast_to(sk.offsets, (n, len(sk), 3)).copy()
    pos[:, 0] = [0.0, 0.92, 0.0]
    rot = quat.identity((n, len(sk)))
    rot[:, 0] = quat.from_yaw(rate * t)
    return RawClip(sk, 1 / 60, rot, pos)


def test_input_size():
    assert NET_INPUT_SIZE == 42


def test_identity_offsets_give_joint_transforms(recipe_clip):
    tr = simulate_trackers(recipe_clip, IDENTITY_OFFSETS)
    gp, gr = recipe_clip.global_transforms()
    idx = [recipe_clip.skeleton.index(n) for n in ("Head", "LeftHand", "RightHand")]
    assert np.array_equal(tr.positions, gp[:, idx])
    assert np.allclose(tr.rotations, gr[:, idx], atol=1e-15)


def test_static_clip_has_no_motion():
    tr = simulate_trackers(_spin_clip(rate=0.0))
    assert np.all(tr.velocities == 0) and np.all(tr.angular_velocities == 0)


def test_spin_angular_velocity():
    tr = simulate_trackers(_spin_clip(rate=1.0))
    assert np.allclose(tr.angular_velocities[1:-1], [0, 1, 0], atol=1e-2)


def test_forward_axis_convention():
    n = 10
    t = np.arange(n) / 60
    pos = np.zeros((n, 3, 3))
    pos[:, :, 2] = t[:, None]  # 1 m/s along +Z
    pos[:, 0, 1] = 1.7
    tr = TrackerTrace(t, pos, quat.identity((n, 3)))
    x = to_local_frame(tr[5], yaw_to_6d(0.0))
    assert np.allclose(x.xv[0:3], [0, 0, 1])
    assert x.vector.shape == (42,)


def test_yawed_rig_encodes_identically(recipe_clip):
    tr = simulate_trackers(recipe_clip)
    rot = tr.transformed(np.radians(137.0), (3.0, 0.0, -2.0))
    for i in (0, 50, 333):
        prev = yaw_to_6d(0.4)
        a = to_local_frame(tr[i], prev)
        b = to_local_frame(rot[i], yaw_rotate_6d(prev, np.radians(137.0)))
        assert np.max(np.abs(a.vector - b.vector)) <= 1e-6


def test_random_rigid_transforms_leave_inputs_unchanged(recipe_clip):
    rng = np.random.default_rng(3)
    tr = simulate_trackers(recipe_clip).slice(100, 130)
    prev = yaw_to_6d(rng.uniform(-np.pi, np.pi, len(tr)))
    base = np.array([to_local_frame(tr[i], prev[i]).vector for i in range(len(tr))])
    worst = 0.0
    for _ in range(1000):
        yaw = rng.uniform(-np.pi, np.pi)
        moved = tr.transformed(yaw, rng.uniform(-50, 50, 3) * [1, 0.1, 1])
        i = rng.integers(len(tr))
        x = to_local_frame(moved[i], yaw_rotate_6d(prev[i], yaw)).vector
        worst = max(worst, np.max(np.abs(x - base[i])))
    assert worst <= 1e-5


def test_simulation_is_deterministic(recipe_clip):
    a, b = simulate_trackers(recipe_clip), simulate_trackers(recipe_clip)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.rotations, b.rotations)


def test_degenerate_gaze():
    up = quat.from_axis_angle([-np.pi / 2, 0, 0])  # forward tilted to +Y
    with pytest.raises(DegenerateOrientationError):
        hmd_yaw(up)
    assert hmd_yaw(up, fallback=0.3) == 0.3
    n = 4
    rot = quat.identity((n, 3))
    rot[:, 0] = quat.from_yaw(0.2)
    rot[2, 0] = up
    tr = TrackerTrace(np.arange(n) / 60, np.zeros((n, 3, 3)), rot)
    assert np.allclose(hmd_yaws(tr), 0.2)


def test_trace_validation():
    with pytest.raises(InputError):
        TrackerTrace([0.0, 0.0], np.zeros((2, 3, 3)), quat.identity((2, 3)))
    with pytest.raises(InputError):
        TrackerTrace([0.0], np.zeros((1, 3, 3)), quat.identity((1, 3)))


def test_jsonl_round_trip(recipe_clip):
    tr = simulate_trackers(recipe_clip).slice(0, 50)
    tr = TrackerTrace(tr.times, tr.positions, tr.rotations, calibration_height=1.61)
    back = trace_from_jsonl(trace_to_jsonl(tr))
    assert np.array_equal(back.positions, tr.positions) and np.array_equal(back.rotations, tr.rotations)
    assert back.calibration_height == 1.61
    with pytest.raises(InputError, match="line 2"):
        trace_from_jsonl(trace_to_jsonl(tr).replace('"hmd"', '"hdm"', 1))


def test_ground_truth_round_trip(tmp_path):
    t = np.arange(5) / 60
    y = np.array([0.1, -2.0, 3.0, 1e-9, 0.5])
    p = tmp_path / "gt.csv"
    p.write_text(write_ground_truth(y, t))
    t2, y2 = read_ground_truth(str(p))
    assert np.array_equal(t, t2) and np.array_equal(y, y2)
    p.write_text("t,yaw\n0,abc\n")
    with pytest.raises(InputError):
        read_ground_truth(str(p))
