import numpy as np
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from mmvr import quat
from mmvr.rotation6d import rot_from_6d, rot_to_6d, yaw_of_6d, yaw_to_6d
from mmvr.errors import InputError

import pytest


def _scipy(q):
    return Rotation.from_quat(np.concatenate([q[..., 1:], q[..., :1]], axis=-1))


def _wxyz(r):
    x = r.as_quat()
    return np.concatenate([x[..., 3:], x[..., :3]], axis=-1)


def test_mul_rotate_and_matrix_agree_with_scipy(rng):
    a = _wxyz(Rotation.random(200, random_state=1))
    b = _wxyz(Rotation.random(200, random_state=2))
    v = rng.normal(size=(200, 3))
    ab = quat.mul(a, b)
    assert np.allclose(_scipy(ab).as_matrix(), (_scipy(a) * _scipy(b)).as_matrix(), atol=1e-12)
    assert np.allclose(quat.rotate(a, v), _scipy(a).apply(v), atol=1e-12)
    assert np.allclose(quat.inv_rotate(a, v), _scipy(a).inv().apply(v), atol=1e-12)
    assert np.allclose(quat.to_matrix(a), _scipy(a).as_matrix(), atol=1e-12)
    back = quat.from_matrix(quat.to_matrix(a))
    assert np.allclose(np.abs(np.sum(back * a, axis=-1)), 1.0, atol=1e-12)


def test_axis_angle_round_trip(rng):
    v = rng.normal(size=(100, 3))
    v *= (np.pi * 0.99 / np.linalg.norm(v, axis=-1))[:, None] * rng.uniform(0, 1, (100, 1))
    assert np.allclose(quat.to_axis_angle(quat.from_axis_angle(v)), v, atol=1e-10)
    assert np.allclose(_scipy(quat.from_axis_angle(v)).as_rotvec(), v, atol=1e-10)


def test_yaw_conventions():
    # yaw 90 degrees turns forward (+Z) toward +X
    assert np.allclose(quat.rotate(quat.from_yaw(np.pi / 2), [0, 0, 1]), [1, 0, 0], atol=1e-15)
    assert np.allclose(quat.yaw_direction(0.3), [np.sin(0.3), np.cos(0.3)])
    assert quat.yaw_of(quat.from_yaw(2.0)) == pytest.approx(2.0)


@given(st.floats(-np.pi + 1e-6, np.pi - 1e-6), st.floats(-1.2, 1.2))
def test_yaw_of_ignores_pitch(yaw, pitch):
    q = quat.mul(quat.from_yaw(yaw), quat.from_axis_angle([pitch, 0.0, 0.0]))
    assert quat.yaw_of(q) == pytest.approx(yaw, abs=1e-9)


def test_slerp_midpoint():
    a, b = quat.from_yaw(0.0), quat.from_yaw(np.pi / 2)
    assert quat.yaw_of(quat.slerp(a, b, 0.5)) == pytest.approx(np.pi / 4)


def test_angular_velocity_of_constant_spin():
    t = np.arange(60) / 60.0
    q = quat.from_yaw(1.0 * t)
    w = quat.angular_velocity(q, t)
    assert np.allclose(w, [0, 1, 0], atol=1e-9)


# --- 6D rotation encoding -------------------------------------------------

def test_6d_identity_and_gram_schmidt():
    assert np.allclose(rot_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
    assert np.allclose(rot_from_6d([1, 0, 0, 1, 1, 0]), np.eye(3))


def test_6d_round_trip_random_rotations():
    R = Rotation.random(1000, random_state=7).as_matrix()
    back = rot_from_6d(rot_to_6d(R))
    assert np.max(np.abs(back - R)) < 1e-6
    assert np.allclose(np.linalg.det(back), 1.0, atol=1e-6)
    assert np.allclose(back @ np.swapaxes(back, -1, -2), np.eye(3), atol=1e-6)


def test_6d_degenerate_inputs_rejected():
    with pytest.raises(InputError):
        rot_from_6d(np.zeros(6))
    with pytest.raises(InputError):
        rot_from_6d([1, 0, 0, 2, 0, 0])


@given(st.floats(-np.pi, np.pi - 1e-9))
def test_yaw_6d_round_trip(yaw):
    assert quat.wrap_angle(yaw_of_6d(yaw_to_6d(yaw)) - yaw) == pytest.approx(0.0, abs=1e-12)
    R = quat.to_matrix(quat.from_yaw(yaw))
    assert np.allclose(rot_to_6d(R), yaw_to_6d(yaw), atol=1e-12)
