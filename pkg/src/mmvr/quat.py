"""Quaternion helpers on numpy arrays.

Quaternions are stored as (..., 4) arrays in (w, x, y, z) order. World up is
+Y and the character forward axis is +Z.
"""
import numpy as np

UP = np.array([0.0, 1.0, 0.0])
FORWARD = np.array([0.0, 0.0, 1.0])


def identity(shape=()):
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def normalize(q, eps=1e-12):
    return q / np.maximum(np.linalg.norm(q, axis=-1, keepdims=True), eps)


def inv(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def mul(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def _cross(a, b):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def rotate(q, v):
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv = q[..., 1:]
    t = 2.0 * _cross(qv, v)
    return v + q[..., :1] * t + _cross(qv, t)


def inv_rotate(q, v):
    return rotate(inv(q), v)


def abs(q):
    """Flip quaternions onto the w >= 0 hemisphere."""
    return np.where(q[..., :1] < 0.0, -q, q)


def from_axis_angle(v, eps=1e-12):
    """Exponential map from a rotation vector (angle encoded as length)."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x/2)/x ~ 1/2 - x^2/48 near zero
    scale = np.where(angle > eps, np.sin(half) / np.maximum(angle, eps), 0.5 - angle ** 2 / 48.0)
    return np.concatenate([np.cos(half), v * scale], axis=-1)


def to_axis_angle(q, eps=1e-12):
    """Logarithm map to a rotation vector on the shortest arc."""
    q = abs(np.asarray(q, dtype=float))
    s = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    scale = np.where(s > eps, angle / np.maximum(s, eps), 2.0 / np.maximum(q[..., :1], eps))
    return q[..., 1:] * scale


def from_yaw(yaw):
    yaw = np.asarray(yaw, dtype=float)
    z = np.zeros_like(yaw)
    return np.stack([np.cos(0.5 * yaw), z, np.sin(0.5 * yaw), z], axis=-1)


def yaw_direction(yaw):
    """Planar forward direction (x, z) of a yaw angle."""
    yaw = np.asarray(yaw, dtype=float)
    return np.stack([np.sin(yaw), np.cos(yaw)], axis=-1)


def yaw_of(q):
    """Yaw of the projected forward axis; nan-free only for non-vertical forwards."""
    f = rotate(q, np.broadcast_to(FORWARD, np.shape(q)[:-1] + (3,)))
    return np.arctan2(f[..., 0], f[..., 2])


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def to_matrix(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return m.reshape(np.shape(q)[:-1] + (3, 3))


def from_matrix(m):
    m = np.asarray(m, dtype=float)
    shape = m.shape[:-2]
    r = m.reshape(-1, 3, 3)
    m00, m11, m22 = r[:, 0, 0], r[:, 1, 1], r[:, 2, 2]
    tr = m00 + m11 + m22
    cands = np.stack([
        np.stack([1.0 + tr, r[:, 2, 1] - r[:, 1, 2], r[:, 0, 2] - r[:, 2, 0], r[:, 1, 0] - r[:, 0, 1]], -1),
        np.stack([r[:, 2, 1] - r[:, 1, 2], 1.0 + m00 - m11 - m22, r[:, 0, 1] + r[:, 1, 0], r[:, 0, 2] + r[:, 2, 0]], -1),
        np.stack([r[:, 0, 2] - r[:, 2, 0], r[:, 0, 1] + r[:, 1, 0], 1.0 + m11 - m00 - m22, r[:, 1, 2] + r[:, 2, 1]], -1),
        np.stack([r[:, 1, 0] - r[:, 0, 1], r[:, 0, 2] + r[:, 2, 0], r[:, 1, 2] + r[:, 2, 1], 1.0 + m22 - m00 - m11], -1),
    ], axis=1)
    # pick the numerically largest pivot per matrix
    pick = np.argmax(np.stack([tr, m00, m11, m22], -1), axis=-1)
    q = cands[np.arange(r.shape[0]), pick]
    return abs(normalize(q)).reshape(shape + (4,))


def between(u, v, eps=1e-12):
    """Shortest-arc rotation taking direction u onto direction v."""
    u = u / np.maximum(np.linalg.norm(u, axis=-1, keepdims=True), eps)
    v = v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), eps)
    c = np.cross(u, v)
    d = np.sum(u * v, axis=-1, keepdims=True)
    q = np.concatenate([1.0 + d, c], axis=-1)
    if np.any(q[..., 0] < eps):
        # antiparallel: rotate half a turn about any perpendicular axis
        alt = np.cross(u, np.array([1.0, 0.0, 0.0]))
        alt = np.where(np.linalg.norm(alt, axis=-1, keepdims=True) < 1e-6, np.cross(u, np.array([0.0, 1.0, 0.0])), alt)
        alt = np.concatenate([np.zeros_like(d), alt], axis=-1)
        q = np.where(q[..., :1] < eps, alt, q)
    return normalize(q)


def slerp(a, b, t, eps=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)[..., None]
    d = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(d < 0.0, -b, b)
    d = np.abs(d)
    theta = np.arccos(np.clip(d, -1.0, 1.0))
    st = np.sin(theta)
    small = st < eps
    wa = np.where(small, 1.0 - t, np.sin((1.0 - t) * theta) / np.where(small, 1.0, st))
    wb = np.where(small, t, np.sin(t * theta) / np.where(small, 1.0, st))
    return normalize(wa * a + wb * b)


def angular_velocity(q, times):
    """Finite-difference angular velocity (rotation vectors per second) along axis 0.

    Central differences inside, one-sided at the ends, expressed in the frame
    the quaternions are given in (left-multiplied deltas).
    """
    q = np.asarray(q, dtype=float)
    times = np.asarray(times, dtype=float)
    n = q.shape[0]
    out = np.zeros(q.shape[:-1] + (3,))
    if n < 2:
        return out
    tshape = (-1,) + (1,) * (q.ndim - 1)
    if n > 2:
        dt = (times[2:] - times[:-2]).reshape(tshape)
        out[1:-1] = to_axis_angle(mul(q[2:], inv(q[:-2]))) / dt
    out[0] = to_axis_angle(mul(q[1], inv(q[0]))) / (times[1] - times[0])
    out[-1] = to_axis_angle(mul(q[-1], inv(q[-2]))) / (times[-1] - times[-2])
    return out


def linear_velocity(x, times):
    """Finite-difference velocity along axis 0, same stencil as angular_velocity."""
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float)
    n = x.shape[0]
    out = np.zeros_like(x)
    if n < 2:
        return out
    tshape = (-1,) + (1,) * (x.ndim - 1)
    if n > 2:
        out[1:-1] = (x[2:] - x[:-2]) / (times[2:] - times[:-2]).reshape(tshape)
    out[0] = (x[1] - x[0]) / (times[1] - times[0])
    out[-1] = (x[-1] - x[-2]) / (times[-1] - times[-2])
    return out
