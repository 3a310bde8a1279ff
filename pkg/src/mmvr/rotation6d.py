"""Continuous 6D rotation encoding: the first two matrix columns, stacked column-major."""
import numpy as np

from .errors import InputError

_EPS = 1e-12


def rot_to_6d(R):
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot_from_6d(v):
    """Gram-Schmidt back to a proper rotation matrix (columns a1, a2, a1 x a2)."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 6:
        raise InputError("6D rotation must have 6 components")
    a1, a2 = v[..., 0:3], v[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < _EPS) or not np.all(np.isfinite(v)):
        raise InputError("6D rotation has a zero or non-finite first axis")
    b1 = a1 / n1
    a2 = a2 - np.sum(a2 * b1, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2, axis=-1, keepdims=True)
    if np.any(n2 < _EPS):
        raise InputError("6D rotation axes are parallel")
    b2 = a2 / n2
    return np.stack([b1, b2, np.cross(b1, b2)], axis=-1)


def yaw_of_6d(v):
    """Yaw of the encoded rotation's forward (+Z) axis projected on the floor."""
    R = rot_from_6d(v)
    f = R[..., :, 2]
    return np.arctan2(f[..., 0], f[..., 2])


def yaw_to_6d(yaw):
    yaw = np.asarray(yaw, dtype=float)
    c, s = np.cos(yaw), np.sin(yaw)
    z = np.zeros_like(yaw)
    return np.stack([c, z, -s, z, z + 1.0, z], axis=-1)
