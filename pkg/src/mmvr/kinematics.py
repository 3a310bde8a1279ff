import numba
import numpy as np

from . import quat


@numba.njit(cache=True)
def _fk_single(parents, positions, rotations):
    n = positions.shape[0]
    gp = np.empty((n, 3))
    gr = np.empty((n, 4))
    for i in range(n):
        p = parents[i]
        if p < 0:
            gp[i] = positions[i]
            gr[i] = rotations[i]
            continue
        aw, ax, ay, az = gr[p, 0], gr[p, 1], gr[p, 2], gr[p, 3]
        bw, bx, by, bz = rotations[i, 0], rotations[i, 1], rotations[i, 2], rotations[i, 3]
        gr[i, 0] = aw * bw - ax * bx - ay * by - az * bz
        gr[i, 1] = aw * bx + ax * bw + ay * bz - az * by
        gr[i, 2] = aw * by - ax * bz + ay * bw + az * bx
        gr[i, 3] = aw * bz + ax * by - ay * bx + az * bw
        vx, vy, vz = positions[i, 0], positions[i, 1], positions[i, 2]
        tx = 2.0 * (ay * vz - az * vy)
        ty = 2.0 * (az * vx - ax * vz)
        tz = 2.0 * (ax * vy - ay * vx)
        gp[i, 0] = vx + aw * tx + (ay * tz - az * ty) + gp[p, 0]
        gp[i, 1] = vy + aw * ty + (az * tx - ax * tz) + gp[p, 1]
        gp[i, 2] = vz + aw * tz + (ax * ty - ay * tx) + gp[p, 2]
    return gp, gr


def forward_kinematics(parents, positions, rotations):
    """Global joint positions and rotations from local ones.

    Works on any leading batch shape: positions (..., J, 3), rotations (..., J, 4).
    Parents must be topologically ordered with -1 for the root.
    """
    positions = np.asarray(positions, dtype=float)
    rotations = np.asarray(rotations, dtype=float)
    if positions.ndim == 2 and rotations.ndim == 2:
        return _fk_single(np.asarray(parents, dtype=np.int64), np.ascontiguousarray(positions),
                          np.ascontiguousarray(rotations))
    gp = np.empty(np.broadcast_shapes(positions.shape[:-1], rotations.shape[:-1]) + (3,))
    gr = np.empty(gp.shape[:-1] + (4,))
    for i, p in enumerate(parents):
        if p < 0:
            gp[..., i, :] = positions[..., i, :]
            gr[..., i, :] = rotations[..., i, :]
        else:
            gr[..., i, :] = quat.mul(gr[..., p, :], rotations[..., i, :])
            gp[..., i, :] = quat.rotate(gr[..., p, :], positions[..., i, :]) + gp[..., p, :]
    return gp, gr


def chain_to(parents, joint):
    """Joint indices from the root down to ``joint`` inclusive."""
    chain = []
    while joint >= 0:
        chain.append(joint)
        joint = parents[joint]
    return chain[::-1]
