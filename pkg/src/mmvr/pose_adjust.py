"""Corrections applied after matching: root clamp, two-bone IK and foot locking."""
from dataclasses import dataclass, field

import numba
import numpy as np

from . import quat
from .errors import InputError
from .validation import check_positive

_EPS = 1e-9


# ---------------------------------------------------------------------------
# root clamp


@dataclass(frozen=True)
class RootClampConfig:
    """``alpha``: largest allowed distance between avatar root and target (m).

    ``drift_gain``: fraction of the distance travelled this frame (speed times
    dt) by which the root is pulled toward the target before clamping.
    """
    alpha: float = 0.3
    drift_gain: float = 0.5

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        if self.drift_gain < 0:
            raise InputError("drift_gain must be non-negative")


def clamp_to_radius(p, target, alpha):
    p = np.asarray(p, dtype=float)
    target = np.asarray(target, dtype=float)
    d = p - target
    dist = float(np.linalg.norm(d))
    if dist <= alpha:
        return p.copy()
    return target + alpha * d / dist


def clamp_root(p, target, cfg=None, speed=0.0, dt=0.0):
    """Drift ``p`` toward ``target`` by ``gain * speed * dt`` (never past it), then clamp to ``alpha``."""
    cfg = RootClampConfig() if cfg is None else cfg
    p = np.asarray(p, dtype=float)
    target = np.asarray(target, dtype=float)
    d = target - p
    dist = float(np.linalg.norm(d))
    step = cfg.drift_gain * abs(speed) * dt
    if dist > _EPS and step > 0:
        p = p + d * (min(step, dist) / dist)
    return clamp_to_radius(p, target, cfg.alpha)


# ---------------------------------------------------------------------------
# two-bone IK


@dataclass(frozen=True)
class IKChain:
    """Joints (root, mid, end) and a bend direction for the mid joint, in the character's yaw frame."""
    root: int
    mid: int
    end: int
    lengths: tuple
    pole: tuple = (0.0, 0.0, 1.0)
    keep_bend: bool = True  # bend toward the current mid joint; False always uses the pole
    softness: float = 0.0  # fraction of full reach over which extension eases in (0 = exact reach)

    def __post_init__(self):
        if min(self.lengths) <= 0:
            raise InputError("IK bone lengths must be positive")
        if not 0.0 <= self.softness < 1.0:
            raise InputError("IK softness must be in [0, 1)")

    @classmethod
    def from_skeleton(cls, skeleton, root, mid, end, pole=(0.0, 0.0, 1.0), keep_bend=True, softness=0.0):
        l1 = float(np.linalg.norm(skeleton.offsets[mid]))
        l2 = float(np.linalg.norm(skeleton.offsets[end]))
        return cls(root, mid, end, (l1, l2), tuple(pole), keep_bend, softness)


@numba.njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@numba.njit(cache=True)
def _norm(v):
    return np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


@numba.njit(cache=True)
def _qmul(a, b):
    return np.array([
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ])


@numba.njit(cache=True)
def _qnormalize(q):
    return q / np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


@numba.njit(cache=True)
def _qrotate(q, v):
    qv = q[1:]
    t = 2.0 * _cross(qv, v)
    return v + q[0] * t + _cross(qv, t)


@numba.njit(cache=True)
def _qbasis(u, n):
    """Quaternion of the rotation whose columns are (u, n, u x n)."""
    w = _cross(u, n)
    m00, m10, m20 = u[0], u[1], u[2]
    m01, m11, m21 = n[0], n[1], n[2]
    m02, m12, m22 = w[0], w[1], w[2]
    tr = m00 + m11 + m22
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s])
    elif m00 > m11 and m00 > m22:
        s = 2.0 * np.sqrt(1.0 + m00 - m11 - m22)
        q = np.array([(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s])
    elif m11 > m22:
        s = 2.0 * np.sqrt(1.0 + m11 - m00 - m22)
        q = np.array([(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + m22 - m00 - m11)
        q = np.array([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s])
    return _qnormalize(q)


@numba.njit(cache=True)
def _qbetween(a, b):
    a = a / _norm(a)
    b = b / _norm(b)
    c = _cross(a, b)
    d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    if d < -1.0 + 1e-12:
        axis = _cross(a, np.array([1.0, 0.0, 0.0]))
        if _norm(axis) < 1e-6:
            axis = _cross(a, np.array([0.0, 1.0, 0.0]))
        axis = axis / _norm(axis)
        return np.array([0.0, axis[0], axis[1], axis[2]])
    return _qnormalize(np.array([1.0 + d, c[0], c[1], c[2]]))


@numba.njit(cache=True)
def _perp(v, u):
    return v - (v[0] * u[0] + v[1] * u[1] + v[2] * u[2]) * u


@numba.njit(cache=True)
def _solve(a, b, c, rot_a, rot_b, target, pole, keep_bend, softness):
    l1 = _norm(b - a)
    l2 = _norm(c - b)
    to_t = target - a
    dist_t = _norm(to_t)
    u = to_t / dist_t
    reach = l1 + l2
    soft = softness * reach
    if soft > 0.0 and dist_t > reach - soft:
        # approach full extension asymptotically so the mid joint never snaps straight
        dist_t = reach - soft * np.exp(-(dist_t - reach + soft) / soft)
    dist = min(max(dist_t, abs(l1 - l2)), reach)
    cos_a = min(max((l1 * l1 + dist * dist - l2 * l2) / (2.0 * l1 * dist), -1.0), 1.0)
    sin_a = np.sqrt(max(0.0, 1.0 - cos_a * cos_a))

    # bend side: keep the current knee/elbow side when it is well defined
    perp = _perp(b - a, u)
    if not keep_bend or _norm(perp) < _EPS or _norm(_cross(b - a, c - b)) < 1e-6 * l1 * l2:
        perp = _perp(pole, u)
    if _norm(perp) < _EPS:
        if abs(u[0]) < 0.9:
            perp = _cross(u, np.array([1.0, 0.0, 0.0]))
        else:
            perp = _cross(u, np.array([0.0, 0.0, 1.0]))
    perp = perp / _norm(perp)

    b_new = a + l1 * (cos_a * u + sin_a * perp)
    c_new = a + dist * u
    n1 = _cross(u, perp)

    u0 = (b - a) / l1
    n0 = _cross(b - a, c - b)
    if _norm(n0) < _EPS:
        # straight chain: pick the bone-perpendicular normal closest to the new plane's
        n0 = _perp(n1, u0)
        if _norm(n0) < _EPS:
            n0 = _cross(u0, perp)
    n0 = n0 / _norm(n0)
    u1 = (b_new - a) / l1
    n1 = _perp(n1, u1)
    n1 = n1 / _norm(n1)
    q0 = _qbasis(u0, n0)
    q_a = _qmul(_qbasis(u1, n1), np.array([q0[0], -q0[1], -q0[2], -q0[3]]))
    new_a = _qnormalize(_qmul(q_a, rot_a))
    carried = _qrotate(q_a, c - b)
    q_b = _qbetween(carried, c_new - b_new)
    new_b = _qnormalize(_qmul(q_b, _qmul(q_a, rot_b)))
    return new_a, new_b, c_new


def solve_two_bone(a, b, c, rot_a, rot_b, target, pole, keep_bend=True, softness=0.0):
    """Rotate the chain a-b-c so that c reaches ``target``; returns new (rot_a, rot_b, c).

    Rotations are world space. If the target is out of reach the chain ends
    fully extended along the target direction. ``pole`` picks the bend side.
    """
    args = [np.ascontiguousarray(x, dtype=np.float64) for x in (a, b, c, rot_a, rot_b, target, pole)]
    if np.linalg.norm(args[5] - args[0]) < _EPS:
        raise InputError("IK target coincides with the chain root")
    if min(np.linalg.norm(args[1] - args[0]), np.linalg.norm(args[2] - args[1])) < _EPS:
        raise InputError("IK chain has a zero-length bone")
    return _solve(*args, bool(keep_bend), float(softness))


def two_bone_ik(chain, parents, local_rotations, global_positions, global_rotations, target_position,
                target_rotation=None):
    """Adjust the chain's local rotations so its end joint reaches ``target_position``.

    ``global_*`` are the pose's world transforms. Returns (local rotations, reached end position).
    The end joint's world rotation becomes ``target_rotation`` when given, otherwise
    it keeps its previous world rotation.
    """
    a, b, c = chain.root, chain.mid, chain.end
    gp, gr = global_positions, global_rotations
    root_yaw = quat.from_yaw(quat.yaw_of(gr[0]))
    pole = quat.rotate(root_yaw, np.asarray(chain.pole, dtype=float))
    new_a, new_b, c_new = solve_two_bone(gp[a], gp[b], gp[c], gr[a], gr[b], np.asarray(target_position, float), pole,
                                         chain.keep_bend, chain.softness)
    end_rot = gr[c] if target_rotation is None else quat.normalize(np.asarray(target_rotation, float))
    out = np.array(local_rotations, dtype=float, copy=True)
    pa = parents[a]
    out[a] = quat.mul(quat.inv(gr[pa]), new_a) if pa >= 0 else new_a
    out[b] = quat.mul(quat.inv(new_a), new_b)
    out[c] = quat.mul(quat.inv(new_b), end_rot)
    return out, c_new


def leg_chains(skeleton, joints):
    """Default IK chains for the legs (upper leg, lower leg, foot); knees bend forward."""
    return {side: IKChain.from_skeleton(skeleton, joints[f"{side}_upper_leg"], joints[f"{side}_lower_leg"],
                                        joints[f"{side}_foot"], pole=(0.0, 0.0, 1.0))
            for side in ("left", "right")}


def arm_chains(skeleton, joints):
    """Arm chains ending at the wrists; elbows bend backwards and down."""
    out = {}
    for side in ("left", "right"):
        wrist = joints[f"{side}_wrist"]
        elbow = skeleton.parents[wrist]
        shoulder = skeleton.parents[elbow]
        out[side] = IKChain.from_skeleton(skeleton, shoulder, elbow, wrist, pole=(0.0, -0.5, -1.0), keep_bend=False,
                                          softness=0.05)
    return out


# ---------------------------------------------------------------------------
# foot lock


def quintic_decay(x0, v0, duration, t):
    """Offset and its velocity at time ``t`` for a quintic that starts at (x0, v0)
    and reaches zero with zero velocity and acceleration at ``duration``."""
    if x0 is None:
        return 0.0, 0.0
    if duration <= 0 or t >= duration:
        return 0.0 * x0, 0.0 * x0
    T = duration
    A = -(3.0 * v0 * T + 6.0 * x0) / T ** 5
    B = (8.0 * v0 * T + 15.0 * x0) / T ** 4
    C = -(6.0 * v0 * T + 10.0 * x0) / T ** 3
    x = ((((A * t + B) * t + C) * t) * t + v0) * t + x0
    v = (((5.0 * A * t + 4.0 * B) * t + 3.0 * C) * t) * t + v0
    return x, v


@dataclass
class FootState:
    locked: bool = False
    position: np.ndarray = None
    was_contact: bool = False
    wait_release: bool = False
    armed: bool = False
    blend_offset: np.ndarray = None
    blend_velocity: np.ndarray = None
    blend_elapsed: float = 0.0
    blend_left: float = 0.0
    previous_matched: np.ndarray = None
    matched_velocity: np.ndarray = None

    def lock(self, position):
        self.locked, self.position = True, np.array(position, dtype=float)

    def unlock(self, matched, blend_time):
        """Release the pin; the foot then eases back onto ``matched`` without a velocity jump."""
        self.blend_left = 0.0
        if self.locked and blend_time > 0:
            self.blend_offset = self.position - np.asarray(matched, float)
            mv = np.zeros(3) if self.matched_velocity is None else self.matched_velocity
            self.blend_velocity = -mv
            self.blend_elapsed = 0.0
            self.blend_left = blend_time
        self.locked, self.position = False, None

    def blend_target(self, matched, blend_time):
        x, _ = quintic_decay(self.blend_offset, self.blend_velocity, blend_time, self.blend_elapsed)
        return matched + x


@dataclass
class FootLockState:
    unlock_distance: float = 0.2
    blend_time: float = 0.1
    feet: dict = field(default_factory=lambda: {"left": FootState(), "right": FootState()})

    def __post_init__(self):
        check_positive(self.unlock_distance, "unlock_distance")
        if self.blend_time < 0:
            raise InputError("blend_time must be non-negative")


def foot_lock(chains, parents, local_positions, local_rotations, contacts, state, dt, transitioned=False,
              fk=None):
    """Pin feet in contact to where they touched down. Mutates ``state``; returns new local rotations.

    Only the leg chains are ever modified; with no contact and no pending
    blend-out, the input rotations are returned unchanged.
    """
    from .kinematics import forward_kinematics
    fk = fk or (lambda r: forward_kinematics(parents, local_positions, r))
    rot = local_rotations
    gp, gr = fk(rot)
    matched_all = {side: gp[chains[side].end].copy() for side in ("left", "right")}
    for k, side in enumerate(("left", "right")):
        foot, chain = state.feet[side], chains[side]
        contact = bool(contacts[k])
        matched = matched_all[side]
        if foot.previous_matched is not None and dt > 0:
            foot.matched_velocity = (matched - foot.previous_matched) / dt
        foot.previous_matched = matched

        if foot.blend_left > 0:
            foot.blend_elapsed += dt
            foot.blend_left = max(0.0, state.blend_time - foot.blend_elapsed)
        if foot.locked and (not contact or transitioned):
            foot.unlock(matched, state.blend_time)
        if foot.locked and np.linalg.norm(matched - foot.position) > state.unlock_distance:
            # stretched too far: release outright, the foot rejoins the matched pose this frame
            foot.unlock(matched, 0.0)
            foot.wait_release = True
        if not contact:
            foot.wait_release = False
            foot.armed = False
        elif not foot.was_contact or transitioned:
            foot.armed = True
        foot.was_contact = contact
        if foot.armed and not foot.locked and not foot.wait_release and foot.blend_left <= 0:
            foot.lock(matched)
            foot.armed = False

        reach = chain.lengths[0] + chain.lengths[1]
        if foot.locked and np.linalg.norm(foot.position - gp[chain.root]) > reach + 1e-6:
            foot.unlock(matched, 0.0)
            foot.wait_release = True
        if foot.locked:
            target = foot.position
        elif foot.blend_left > 0:
            target = foot.blend_target(matched, state.blend_time)
        else:
            continue
        rot, _ = two_bone_ik(chain, parents, rot, gp, gr, target)
        gp, gr = fk(rot)
    return rot
