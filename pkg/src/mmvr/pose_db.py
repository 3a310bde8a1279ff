"""Pose database: virtual root, local kinematics and foot contacts."""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import quat
from .errors import DegenerateOrientationError, InputError
from .kinematics import forward_kinematics
from .mocap_io import DEFAULT_JOINT_MAP, ROLES, RawClip, Skeleton

VIRTUAL_ROOT = "VirtualRoot"
DEFAULT_CONTACT_THRESHOLD = 0.15


def add_virtual_root(clip, joint_map=None):
    """Prepend a ground-projected root joint carrying the character's position and yaw.

    The old root is re-expressed in the new root's space, so hips sit in
    virtual-root space whether or not they were the file's root.
    """
    joint_map = DEFAULT_JOINT_MAP if joint_map is None else joint_map
    sk = clip.skeleton
    hips = sk.index(joint_map["hips"])
    gp, gr = clip.global_transforms()
    fwd = quat.rotate(gr[:, hips], np.broadcast_to(quat.FORWARD, gp[:, hips].shape))
    planar = np.linalg.norm(fwd[:, [0, 2]], axis=-1)
    bad = np.flatnonzero(planar < 1e-4)
    if bad.size:
        raise DegenerateOrientationError(f"hip forward is vertical at frame {bad[0]}")
    yaw = np.arctan2(fwd[:, 0], fwd[:, 2])
    root_pos = gp[:, hips] * np.array([1.0, 0.0, 1.0])
    root_rot = quat.from_yaw(yaw)

    n, j = clip.rotations.shape[:2]
    rot = np.empty((n, j + 1, 4))
    pos = np.empty((n, j + 1, 3))
    rot[:, 0], pos[:, 0] = root_rot, root_pos
    rot[:, 1:], pos[:, 1:] = clip.rotations, clip.positions
    rot[:, 1] = quat.mul(quat.inv(root_rot), clip.rotations[:, 0])
    pos[:, 1] = quat.inv_rotate(root_rot, clip.positions[:, 0] - root_pos)

    pos_rot = ("Xposition", "Yposition", "Zposition", "Zrotation", "Yrotation", "Xrotation")
    new_sk = Skeleton(
        names=(VIRTUAL_ROOT,) + sk.names,
        parents=(-1,) + tuple(p + 1 for p in sk.parents),
        offsets=np.vstack([np.zeros(3), sk.offsets]),
        channels=(pos_rot,) + sk.channels,
        end_sites=(None,) + sk.end_sites,
    )
    return RawClip(new_sk, clip.frame_time, quat.normalize(rot), pos)


@dataclass(eq=False)
class Pose:
    """One skeletal frame. Joint 0 is the virtual root, whose local transform is its world transform."""
    yp: np.ndarray
    yr: np.ndarray
    yv: np.ndarray
    yw: np.ndarray
    yc: np.ndarray
    global_positions: np.ndarray = None
    global_rotations: np.ndarray = None

    @property
    def root_position(self):
        return self.yp[0]

    @property
    def root_rotation(self):
        return self.yr[0]

    @property
    def root_yaw(self):
        return float(quat.yaw_of(self.yr[0]))


def _ro(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(eq=False)
class PoseDatabase:
    skeleton: Skeleton
    positions: np.ndarray
    rotations: np.ndarray
    velocities: np.ndarray
    angular_velocities: np.ndarray
    contacts: np.ndarray
    clip_ranges: list
    fps: float
    contact_threshold: float = DEFAULT_CONTACT_THRESHOLD
    joint_map: dict = field(default_factory=lambda: dict(DEFAULT_JOINT_MAP))

    def __post_init__(self):
        for name in ("positions", "rotations", "velocities", "angular_velocities", "contacts"):
            setattr(self, name, _ro(getattr(self, name)))
        self.clip_ranges = [(int(a), int(b)) for a, b in self.clip_ranges]
        if self.clip_ranges and (self.clip_ranges[0][0] != 0 or self.clip_ranges[-1][1] != len(self)):
            raise InputError("clip ranges must tile the database")

    def __len__(self):
        return self.positions.shape[0]

    @cached_property
    def joints(self):
        """Role -> joint index, plus ``root`` for the virtual root."""
        out = self.skeleton.resolve(self.joint_map)
        out["root"] = 0
        return out

    @cached_property
    def clip_of(self):
        ids = np.empty(len(self), dtype=np.int64)
        for k, (a, b) in enumerate(self.clip_ranges):
            ids[a:b] = k
        return _ro(ids)

    @cached_property
    def clip_stop(self):
        """Exclusive end index of each pose's clip."""
        return _ro(np.array([self.clip_ranges[k][1] for k in self.clip_of], dtype=np.int64))

    @cached_property
    def root_yaws(self):
        return _ro(quat.yaw_of(self.rotations[:, 0]))

    @cached_property
    def global_transforms(self):
        gp, gr = forward_kinematics(self.skeleton.parents, self.positions, self.rotations)
        return _ro(gp), _ro(gr)

    @cached_property
    def root_deltas(self):
        """Per-pose root motion to the next frame: planar offset in the pose's root space and yaw change.

        The last frame of a clip repeats the previous delta.
        """
        pos = self.positions[:, 0]
        yaw = self.root_yaws
        dp = np.zeros_like(pos)
        dy = np.zeros(len(self))
        for a, b in self.clip_ranges:
            if b - a < 2:
                continue
            dp[a:b - 1] = quat.inv_rotate(quat.from_yaw(yaw[a:b - 1]), pos[a + 1:b] - pos[a:b - 1])
            dy[a:b - 1] = quat.wrap_angle(yaw[a + 1:b] - yaw[a:b - 1])
            dp[b - 1], dy[b - 1] = dp[b - 2], dy[b - 2]
        return _ro(dp), _ro(dy)

    def pose(self, i):
        return Pose(self.positions[i].copy(), self.rotations[i].copy(), self.velocities[i].copy(),
                    self.angular_velocities[i].copy(), self.contacts[i].copy())

    def subset(self, fraction):
        """First ``fraction`` of every clip (at least two frames each)."""
        if not 0.0 < fraction <= 1.0:
            raise InputError("fraction must be in (0, 1]")
        keep, ranges, start = [], [], 0
        for a, b in self.clip_ranges:
            k = min(b - a, max(2, int(round((b - a) * fraction))))
            keep.append(np.arange(a, a + k))
            ranges.append((start, start + k))
            start += k
        idx = np.concatenate(keep)
        return PoseDatabase(self.skeleton, self.positions[idx], self.rotations[idx], self.velocities[idx],
                            self.angular_velocities[idx], self.contacts[idx], ranges, self.fps,
                            self.contact_threshold, dict(self.joint_map))


def _clip_kinematics(vr_clip, joints, threshold):
    t = vr_clip.times
    vel = quat.linear_velocity(vr_clip.positions, t)
    ang = quat.angular_velocity(vr_clip.rotations, t)
    gp, _ = vr_clip.global_transforms()
    toes = gp[:, [joints["left_toe"], joints["right_toe"]]]
    toe_speed = np.linalg.norm(quat.linear_velocity(toes, t), axis=-1)
    return vel, ang, toe_speed < threshold


def build_pose_db(clips, contact_threshold=DEFAULT_CONTACT_THRESHOLD, joint_map=None):
    """Concatenate clips into one database; kinematics never straddle clip boundaries."""
    clips = list(clips)
    if not clips:
        raise InputError("no clips given")
    joint_map = dict(DEFAULT_JOINT_MAP if joint_map is None else joint_map)
    ft = clips[0].frame_time
    parts, ranges, start, skeleton = [], [], 0, None
    for k, clip in enumerate(clips):
        clip.validate(min_frames=2)
        if abs(clip.frame_time - ft) > 1e-9 * ft:
            raise InputError(f"clip {k} has frame time {clip.frame_time}, expected {ft}")
        vr = add_virtual_root(clip, joint_map)
        if skeleton is None:
            skeleton = vr.skeleton
            joints = skeleton.resolve(joint_map)
        elif not skeleton.same_topology(vr.skeleton):
            raise InputError(f"clip {k} uses a different skeleton")
        vel, ang, contacts = _clip_kinematics(vr, joints, contact_threshold)
        parts.append((vr.positions, vr.rotations, vel, ang, contacts))
        ranges.append((start, start + vr.n_frames))
        start += vr.n_frames
    cat = [np.concatenate([p[i] for p in parts]) for i in range(5)]
    return PoseDatabase(skeleton, *cat, ranges, 1.0 / ft, contact_threshold, joint_map)


def pose_db_arrays(db):
    meta = {
        "names": list(db.skeleton.names),
        "parents": list(db.skeleton.parents),
        "channels": [list(c) for c in db.skeleton.channels],
        "end_sites": [None if e is None else list(e) for e in db.skeleton.end_sites],
        "clip_ranges": [list(r) for r in db.clip_ranges],
        "fps": db.fps,
        "contact_threshold": db.contact_threshold,
        "joint_map": {k: db.joint_map[k] for k in ROLES},
    }
    arrays = {
        "offsets": np.asarray(db.skeleton.offsets, dtype="<f8"),
        "positions": np.asarray(db.positions, dtype="<f8"),
        "rotations": np.asarray(db.rotations, dtype="<f8"),
        "velocities": np.asarray(db.velocities, dtype="<f8"),
        "angular_velocities": np.asarray(db.angular_velocities, dtype="<f8"),
        "contacts": np.asarray(db.contacts, dtype="u1"),
    }
    return meta, arrays


def pose_db_from_arrays(meta, arrays):
    sk = Skeleton(meta["names"], meta["parents"], arrays["offsets"], meta["channels"], meta["end_sites"])
    return PoseDatabase(sk, arrays["positions"], arrays["rotations"], arrays["velocities"],
                        arrays["angular_velocities"], arrays["contacts"].astype(bool), meta["clip_ranges"],
                        meta["fps"], meta["contact_threshold"], dict(meta["joint_map"]))
