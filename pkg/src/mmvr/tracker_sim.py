"""Three-point tracker streams and their HMD-local network encoding."""
import json
from dataclasses import dataclass

import numpy as np

from . import quat
from .errors import DegenerateOrientationError, InputError
from .mocap_io import DEFAULT_JOINT_MAP
from .rotation6d import rot_to_6d

DEVICES = ("hmd", "left", "right")
N_DEVICES = len(DEVICES)
NET_INPUT_SIZE = N_DEVICES * 12 + 6


@dataclass(frozen=True)
class DeviceOffset:
    """Rigid transform from a joint to the device attached to it (joint space)."""
    position: tuple = (0.0, 0.0, 0.0)
    rotation: tuple = (1.0, 0.0, 0.0, 0.0)


DEFAULT_OFFSETS = {
    "hmd": DeviceOffset(),
    "left": DeviceOffset(position=(0.0, 0.0, 0.05)),
    "right": DeviceOffset(position=(0.0, 0.0, 0.05)),
}
IDENTITY_OFFSETS = {d: DeviceOffset() for d in DEVICES}


@dataclass(frozen=True, eq=False)
class TrackerFrame:
    t: float
    positions: np.ndarray
    rotations: np.ndarray
    velocities: np.ndarray
    angular_velocities: np.ndarray

    @property
    def hmd_height(self):
        return float(self.positions[0, 1])


@dataclass(frozen=True, eq=False)
class TrackerTrace:
    """Per-frame device transforms, device order (hmd, left, right).

    Velocities are always derived from the transforms by finite differences.
    """
    times: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray
    velocities: np.ndarray = None
    angular_velocities: np.ndarray = None
    calibration_height: float = None

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        p = np.array(self.positions, dtype=float)
        q = np.array(self.rotations, dtype=float)
        norms = np.linalg.norm(q, axis=-1, keepdims=True)
        if np.any(np.abs(norms - 1.0) > 1e-12):  # leave unit input bit-exact
            q = quat.normalize(q)
        if t.ndim != 1 or p.shape != (len(t), N_DEVICES, 3) or q.shape != (len(t), N_DEVICES, 4):
            raise InputError(f"trace arrays have inconsistent shapes {t.shape}, {p.shape}, {q.shape}")
        if len(t) < 2:
            raise InputError("trace needs at least 2 frames")
        if np.any(np.diff(t) <= 0):
            raise InputError("trace timestamps must be strictly increasing")
        v = quat.linear_velocity(p, t)
        w = quat.angular_velocity(q, t)
        for name, a in (("times", t), ("positions", p), ("rotations", q), ("velocities", v), ("angular_velocities", w)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i):
        return TrackerFrame(float(self.times[i]), self.positions[i], self.rotations[i], self.velocities[i],
                            self.angular_velocities[i])

    @property
    def hmd_heights(self):
        return self.positions[:, 0, 1]

    @property
    def fps(self):
        return 1.0 / float(np.median(np.diff(self.times)))

    def transformed(self, yaw=0.0, translation=(0.0, 0.0, 0.0)):
        """The whole rig rotated about world up by ``yaw`` and then translated."""
        r = quat.from_yaw(yaw)
        p = quat.rotate(r, self.positions) + np.asarray(translation, dtype=float)
        q = quat.mul(np.broadcast_to(r, self.rotations.shape), self.rotations)
        return TrackerTrace(self.times, p, q, calibration_height=self.calibration_height)

    def slice(self, start, stop):
        return TrackerTrace(self.times[start:stop], self.positions[start:stop], self.rotations[start:stop],
                            calibration_height=self.calibration_height)


def simulate_trackers(clip, offsets=None, joint_map=None):
    """Device transforms = joint world transform composed with a fixed offset."""
    offsets = DEFAULT_OFFSETS if offsets is None else offsets
    joint_map = DEFAULT_JOINT_MAP if joint_map is None else joint_map
    sk = clip.skeleton
    joints = [sk.index(joint_map[r]) for r in ("head", "left_wrist", "right_wrist")]
    gp, gr = clip.global_transforms()
    pos = np.empty((clip.n_frames, N_DEVICES, 3))
    rot = np.empty((clip.n_frames, N_DEVICES, 4))
    for k, (dev, j) in enumerate(zip(DEVICES, joints)):
        off = offsets[dev]
        pos[:, k] = gp[:, j] + quat.rotate(gr[:, j], np.broadcast_to(np.asarray(off.position, float), (clip.n_frames, 3)))
        rot[:, k] = quat.mul(gr[:, j], np.broadcast_to(np.asarray(off.rotation, float), (clip.n_frames, 4)))
    return TrackerTrace(clip.times, pos, rot, calibration_height=None)


def hmd_yaw(rotation, fallback=None):
    """Yaw of the HMD forward projected on the floor; ``fallback`` when looking straight up/down."""
    f = quat.rotate(rotation, quat.FORWARD)
    if np.hypot(f[0], f[2]) < 1e-4:
        if fallback is None:
            raise DegenerateOrientationError("HMD forward is vertical and no previous frame is available")
        return float(fallback)
    return float(np.arctan2(f[0], f[2]))


def hmd_yaws(trace):
    f = quat.rotate(trace.rotations[:, 0], np.broadcast_to(quat.FORWARD, (len(trace), 3)))
    planar = np.hypot(f[:, 0], f[:, 2])
    yaw = np.arctan2(f[:, 0], f[:, 2])
    bad = planar < 1e-4
    if bad.any():
        if bad[0]:
            raise DegenerateOrientationError("HMD forward is vertical on the first frame")
        for i in np.flatnonzero(bad):
            yaw[i] = yaw[i - 1]
    return yaw


@dataclass(frozen=True, eq=False)
class NetInput:
    xv: np.ndarray
    xw: np.ndarray
    xr: np.ndarray
    xd: np.ndarray
    frame_yaw: float

    @property
    def vector(self):
        return np.concatenate([self.xv, self.xw, self.xr, self.xd])


def encode_devices(velocities, angular_velocities, rotations, yaw):
    """Tracker part (36 values per frame) of the network input in the local ground frame of ``yaw``.

    Batched: leading dims of the device arrays and of ``yaw`` must broadcast.
    """
    yaw = np.asarray(yaw, dtype=float)
    inv = quat.from_yaw(-yaw)[..., None, :]
    v = quat.rotate(inv, velocities)
    w = quat.rotate(inv, angular_velocities)
    r = quat.mul(np.broadcast_to(inv, rotations.shape), rotations)
    r6 = rot_to_6d(quat.to_matrix(r))
    lead = v.shape[:-2]
    return np.concatenate([v.reshape(lead + (-1,)), w.reshape(lead + (-1,)), r6.reshape(lead + (-1,))], axis=-1)


def yaw_rotate_6d(d6, yaw):
    """Rotate both columns of 6D orientations about world up."""
    d6 = np.asarray(d6, dtype=float)
    c, s = np.cos(yaw), np.sin(yaw)
    out = np.empty(np.broadcast_shapes(d6.shape, np.shape(yaw) + (6,)))
    for k in (0, 3):
        x, y, z = d6[..., k], d6[..., k + 1], d6[..., k + 2]
        out[..., k] = c * x + s * z
        out[..., k + 1] = y
        out[..., k + 2] = -s * x + c * z
    return out


def to_local_frame(frame, previous_orientation, fallback_yaw=None):
    """Encode one tracker frame for the orientation network.

    ``previous_orientation`` is the previous body orientation in world space
    (6D); it is re-expressed in this frame's HMD ground frame together with the
    device velocities, angular velocities and rotations.
    """
    yaw = hmd_yaw(frame.rotations[0], fallback_yaw)
    dev = encode_devices(frame.velocities, frame.angular_velocities, frame.rotations, yaw)
    xd = yaw_rotate_6d(np.asarray(previous_orientation, dtype=float), -yaw)
    return NetInput(dev[0:9], dev[9:18], dev[18:36], xd, yaw)


# ---------------------------------------------------------------------------
# files


def _dev(p, q):
    return {"p": [float(v) for v in p], "q": [float(v) for v in q]}


def trace_to_jsonl(trace):
    lines = []
    if trace.calibration_height is not None:
        lines.append(json.dumps({"meta": {"calibration_height": float(trace.calibration_height)}}))
    for i in range(len(trace)):
        rec = {"t": float(trace.times[i])}
        for k, d in enumerate(DEVICES):
            rec[d] = _dev(trace.positions[i, k], trace.rotations[i, k])
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def trace_from_jsonl(text):
    times, pos, rot, calib = [], [], [], None
    for ln, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if "meta" in rec:
                calib = rec["meta"].get("calibration_height", calib)
                continue
            times.append(float(rec["t"]))
            pos.append([rec[d]["p"] for d in DEVICES])
            rot.append([rec[d]["q"] for d in DEVICES])
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"trace line {ln}: {exc}") from exc
    try:
        return TrackerTrace(np.array(times), np.array(pos, dtype=float), np.array(rot, dtype=float),
                            calibration_height=calib)
    except ValueError as exc:
        raise InputError(f"bad trace: {exc}") from exc


def read_trace(path):
    with open(path, "r", encoding="utf-8") as fh:
        return trace_from_jsonl(fh.read())


def write_ground_truth(yaws, times):
    rows = ["t,yaw"] + [f"{float(t)!r},{float(y)!r}" for t, y in zip(times, yaws)]
    return "\n".join(rows) + "\n"


def read_ground_truth(path):
    """``(times, yaws)`` from a ``t,yaw`` CSV."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if data.shape[1] != 2 or not np.all(np.isfinite(data)):
        raise InputError(f"{path}: expected two finite columns t,yaw")
    return data[:, 0], data[:, 1]
