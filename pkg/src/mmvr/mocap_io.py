"""BVH ingestion/emission, the canonical skeleton, and a synthetic gait generator."""
import re
import sys
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from . import quat
from .errors import BVHSyntaxError, ChannelSpecError, FrameCountError, InputError, MissingJointError
from .kinematics import forward_kinematics

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ROLES = (
    "hips", "head", "left_wrist", "right_wrist",
    "left_upper_leg", "left_lower_leg", "left_foot", "left_toe",
    "right_upper_leg", "right_lower_leg", "right_foot", "right_toe",
)

DEFAULT_JOINT_MAP = {
    "hips": "Hips",
    "head": "Head",
    "left_wrist": "LeftHand",
    "right_wrist": "RightHand",
    "left_upper_leg": "LeftUpLeg",
    "left_lower_leg": "LeftLeg",
    "left_foot": "LeftFoot",
    "left_toe": "LeftToe",
    "right_upper_leg": "RightUpLeg",
    "right_lower_leg": "RightLeg",
    "right_foot": "RightFoot",
    "right_toe": "RightToe",
}

_CHANNELS = ("Xposition", "Yposition", "Zposition", "Xrotation", "Yrotation", "Zrotation")
_CANONICAL_ROTATION = ("Zrotation", "Yrotation", "Xrotation")
_POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")


def load_joint_map(source):
    """Parse a ``role = "JointName"`` table (path or text); unspecified roles keep defaults."""
    text = source
    if not isinstance(source, str) or "=" not in source:
        with open(source, "rb") as fh:
            text = fh.read().decode("utf-8")
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"bad joint map: {exc}") from exc
    mapping = dict(DEFAULT_JOINT_MAP)
    for key, value in table.items():
        if key not in ROLES:
            raise InputError(f"unknown joint role {key!r}")
        if not isinstance(value, str):
            raise InputError(f"joint role {key!r} must map to a string")
        mapping[key] = value
    return mapping


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Skeleton:
    names: tuple
    parents: tuple
    offsets: np.ndarray
    channels: tuple
    end_sites: tuple = None

    def __post_init__(self):
        n = len(self.names)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "channels", tuple(tuple(c) for c in self.channels))
        object.__setattr__(self, "offsets", _readonly(self.offsets).reshape(n, 3))
        ends = self.end_sites if self.end_sites is not None else (None,) * n
        object.__setattr__(self, "end_sites", tuple(None if e is None else tuple(float(v) for v in e) for e in ends))
        if not (len(self.parents) == len(self.channels) == len(self.end_sites) == n):
            raise InputError("skeleton field lengths disagree")
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise InputError("skeleton must have exactly one root at index 0")
        for i, p in enumerate(self.parents):
            if i > 0 and not 0 <= p < i:
                raise InputError(f"joint {self.names[i]!r} is not topologically ordered")

    def __len__(self):
        return len(self.names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise MissingJointError(f"joint {name!r} not in skeleton") from None

    def resolve(self, joint_map=None):
        """Role -> joint index for every required role."""
        joint_map = DEFAULT_JOINT_MAP if joint_map is None else joint_map
        missing = [r for r in ROLES if joint_map.get(r) not in self.names]
        if missing:
            raise MissingJointError("unresolved joints: " + ", ".join(f"{r}={joint_map.get(r)!r}" for r in missing))
        return {r: self.names.index(joint_map[r]) for r in ROLES}

    def same_topology(self, other):
        return self.names == other.names and self.parents == other.parents


@dataclass(frozen=True, eq=False)
class RawClip:
    """Per-frame local joint transforms.

    ``positions`` holds local translations for every joint; joints without
    position channels simply repeat their skeleton offset.
    """
    skeleton: Skeleton
    frame_time: float
    rotations: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        j = len(self.skeleton)
        rot = _readonly(self.rotations)
        pos = _readonly(self.positions)
        if rot.ndim != 3 or rot.shape[1:] != (j, 4) or pos.shape != rot.shape[:2] + (3,):
            raise InputError(f"clip arrays have shapes {rot.shape} and {pos.shape} for {j} joints")
        if not self.frame_time > 0:
            raise InputError("frame time must be positive")
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "frame_time", float(self.frame_time))

    @property
    def n_frames(self):
        return self.rotations.shape[0]

    @property
    def fps(self):
        return 1.0 / self.frame_time

    @property
    def times(self):
        return np.arange(self.n_frames) * self.frame_time

    @property
    def root_positions(self):
        return self.positions[:, 0]

    def validate(self, min_frames=1):
        norms = np.linalg.norm(self.rotations, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InputError("clip has non-unit quaternions")
        if self.n_frames < min_frames:
            raise InputError(f"clip needs at least {min_frames} frames, has {self.n_frames}")
        return self

    def global_transforms(self):
        return forward_kinematics(self.skeleton.parents, self.positions, self.rotations)

    def slice(self, start, stop):
        return replace(self, rotations=self.rotations[start:stop], positions=self.positions[start:stop])

    def allclose(self, other, atol=1e-4):
        """Semantic equality: topology, offsets, frame time and every transform within atol."""
        if not self.skeleton.same_topology(other.skeleton) or self.n_frames != other.n_frames:
            return False
        if not np.allclose(self.skeleton.offsets, other.skeleton.offsets, atol=atol):
            return False
        if abs(self.frame_time - other.frame_time) > 1e-12:
            return False
        sign = np.where(np.sum(self.rotations * other.rotations, axis=-1, keepdims=True) < 0, -1.0, 1.0)
        return bool(np.allclose(self.rotations, sign * other.rotations, atol=atol)
                    and np.allclose(self.positions, other.positions, atol=atol))


# ---------------------------------------------------------------------------
# BVH parsing

_TOKEN = re.compile(r"\S+")


class _Tokens:
    def __init__(self, lines):
        self.items = [(m.group(), ln + 1, m.start() + 1) for ln, line in enumerate(lines) for m in _TOKEN.finditer(line)]
        self.pos = 0

    def peek(self):
        if self.pos >= len(self.items):
            return None
        return self.items[self.pos][0]

    def next(self, what="token"):
        if self.pos >= len(self.items):
            last = self.items[-1] if self.items else ("", 0, 0)
            raise BVHSyntaxError(f"unexpected end of document, expected {what}", last[1], last[2])
        item = self.items[self.pos]
        self.pos += 1
        return item

    def expect(self, word):
        tok, line, col = self.next(repr(word))
        if tok.upper() != word.upper():
            raise BVHSyntaxError(f"expected {word!r}, found {tok!r}", line, col)
        return line, col

    def number(self, what="number", cast=float):
        tok, line, col = self.next(what)
        try:
            return cast(tok)
        except ValueError:
            raise BVHSyntaxError(f"expected {what}, found {tok!r}", line, col) from None


def _canonical_channel(tok, line, col):
    for c in _CHANNELS:
        if tok.lower() == c.lower():
            return c
    raise ChannelSpecError(f"unsupported channel {tok!r} (line {line}, column {col})")


def _parse_joint(tokens, name, parent, out):
    idx = len(out)
    out.append({"name": name, "parent": parent, "offset": None, "channels": (), "end": None})
    tokens.expect("{")
    tokens.expect("OFFSET")
    out[idx]["offset"] = [tokens.number("offset") for _ in range(3)]
    if (tokens.peek() or "").upper() == "CHANNELS":
        tokens.next()
        tok, line, col = tokens.items[tokens.pos] if tokens.pos < len(tokens.items) else ("", 0, 0)
        count = tokens.number("channel count", int)
        if not 0 <= count <= 6:
            raise ChannelSpecError(f"unsupported channel count {count} (line {line}, column {col})")
        chans = tuple(_canonical_channel(*tokens.next("channel name")) for _ in range(count))
        if len(set(chans)) != len(chans):
            raise ChannelSpecError(f"duplicate channel for joint {name!r} (line {line})")
        out[idx]["channels"] = chans
    while True:
        tok, line, col = tokens.next("JOINT, End Site or '}'")
        key = tok.upper()
        if key == "}":
            return
        if key == "JOINT":
            child, _, _ = tokens.next("joint name")
            _parse_joint(tokens, child, idx, out)
        elif key == "END":
            tokens.expect("Site")
            tokens.expect("{")
            tokens.expect("OFFSET")
            out[idx]["end"] = [tokens.number("offset") for _ in range(3)]
            tokens.expect("}")
        else:
            raise BVHSyntaxError(f"unexpected token {tok!r}", line, col)


def _euler_to_quat(angles_deg, order):
    """Intrinsic rotations applied in channel order, returned as (w, x, y, z)."""
    r = Rotation.from_euler(order.upper(), angles_deg, degrees=True)
    xyzw = r.as_quat()
    return quat.normalize(np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1))


def parse_bvh(text, length_scale=1.0):
    """Decode a BVH document into a RawClip.

    ``length_scale`` multiplies offsets and position channels (0.01 for files in
    centimetres).
    """
    lines = text.splitlines()
    motion_line = None
    for i, line in enumerate(lines):
        if line.strip().upper() == "MOTION":
            motion_line = i
            break
    if motion_line is None:
        raise BVHSyntaxError("missing MOTION section", len(lines), 1)

    tokens = _Tokens(lines[:motion_line])
    tokens.expect("HIERARCHY")
    tokens.expect("ROOT")
    name, _, _ = tokens.next("root name")
    joints = []
    _parse_joint(tokens, name, -1, joints)
    if tokens.peek() is not None:
        tok, line, col = tokens.next()
        raise BVHSyntaxError(f"unexpected token {tok!r} after hierarchy", line, col)

    header = _Tokens(lines[motion_line + 1:motion_line + 3])
    header.items = [(t, ln + motion_line + 1, c) for t, ln, c in header.items]
    header.expect("Frames:")
    n_frames = header.number("frame count", int)
    header.expect("Frame")
    header.expect("Time:")
    frame_time = header.number("frame time")
    if n_frames < 1:
        raise FrameCountError(f"frame count must be positive, got {n_frames}")
    if not frame_time > 0:
        raise BVHSyntaxError("frame time must be positive", motion_line + 3, 1)

    n_channels = sum(len(j["channels"]) for j in joints)
    rows = []
    for ln in range(motion_line + 3, len(lines)):
        parts = lines[ln].split()
        if not parts:
            continue
        if len(parts) != n_channels:
            raise FrameCountError(
                f"motion row {len(rows) + 1} (line {ln + 1}) has {len(parts)} values, expected {n_channels}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            bad = next(p for p in parts if not _is_float(p))
            raise BVHSyntaxError(f"bad number {bad!r} in motion row {len(rows) + 1}", ln + 1,
                                 lines[ln].index(bad) + 1) from None
    if len(rows) != n_frames:
        raise FrameCountError(f"header declares {n_frames} frames but {len(rows)} motion rows present")
    data = np.array(rows, dtype=float).reshape(n_frames, n_channels)

    skeleton = Skeleton(
        names=[j["name"] for j in joints],
        parents=[j["parent"] for j in joints],
        offsets=np.array([j["offset"] for j in joints]) * length_scale,
        channels=[j["channels"] for j in joints],
        end_sites=[None if j["end"] is None else np.array(j["end"]) * length_scale for j in joints],
    )
    rotations = np.empty((n_frames, len(joints), 4))
    positions = np.broadcast_to(skeleton.offsets, (n_frames, len(joints), 3)).copy()
    col = 0
    for ji, j in enumerate(joints):
        chans = j["channels"]
        block = data[:, col:col + len(chans)]
        col += len(chans)
        rot_axes = "".join(c[0] for c in chans if c.endswith("rotation"))
        rot_cols = [k for k, c in enumerate(chans) if c.endswith("rotation")]
        if rot_axes:
            rotations[:, ji] = _euler_to_quat(block[:, rot_cols], rot_axes)
        else:
            rotations[:, ji] = quat.identity()
        for k, c in enumerate(chans):
            if c.endswith("position"):
                positions[:, ji, "XYZ".index(c[0])] = block[:, k] * length_scale
    return RawClip(skeleton, frame_time, rotations, positions)


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_bvh(path, length_scale=1.0):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_bvh(text, length_scale)
    except InputError as exc:
        raise type(exc)(f"{path}: {exc}") if not isinstance(exc, BVHSyntaxError) else BVHSyntaxError(
            f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# BVH writing


def _fmt(values):
    return " ".join(f"{v:.6f}" for v in np.round(values, 6) + 0.0)


def write_bvh(clip, length_scale=1.0):
    """Emit canonical BVH: ZYX rotation channels, 6 decimals, frame time kept verbatim.

    Joints must be in depth-first order, the only order a BVH hierarchy can express.
    """
    clip.validate()
    sk = clip.skeleton
    for i in range(1, len(sk)):
        a = i - 1
        while a >= 0 and a != sk.parents[i]:
            a = sk.parents[a]
        if a < 0:
            raise InputError(f"joint {sk.names[i]!r} breaks depth-first order; BVH cannot represent it")
    has_pos = [i == 0 or any(c.endswith("position") for c in sk.channels[i]) for i in range(len(sk))]
    children = [[] for _ in range(len(sk))]
    for i, p in enumerate(sk.parents):
        if p >= 0:
            children[p].append(i)

    out = ["HIERARCHY"]

    def emit(i, depth):
        pad = "\t" * depth
        out.append(f"{pad}{'ROOT' if i == 0 else 'JOINT'} {sk.names[i]}")
        out.append(pad + "{")
        out.append(f"{pad}\tOFFSET {_fmt(sk.offsets[i] / length_scale)}")
        chans = (_POSITION_CHANNELS if has_pos[i] else ()) + _CANONICAL_ROTATION
        out.append(f"{pad}\tCHANNELS {len(chans)} {' '.join(chans)}")
        for c in children[i]:
            emit(c, depth + 1)
        if sk.end_sites[i] is not None:
            out.append(f"{pad}\tEnd Site")
            out.append(pad + "\t{")
            out.append(f"{pad}\t\tOFFSET {_fmt(np.array(sk.end_sites[i]) / length_scale)}")
            out.append(pad + "\t}")
        out.append(pad + "}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {clip.n_frames}")
    out.append(f"Frame Time: {clip.frame_time!r}")

    q = clip.rotations
    xyzw = np.concatenate([q[..., 1:], q[..., :1]], axis=-1).reshape(-1, 4)
    euler = Rotation.from_quat(xyzw).as_euler("ZYX", degrees=True).reshape(clip.n_frames, len(sk), 3)
    cols = []
    for i in range(len(sk)):
        if has_pos[i]:
            cols.append(clip.positions[:, i] / length_scale)
        cols.append(euler[:, i])
    table = np.concatenate(cols, axis=1)
    out.extend(_fmt(row) for row in table)
    return "\n".join(out) + "\n"


def save_bvh(path, clip, length_scale=1.0):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_bvh(clip, length_scale))


# ---------------------------------------------------------------------------
# Canonical skeleton and synthetic gait

STANDING_HIP_HEIGHT = 0.92
ANKLE_HEIGHT = 0.08
THIGH = 0.45
SHIN = 0.44
HIP_WIDTH = 0.09


def default_skeleton():
    joints = [
        ("Hips", -1, (0.0, 0.0, 0.0)),
        ("Spine", 0, (0.0, 0.10, 0.0)),
        ("Chest", 1, (0.0, 0.20, 0.0)),
        ("Neck", 2, (0.0, 0.22, 0.0)),
        ("Head", 3, (0.0, 0.12, 0.0)),
        ("LeftShoulder", 2, (0.04, 0.17, 0.0)),
        ("LeftArm", 5, (0.14, 0.0, 0.0)),
        ("LeftForeArm", 6, (0.0, -0.28, 0.0)),
        ("LeftHand", 7, (0.0, -0.25, 0.0)),
        ("RightShoulder", 2, (-0.04, 0.17, 0.0)),
        ("RightArm", 9, (-0.14, 0.0, 0.0)),
        ("RightForeArm", 10, (0.0, -0.28, 0.0)),
        ("RightHand", 11, (0.0, -0.25, 0.0)),
        ("LeftUpLeg", 0, (HIP_WIDTH, -0.06, 0.0)),
        ("LeftLeg", 13, (0.0, -THIGH, 0.0)),
        ("LeftFoot", 14, (0.0, -SHIN, 0.0)),
        ("LeftToe", 15, (0.0, -0.06, 0.13)),
        ("RightUpLeg", 0, (-HIP_WIDTH, -0.06, 0.0)),
        ("RightLeg", 17, (0.0, -THIGH, 0.0)),
        ("RightFoot", 18, (0.0, -SHIN, 0.0)),
        ("RightToe", 19, (0.0, -0.06, 0.13)),
    ]
    ends = {"Head": (0.0, 0.12, 0.0), "LeftHand": (0.0, -0.08, 0.0), "RightHand": (0.0, -0.08, 0.0),
            "LeftToe": (0.0, 0.0, 0.05), "RightToe": (0.0, 0.0, 0.05)}
    rot = ("Zrotation", "Yrotation", "Xrotation")
    return Skeleton(
        names=[j[0] for j in joints],
        parents=[j[1] for j in joints],
        offsets=[j[2] for j in joints],
        channels=[_POSITION_CHANNELS + rot if j[1] < 0 else rot for j in joints],
        end_sites=[ends.get(j[0]) for j in joints],
    )


def _keys(keys):
    if np.isscalar(keys):
        keys = ((0.0, float(keys)),)
    keys = np.asarray(keys, dtype=float).reshape(-1, 2)
    return keys[np.argsort(keys[:, 0], kind="stable")]


def _profile(keys):
    """Piecewise-linear keyframed signal held constant outside its keys."""
    keys = _keys(keys)
    return lambda t: np.interp(t, keys[:, 0], keys[:, 1])


@dataclass(frozen=True)
class GaitParams:
    """Parameters of the synthetic walker.

    Keyframed fields take a number or a sequence of ``(time_s, value)`` pairs
    that are linearly interpolated (a pair of keys at nearly equal times gives
    a step). Angles are radians; ``move_direction`` is the travel direction
    relative to the body heading (0 forward, pi backward, +-pi/2 side steps).
    """
    speed: object = 1.0
    heading: object = 0.0
    move_direction: object = 0.0
    head_yaw: object = 0.0
    head_sweep_amplitude: float = 0.0
    head_sweep_frequency: float = 0.25
    stride_frequency: float = 0.9
    knee_bend: float = 0.0
    duration: float = 10.0
    fps: float = 60.0
    seed: int = 0
    start_position: tuple = (0.0, 0.0)
    arm_noise: float = np.radians(8.0)
    arm_yaw_noise: float = np.radians(15.0)
    hand_noise: float = np.radians(10.0)
    head_pitch_noise: float = np.radians(8.0)
    torso_twist_noise: float = np.radians(4.0)
    step_height: float = 0.08


def _smooth_noise(rng, t, amplitude, n=3, fmin=0.08, fmax=0.6):
    freqs = rng.uniform(fmin, fmax, n)
    phases = rng.uniform(0.0, 2.0 * np.pi, n)
    weights = rng.uniform(0.5, 1.0, n)
    weights = weights / weights.sum()
    return amplitude * np.sum(weights[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None] + phases[:, None]), axis=0)


def _rot_x(a):
    a = np.asarray(a, dtype=float)
    z = np.zeros_like(a)
    return np.stack([np.cos(a / 2), np.sin(a / 2), z, z], axis=-1)


def _rot_z(a):
    a = np.asarray(a, dtype=float)
    z = np.zeros_like(a)
    return np.stack([np.cos(a / 2), z, z, np.sin(a / 2)], axis=-1)


def _frame_from_axes(y_axis, pole):
    """Rotation whose +Y column is y_axis and whose +Z column leans toward pole."""
    z = pole - np.sum(pole * y_axis, axis=-1, keepdims=True) * y_axis
    z = z / np.linalg.norm(z, axis=-1, keepdims=True)
    x = np.cross(y_axis, z)
    return quat.from_matrix(np.stack([x, y_axis, z], axis=-1))


def _leg_ik(hip, ankle, pole, l1, l2):
    d_vec = ankle - hip
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    d = np.clip(d, abs(l1 - l2) + 1e-6, 0.9995 * (l1 + l2))
    u = d_vec / np.linalg.norm(d_vec, axis=-1, keepdims=True)
    a = (l1 ** 2 - l2 ** 2 + d ** 2) / (2 * d)
    h = np.sqrt(np.maximum(l1 ** 2 - a ** 2, 0.0))
    w = pole - np.sum(pole * u, axis=-1, keepdims=True) * u
    w = w / np.linalg.norm(w, axis=-1, keepdims=True)
    knee = hip + a * u + h * w
    ankle_reached = hip + d * u
    thigh = _frame_from_axes(-(knee - hip) / l1, pole)
    shin = _frame_from_axes(-(ankle_reached - knee) / np.linalg.norm(ankle_reached - knee, axis=-1, keepdims=True), pole)
    return thigh, shin


def synth_gait(params=None, **overrides):
    """Deterministic parametric walking clip on the canonical skeleton.

    Feet are planted in world space for the first half of each gait cycle and
    swing sinusoidally to the next plant for the second half; the two feet are
    half a cycle apart. Legs are posed by analytic two-bone IK.
    """
    p = replace(params or GaitParams(), **overrides)
    if np.any(_keys(p.speed)[:, 1] < 0):
        raise InputError("speed must be non-negative")
    if not (p.duration > 0 and p.fps > 0 and p.stride_frequency > 0):
        raise InputError("duration, fps and stride frequency must be positive")
    if not 0.0 <= p.knee_bend <= 1.0:
        raise InputError("knee bend level must be within [0, 1]")

    sk = default_skeleton()
    rng = np.random.default_rng(p.seed)
    n = int(round(p.duration * p.fps)) + 1
    t = np.arange(n) / p.fps
    f = p.stride_frequency

    speed_of, heading_of = _profile(p.speed), _profile(p.heading)
    move_of, head_yaw_of = _profile(p.move_direction), _profile(p.head_yaw)

    # root trajectory integrated on a fine grid that also covers plants before/after the clip
    pad = 2.0 / f
    h = 1.0 / (p.fps * 8)
    tf = np.arange(-pad, p.duration + pad + h, h)
    direction = heading_of(tf) + move_of(tf)
    vel = speed_of(tf)[:, None] * np.stack([np.sin(direction), np.cos(direction)], -1)
    xz = np.zeros_like(vel)
    xz[1:] = np.cumsum(0.5 * (vel[1:] + vel[:-1]) * h, axis=0)
    # anchor the exact t=0 sample at the start position
    zero = int(round(pad / h))
    xz = xz - xz[zero] + np.asarray(p.start_position, dtype=float)

    def root_xz(times):
        times = np.asarray(times, dtype=float)
        return np.stack([np.interp(times, tf, xz[:, 0]), np.interp(times, tf, xz[:, 1])], -1)

    heading = heading_of(t)
    hip_height = STANDING_HIP_HEIGHT - 0.42 * p.knee_bend
    lean = np.radians(30.0) * p.knee_bend

    J = len(sk)
    rot = np.broadcast_to(quat.identity(), (n, J, 4)).copy()
    pos = np.broadcast_to(sk.offsets, (n, J, 3)).copy()
    root = root_xz(t)
    pos[:, 0] = np.stack([root[:, 0], np.full(n, hip_height), root[:, 1]], -1)
    hips_rot = quat.from_yaw(heading)
    rot[:, 0] = hips_rot

    twist = _smooth_noise(rng, t, p.torso_twist_noise)
    rot[:, 1] = quat.mul(quat.from_yaw(twist), _rot_x(np.full(n, lean)))
    head_yaw = head_yaw_of(t) + p.head_sweep_amplitude * np.sin(2 * np.pi * p.head_sweep_frequency * t) - twist
    head_pitch = _smooth_noise(rng, t, p.head_pitch_noise) - lean
    rot[:, 3] = quat.mul(quat.from_yaw(head_yaw), _rot_x(head_pitch))

    # feet
    forward = np.stack([np.sin(heading), np.zeros(n), np.cos(heading)], -1)
    swing_phase = {}
    for side, (phase0, upleg, leg, foot) in {"left": (0.0, 13, 14, 15), "right": (0.5, 17, 18, 19)}.items():
        lateral = HIP_WIDTH if side == "left" else -HIP_WIDTH
        ph = f * t + phase0
        k = np.floor(ph)
        u = ph - k

        def plant(kk):
            tm = (kk + 0.25 - phase0) / f
            yaw = heading_of(tm)
            c = root_xz(tm)
            return np.stack([c[..., 0] + lateral * np.cos(yaw), c[..., 1] - lateral * np.sin(yaw)], -1), yaw

        p0, y0 = plant(k)
        p1, y1 = plant(k + 1)
        swing = np.clip((u - 0.5) / 0.5, 0.0, 1.0)
        blend = 0.5 * (1.0 - np.cos(np.pi * swing))
        xz_foot = p0 + (p1 - p0) * blend[:, None]
        dyaw = quat.wrap_angle(y1 - y0)
        foot_yaw = y0 + dyaw * blend
        activity = np.clip((np.linalg.norm(p1 - p0, axis=-1) + 0.2 * np.abs(dyaw)) / 0.05, 0.0, 1.0)
        lift = p.step_height * activity * np.sin(np.pi * swing)
        ankle = np.stack([xz_foot[:, 0], ANKLE_HEIGHT + lift, xz_foot[:, 1]], -1)
        hip_joint = pos[:, 0] + quat.rotate(hips_rot, sk.offsets[upleg])
        thigh_w, shin_w = _leg_ik(hip_joint, ankle, forward, THIGH, SHIN)
        foot_w = quat.from_yaw(foot_yaw)
        rot[:, upleg] = quat.mul(quat.inv(hips_rot), thigh_w)
        rot[:, leg] = quat.mul(quat.inv(thigh_w), shin_w)
        rot[:, foot] = quat.mul(quat.inv(shin_w), foot_w)
        swing_phase[side] = ph

    # arms swing against the same-side leg
    for side, (arm, fore, hand, sign) in {"left": (6, 7, 8, 1.0), "right": (10, 11, 12, -1.0)}.items():
        opposite = swing_phase["right" if side == "left" else "left"]
        speed_now = speed_of(t)
        amp = np.radians(12.0) * np.clip(speed_now / 1.0, 0.0, 1.5)
        pitch = np.radians(15.0) + amp * np.sin(2 * np.pi * opposite) + _smooth_noise(rng, t, p.arm_noise)
        yaw = _smooth_noise(rng, t, p.arm_yaw_noise)
        rot[:, arm] = quat.mul(quat.from_yaw(yaw), quat.mul(_rot_z(np.full(n, sign * np.radians(10.0))), _rot_x(-pitch)))
        elbow = np.radians(70.0) + _smooth_noise(rng, t, p.arm_noise)
        rot[:, fore] = _rot_x(-elbow)
        rot[:, hand] = quat.mul(quat.from_yaw(_smooth_noise(rng, t, p.hand_noise)),
                                _rot_x(_smooth_noise(rng, t, p.hand_noise)))

    return RawClip(sk, 1.0 / p.fps, quat.normalize(rot), pos)
