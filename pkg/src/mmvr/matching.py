"""Motion-matching runtime: smoothing, queries, feature search, inertialization and database switching."""
from dataclasses import dataclass, field

import numba
import numpy as np
from sklearn.base import BaseEstimator

from . import quat
from .config import RuntimeConfig
from .errors import InputError, InvariantViolation
from .feature_db import N_FEATURES, POSE_FEATURES, build_feature_db, horizons, weight_vector
from .kinematics import forward_kinematics
from .pose_adjust import (FootLockState, RootClampConfig, arm_chains, clamp_root, foot_lock, leg_chains, quintic_decay,
                          two_bone_ik)
from .tracker_sim import DEFAULT_OFFSETS

# ---------------------------------------------------------------------------
# smoothing


@dataclass
class SmoothingState:
    """Smoothed planar velocity ``v`` and yaw ``d`` (plus their rates for the spring variant)."""
    v: np.ndarray = field(default_factory=lambda: np.zeros(2))
    d: float = 0.0
    beta: float = 5.0
    mode: str = "exponential"
    v_rate: np.ndarray = field(default_factory=lambda: np.zeros(2))
    d_rate: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise InputError("beta must be positive")
        self.v = np.array(self.v, dtype=float)
        self.v_rate = np.array(self.v_rate, dtype=float)

    def copy(self):
        return SmoothingState(self.v.copy(), self.d, self.beta, self.mode, self.v_rate.copy(), self.d_rate)


def _spring(x, rate, goal, beta, dt):
    # exact critically damped spring with decay rate beta
    j0 = x - goal
    j1 = rate + j0 * beta
    e = np.exp(-beta * dt)
    return e * (j0 + j1 * dt) + goal, e * (rate - j1 * beta * dt)


def smooth_velocity(state, v_raw, dt):
    """One update of the velocity smoother; mutates and returns ``state.v``."""
    if not dt > 0:
        raise InputError("dt must be positive")
    v_raw = np.asarray(v_raw, dtype=float)
    if state.mode == "spring":
        state.v, state.v_rate = _spring(state.v, state.v_rate, v_raw, state.beta, dt)
    else:
        state.v = state.v + min(max(state.beta * dt, 0.0), 1.0) * (v_raw - state.v)
    return state.v


def smooth_orientation(state, d_raw, dt):
    """Move the smoothed yaw toward ``d_raw`` along the shorter arc; mutates and returns ``state.d``.

    Exactly opposite yaws resolve to the negative direction (wrap to [-pi, pi)).
    """
    if not dt > 0:
        raise InputError("dt must be positive")
    diff = float(quat.wrap_angle(d_raw - state.d))
    if diff == 0.0 and (state.mode != "spring" or state.d_rate == 0.0):
        return state.d
    if state.mode == "spring":
        x, state.d_rate = _spring(-diff, state.d_rate, 0.0, state.beta, dt)
        state.d = float(quat.wrap_angle(state.d + diff + x))
    else:
        state.d = float(quat.wrap_angle(state.d + min(max(state.beta * dt, 0.0), 1.0) * diff))
    return state.d


# ---------------------------------------------------------------------------
# query


def to_local_2d(vec, yaw):
    """World planar (x, z) vector(s) into the frame of a root with the given yaw."""
    vec = np.asarray(vec, dtype=float)
    c, s = np.cos(yaw), np.sin(yaw)
    return np.stack([c * vec[..., 0] - s * vec[..., 1], s * vec[..., 0] + c * vec[..., 1]], axis=-1)


def future_orientations(state, d_raw, fps, dt=None):
    """Iterate a copy of the yaw smoother toward a fixed prediction; yaw at each horizon."""
    dt = 1.0 / fps if dt is None else dt
    s = state.copy()
    out, steps = [], 0
    for h in horizons(fps):
        while steps < h:
            smooth_orientation(s, d_raw, dt)
            steps += 1
        out.append(s.d)
    return np.array(out)


def build_query(pose_features, root_position, root_yaw, target, velocity, future_yaws):
    """Raw (unnormalized) 27-vector: pose part copied, trajectory part from the user's motion.

    ``target`` is the projected head centre and ``velocity`` the smoothed planar
    velocity, both world (x, z); ``future_yaws`` are smoothed yaws at the horizons.
    """
    q = np.empty(N_FEATURES)
    q[POSE_FEATURES] = pose_features[POSE_FEATURES]
    base = np.asarray(target, float) - np.asarray(root_position, float)
    times = np.array([1.0 / 3.0, 2.0 / 3.0, 1.0])
    q[15:21] = to_local_2d(base[None] + times[:, None] * np.asarray(velocity, float)[None], root_yaw).reshape(6)
    q[21:27] = quat.yaw_direction(np.asarray(future_yaws) - root_yaw).reshape(6)
    return q


# ---------------------------------------------------------------------------
# search


@numba.njit(cache=True)
def _search_brute(q, w, X):
    best = np.inf
    best_k = -1
    for k in range(X.shape[0]):
        d = 0.0
        for c in range(X.shape[1]):
            t = q[c] - X[k, c]
            d += w[c] * t * t
        if d < best:
            best = d
            best_k = k
    return best_k, best


@numba.njit(cache=True)
def _box_bound(q, w, lo, hi, best, strict):
    d = 0.0
    for c in range(q.shape[0]):
        x = q[c]
        if x < lo[c]:
            t = x - lo[c]
        elif x > hi[c]:
            t = x - hi[c]
        else:
            continue
        d += w[c] * t * t
        if d > best or (not strict and d == best):
            return d
    return d


@numba.njit(cache=True)
def _search_accel(q, w, X, leaf_lo, leaf_hi, group_lo, group_hi, leaf_size, group_size, best_k, best):
    # with a seed (best_k >= 0) an equal distance at a smaller index must still win, so prune strictly
    strict = best_k >= 0
    m = X.shape[0]
    n_leaf = leaf_lo.shape[0]
    per_group = group_size // leaf_size
    evaluated = 0
    for g in range(group_lo.shape[0]):
        lb = _box_bound(q, w, group_lo[g], group_hi[g], best, strict)
        if lb > best or (not strict and lb == best):
            continue
        for leaf in range(g * per_group, min((g + 1) * per_group, n_leaf)):
            lb = _box_bound(q, w, leaf_lo[leaf], leaf_hi[leaf], best, strict)
            if lb > best or (not strict and lb == best):
                continue
            for k in range(leaf * leaf_size, min((leaf + 1) * leaf_size, m)):
                evaluated += 1
                d = 0.0
                for c in range(X.shape[1]):
                    t = q[c] - X[k, c]
                    d += w[c] * t * t
                    if d > best:
                        break
                if d < best or (d == best and k < best_k):
                    best = d
                    best_k = k
    return best_k, best, evaluated


class AccelIndex:
    """Two-level bounding boxes over the valid, normalized feature rows (kept in database order).

    Leaves hold ``leaf_size`` consecutive entries; upper boxes hold ``group_size`` entries.
    """

    def __init__(self, fdb, leaf_size=16, group_size=64):
        if leaf_size < 1 or group_size % leaf_size:
            raise InputError("group_size must be a positive multiple of leaf_size")
        self.leaf_size, self.group_size = int(leaf_size), int(group_size)
        self.ids = fdb.valid_indices.astype(np.int64)
        if len(self.ids) == 0:
            raise InputError("feature database has no valid entries")
        self.X = np.ascontiguousarray(fdb.normalized[self.ids])
        self.leaf_lo, self.leaf_hi = self._boxes(self.leaf_size)
        self.group_lo, self.group_hi = self._boxes(self.group_size)

    def _boxes(self, size):
        m = len(self.X)
        starts = np.arange(0, m, size)
        return (np.ascontiguousarray(np.minimum.reduceat(self.X, starts, axis=0)),
                np.ascontiguousarray(np.maximum.reduceat(self.X, starts, axis=0)))

    def __len__(self):
        return len(self.ids)

    def contains_all(self):
        """Every member vector lies inside its leaf and group box."""
        k = np.arange(len(self.X))
        leaf, grp = k // self.leaf_size, k // self.group_size
        return bool(np.all(self.X >= self.leaf_lo[leaf]) and np.all(self.X <= self.leaf_hi[leaf])
                    and np.all(self.X >= self.group_lo[grp]) and np.all(self.X <= self.group_hi[grp]))


def _prep(query, weights):
    q = np.ascontiguousarray(query, dtype=np.float64)
    w = np.ascontiguousarray(np.ones(N_FEATURES) if weights is None else weights, dtype=np.float64)
    if q.shape != (N_FEATURES,) or w.shape != (N_FEATURES,):
        raise InputError("query and weights must have 27 entries")
    if not np.all(np.isfinite(q)) or np.any(w < 0):
        raise InputError("query must be finite and weights non-negative")
    return q, w


def search_brute(query, fdb, weights=None, index=None):
    """Nearest valid entry to a normalized query: (database index, weighted squared distance)."""
    q, w = _prep(query, weights)
    if index is None:
        ids = fdb.valid_indices
        if len(ids) == 0:
            raise InputError("feature database has no valid entries")
        X = np.ascontiguousarray(fdb.normalized[ids])
    else:
        ids, X = index.ids, index.X
    k, d = _search_brute(q, w, X)
    return int(ids[k]), float(d)


def search_accel(query, fdb, index, weights=None, hint=None, stats=None):
    """Same contract as :func:`search_brute`, pruning with the index's boxes.

    ``hint`` is an optional database index used to seed the best distance.
    ``stats`` (a dict) receives the number of full distance evaluations.
    """
    q, w = _prep(query, weights)
    best_k, best = -1, np.inf
    if hint is not None:
        pos = int(np.searchsorted(index.ids, hint))
        if pos < len(index.ids) and index.ids[pos] == hint:
            best_k = pos
            best = float(_search_brute(q, w, index.X[pos:pos + 1])[1])
    k, d, evaluated = _search_accel(q, w, index.X, index.leaf_lo, index.leaf_hi, index.group_lo, index.group_hi,
                                    index.leaf_size, index.group_size, best_k, best)
    if stats is not None:
        stats["evaluated"] = stats.get("evaluated", 0) + int(evaluated)
        stats["entries"] = stats.get("entries", 0) + len(index)
    return int(index.ids[k]), float(d)


# ---------------------------------------------------------------------------
# databases


@dataclass(eq=False)
class MatchDatabase:
    """A pose database with its features and search index."""
    poses: object
    features: object = None
    index: AccelIndex = None
    leaf_size: int = 16
    group_size: int = 64

    def __post_init__(self):
        if self.features is None:
            self.features = build_feature_db(self.poses)
        if len(self.features) != len(self.poses):
            raise InputError("pose and feature databases are not aligned")
        if self.index is None:
            self.index = AccelIndex(self.features, self.leaf_size, self.group_size)

    def search(self, query_raw, weights, accelerated=True, hint=None, stats=None):
        q = self.features.normalize(query_raw)
        if accelerated:
            return search_accel(q, self.features, self.index, weights, hint, stats)
        return search_brute(q, self.features, weights, self.index)


def select_band(ratio, bands, current=None, hysteresis=0.02):
    """Band name for a height ratio; leaving the current band needs an extra ``hysteresis`` margin."""
    names = [n for n, _ in bands]
    raw = next(n for n, lo in bands if ratio >= lo)
    if current is None or raw == current or current not in names:
        return raw
    i = names.index(current)
    lower = bands[i][1]
    upper = bands[i - 1][1] if i > 0 else np.inf
    if ratio < lower - hysteresis or ratio >= upper + hysteresis:
        return raw
    return current


def nearest_available(band, bands, available):
    names = [n for n, _ in bands]
    if band in available:
        return band
    i = names.index(band)
    order = sorted((abs(j - i), j) for j, n in enumerate(names) if n in available)
    if not order:
        raise InputError("no database available for any height band")
    return names[order[0][1]]


# ---------------------------------------------------------------------------
# inertialization


@dataclass
class Inertialization:
    """Per-joint position and rotation offsets decaying to zero with a quintic (zero end velocity/acceleration)."""
    duration: float = 0.25
    x0: np.ndarray = None
    v0: np.ndarray = None
    r0: np.ndarray = None
    w0: np.ndarray = None
    elapsed: float = 0.0

    _quintic = staticmethod(quintic_decay)

    @property
    def active(self):
        return self.x0 is not None and self.elapsed < self.duration

    def offsets(self):
        """Current (position offset, position offset velocity, rotation offset, rotation offset velocity)."""
        if not self.active:
            return None
        x, v = self._quintic(self.x0, self.v0, self.duration, self.elapsed)
        r, w = self._quintic(self.r0, self.w0, self.duration, self.elapsed)
        return x, v, r, w

    def apply(self, pos, rot, vel, ang):
        off = self.offsets()
        if off is None:
            return pos, rot, vel, ang
        x, v, r, w = off
        pos, vel, ang = pos.copy(), vel.copy(), ang.copy()
        rot = rot.copy()
        pos[1:] += x
        vel[1:] += v
        rot[1:] = quat.normalize(quat.mul(quat.from_axis_angle(r), rot[1:]))
        ang[1:] += w
        return pos, rot, vel, ang

    def start(self, src, dst):
        """Begin a transition from the displayed pose ``src`` to the database pose ``dst`` (both tuples
        of local positions, rotations, velocities, angular velocities)."""
        sp, sr, sv, sw = src
        dp, dr, dv, dw = dst
        if self.duration <= 0:
            self.x0 = None
            return
        self.x0 = sp[1:] - dp[1:]
        self.v0 = sv[1:] - dv[1:]
        self.r0 = quat.to_axis_angle(quat.abs(quat.mul(sr[1:], quat.inv(dr[1:]))))
        self.w0 = sw[1:] - dw[1:]
        self.elapsed = 0.0

    def advance(self, dt):
        self.elapsed += dt


# ---------------------------------------------------------------------------
# runtime


@dataclass
class MatchingState:
    band: str
    n: int
    frames_since_search: int
    smoothing: SmoothingState
    inertialization: Inertialization
    calibration_height: float
    root_position: np.ndarray
    root_yaw: float
    foot_lock: FootLockState
    time: float = 0.0
    frame: int = 0
    visited: set = field(default_factory=set)


@dataclass(eq=False)
class StepResult:
    local_positions: np.ndarray
    local_rotations: np.ndarray
    global_positions: np.ndarray
    global_rotations: np.ndarray
    root_space_positions: np.ndarray
    contacts: np.ndarray
    band: str
    index: int
    searched: bool
    forced: bool
    transitioned: bool
    target: np.ndarray
    root: np.ndarray
    position_error: float
    distance: float = float("nan")
    locked: tuple = (False, False)


def head_center(frame, offset):
    fwd = quat.rotate(frame.rotations[0], quat.FORWARD)
    p = frame.positions[0] - offset * fwd
    return np.array([p[0], p[2]])


def _db_pose(db, n):
    return (db.positions[n], db.rotations[n], db.velocities[n], db.angular_velocities[n])


class MotionMatcher(BaseEstimator):
    """Runtime estimator. ``fit`` takes ``{band: PoseDatabase or MatchDatabase}``.

    After fitting, ``reset`` starts a performance and ``step`` consumes one
    tracker frame plus a predicted body yaw and returns a :class:`StepResult`.
    """

    def __init__(self, config=None, offsets=None):
        self.config = config
        self.offsets = offsets

    # -- setup ------------------------------------------------------------
    def fit(self, databases, y=None):
        cfg = self.config_
        if not isinstance(databases, dict):
            databases = {"normal": databases}
        if not databases:
            raise InputError("no databases given")
        self.databases_ = {}
        for name, db in databases.items():
            if name not in cfg.band_names:
                raise InputError(f"unknown height band {name!r}; expected one of {cfg.band_names}")
            if not isinstance(db, MatchDatabase):
                db = MatchDatabase(db, leaf_size=cfg.leaf_size, group_size=cfg.group_size)
            self.databases_[name] = db
        first = next(iter(self.databases_.values())).poses
        for db in self.databases_.values():
            if not db.poses.skeleton.same_topology(first.skeleton) or db.poses.fps != first.fps:
                raise InputError("all databases must share one skeleton and frame rate")
        self.skeleton_ = first.skeleton
        self.fps_ = first.fps
        self.joints_ = first.joints
        self.weights_ = weight_vector(cfg.weights)
        self.legs_ = leg_chains(self.skeleton_, self.joints_)
        self.arms_ = arm_chains(self.skeleton_, self.joints_)
        self.parents_ = np.asarray(self.skeleton_.parents)
        self.stats_ = {}
        return self

    @property
    def config_(self):
        return RuntimeConfig() if self.config is None else self.config

    @property
    def offsets_(self):
        return DEFAULT_OFFSETS if self.offsets is None else self.offsets

    def _check(self):
        if not hasattr(self, "databases_"):
            raise InputError("MotionMatcher is not fitted")

    def _band(self, frame, current):
        cfg = self.config_
        band = select_band(frame.positions[0, 1] / self._calibration, cfg.height_bands, current, cfg.band_hysteresis)
        return nearest_available(band, cfg.height_bands, self.databases_)

    def _search(self, db, pose_features, target, velocity, yaw_raw, root_position, root_yaw, hint=None):
        cfg = self.config_
        fut = future_orientations(self.state_.smoothing, yaw_raw, self.fps_)
        q = build_query(pose_features, root_position, root_yaw, target, velocity, fut)
        return db.search(q, self.weights_, cfg.accelerated_search, hint, self.stats_)

    def reset(self, frame, predicted_yaw, calibration_height, initial_index=None, initial_root=None):
        """Start a performance at ``frame``; the avatar is placed at the user's target position."""
        self._check()
        cfg = self.config_
        if not calibration_height > 0:
            raise InputError("calibration height must be positive")
        self._calibration = float(calibration_height)
        band = self._band(frame, None)
        db = self.databases_[band]
        target = head_center(frame, cfg.head_center_offset)
        v_raw = frame.velocities[0][[0, 2]]
        smoothing = SmoothingState(v_raw.copy(), float(predicted_yaw), cfg.beta, cfg.smoother)
        root_pos, root_yaw = (target.copy(), float(predicted_yaw)) if initial_root is None else (
            np.asarray(initial_root[0], float).copy(), float(initial_root[1]))
        root_pos = clamp_root(root_pos, target, RootClampConfig(cfg.alpha, cfg.drift_gain))
        self.state_ = MatchingState(band, -1, 0, smoothing, Inertialization(cfg.blend_time), self._calibration,
                                    root_pos, root_yaw, FootLockState(cfg.unlock_distance, cfg.foot_lock_blend),
                                    float(frame.t), 0)
        if initial_index is None:
            feats = db.features.mean
            n, dist = self._search(db, feats, target, smoothing.v, predicted_yaw, root_pos, root_yaw)
        else:
            n, dist = int(initial_index), float("nan")
        self.state_.n = n
        self.state_.visited.add((band, n))
        return self._output(frame, target, searched=True, forced=True, transitioned=False, distance=dist)

    # -- per frame ----------------------------------------------------------
    def step(self, frame, predicted_yaw):
        self._check()
        if not hasattr(self, "state_"):
            raise InputError("call reset() before step()")
        cfg = self.config_
        st = self.state_
        dt = float(frame.t) - st.time
        if not dt > 0:
            raise InputError(f"frame time {frame.t} does not advance past {st.time}")
        st.time = float(frame.t)
        st.frame += 1

        target = head_center(frame, cfg.head_center_offset)
        smooth_velocity(st.smoothing, frame.velocities[0][[0, 2]], dt)
        smooth_orientation(st.smoothing, predicted_yaw, dt)

        old_db = self.databases_[st.band]
        band = self._band(frame, st.band)
        switched = band != st.band

        # advance the cursor with the database's own root motion
        n = st.n
        forced = switched
        dp, dy = old_db.poses.root_deltas
        st.root_position = st.root_position + to_local_2d(dp[n][[0, 2]], -st.root_yaw)
        st.root_yaw = float(quat.wrap_angle(st.root_yaw + dy[n]))
        if n + 1 < old_db.poses.clip_stop[n]:
            n += 1
        else:
            forced = True
        st.n = n
        st.inertialization.advance(dt)
        st.frames_since_search += 1

        searched = transitioned = False
        dist = float("nan")
        if forced or st.frames_since_search >= cfg.search_interval:
            db = self.databases_[band]
            feats = old_db.features.raw[n]
            hint = n if (not switched and cfg.accelerated_search and old_db.features.valid[n]) else None
            m, dist = self._search(db, feats, target, st.smoothing.v, predicted_yaw, st.root_position,
                                   st.root_yaw, hint)
            searched = True
            st.frames_since_search = 0
            if switched or m != n:
                src = st.inertialization.apply(*_db_pose(old_db.poses, n))
                st.inertialization.start(src, _db_pose(db.poses, m))
                st.n, st.band = m, band
                transitioned = True
        if st.frames_since_search >= cfg.search_interval:
            raise InvariantViolation("search interval exceeded")

        # keep the root near the user
        speed = float(np.linalg.norm(st.smoothing.v))
        st.root_position = clamp_root(st.root_position, target, RootClampConfig(cfg.alpha, cfg.drift_gain),
                                      speed, dt)
        st.visited.add((st.band, st.n))
        return self._output(frame, target, searched, forced, transitioned, dist, dt)

    def _output(self, frame, target, searched, forced, transitioned, distance, dt=None):
        cfg = self.config_
        st = self.state_
        db = self.databases_[st.band].poses
        pos, rot, _, _ = st.inertialization.apply(*_db_pose(db, st.n))
        pos, rot = pos.copy(), rot.copy()
        pos[0] = (st.root_position[0], 0.0, st.root_position[1])
        rot[0] = quat.from_yaw(st.root_yaw)
        parents = self.parents_

        def fk(r):
            return forward_kinematics(parents, pos, r)

        contacts = db.contacts[st.n]
        if cfg.foot_lock:
            rot = foot_lock(self.legs_, parents, pos, rot, contacts, st.foot_lock,
                            dt if dt else 1.0 / self.fps_, transitioned, fk)
        gp, gr = fk(rot)
        if cfg.arm_ik:
            for k, side in ((1, "left"), (2, "right")):
                off = self.offsets_[side]
                w_rot = quat.mul(frame.rotations[k], quat.inv(np.asarray(off.rotation, float)))
                w_pos = frame.positions[k] - quat.rotate(w_rot, np.asarray(off.position, float))
                rot, _ = two_bone_ik(self.arms_[side], parents, rot, gp, gr, w_pos, w_rot)
                gp, gr = fk(rot)
        root_q = rot[0]
        root_space = quat.inv_rotate(root_q, gp - pos[0])
        err = float(np.linalg.norm(st.root_position - target))
        if err > cfg.alpha + 1e-9:
            raise InvariantViolation(f"root clamp violated: {err} > {cfg.alpha}")
        return StepResult(pos, rot, gp, gr, root_space, contacts.copy(), st.band, st.n, searched, forced,
                          transitioned, target, st.root_position.copy(), err, distance,
                          tuple(st.foot_lock.feet[s].locked for s in ("left", "right")))
