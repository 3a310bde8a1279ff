"""27-dimensional matching features and their normalization."""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import quat
from .errors import InputError, InvariantViolation
from .validation import check_features

# (name, width); order defines the layout of every feature/query vector
FEATURE_GROUPS = (
    ("foot_velocity", 6),
    ("hip_velocity", 3),
    ("foot_position", 6),
    ("trajectory_position", 6),
    ("trajectory_direction", 6),
)
FEATURE_SLICES = {}
_o = 0
for _name, _w in FEATURE_GROUPS:
    FEATURE_SLICES[_name] = slice(_o, _o + _w)
    _o += _w
N_FEATURES = _o
POSE_FEATURES = slice(0, 15)
TRAJECTORY_FEATURES = slice(15, 27)
if N_FEATURES != 9 + 6 + 6 + 6:
    raise InvariantViolation("feature layout must have 27 dimensions")

HORIZON_SECONDS = (1.0 / 3.0, 2.0 / 3.0, 1.0)


def horizons(fps):
    return tuple(int(round(fps * s)) for s in HORIZON_SECONDS)


def weight_vector(weights=None):
    """Expand per-group weights (dict) into a 27-vector; missing groups default to 1."""
    w = np.ones(N_FEATURES)
    for name, value in (weights or {}).items():
        if name not in FEATURE_SLICES:
            raise InputError(f"unknown feature group {name!r}")
        if value < 0:
            raise InputError("feature weights must be non-negative")
        w[FEATURE_SLICES[name]] = value
    return w


@dataclass(frozen=True, eq=False)
class FeatureVector:
    zv: np.ndarray
    zl: np.ndarray
    zp: np.ndarray
    zd: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.zv, self.zl, self.zp, self.zd])

    @classmethod
    def from_vector(cls, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (N_FEATURES,):
            raise InputError(f"feature vector must have {N_FEATURES} entries")
        return cls(z[0:9], z[9:15], z[15:21], z[21:27])


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Per-dimension standardization with a floor on the deviation."""

    def __init__(self, std_floor=1e-8):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        X = check_features(X, min_samples=2)
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), self.std_floor)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_features(X, n_features=self.n_features_in_)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_features(X, n_features=self.n_features_in_)
        return X * self.scale_ + self.mean_


def _joint_world(db):
    gp, _ = db.global_transforms
    j = db.joints
    return gp[:, [j["left_foot"], j["right_foot"], j["hips"]]]


def _world_velocities(db, points):
    out = np.empty_like(points)
    for a, b in db.clip_ranges:
        out[a:b] = quat.linear_velocity(points[a:b], np.arange(b - a) / db.fps)
    return out


def valid_mask(db):
    last = horizons(db.fps)[-1]
    return np.arange(len(db)) + last < db.clip_stop


def extract_features(db, i):
    """Features of pose ``i``; raises if the one-second lookahead leaves its clip."""
    if not 0 <= i < len(db):
        raise InputError(f"pose index {i} out of range")
    hz = horizons(db.fps)
    a, b = db.clip_ranges[db.clip_of[i]]
    if i + hz[-1] >= b:
        raise InputError(f"pose {i}: lookahead of {hz[-1]} frames leaves its clip [{a}, {b})")
    pts = _joint_world(db)[a:b]
    vel = quat.linear_velocity(pts, np.arange(b - a) / db.fps)[i - a]
    root_p = db.positions[:, 0]
    root_q = db.rotations[i, 0]
    yaw = db.root_yaws
    zv = quat.inv_rotate(root_q, vel).reshape(-1)
    zl = quat.inv_rotate(root_q, pts[i - a, :2] - root_p[i]).reshape(-1)
    zp, zd = [], []
    for h in hz:
        d = quat.inv_rotate(root_q, root_p[i + h] - root_p[i])
        zp.extend([d[0], d[2]])
        zd.extend(quat.yaw_direction(yaw[i + h] - yaw[i]))
    return FeatureVector(zv, zl, np.array(zp), np.array(zd))


def compute_features(db):
    """Raw features for every pose; lookahead is clamped at clip ends (those rows are masked)."""
    n = len(db)
    pts = _joint_world(db)
    vel = _world_velocities(db, pts)
    root_p = db.positions[:, 0]
    root_q = db.rotations[:, 0]
    yaw = db.root_yaws
    inv = quat.inv(root_q)[:, None]
    z = np.empty((n, N_FEATURES))
    z[:, 0:9] = quat.rotate(inv, vel).reshape(n, 9)
    z[:, 9:15] = quat.rotate(inv[:, :1], pts[:, :2] - root_p[:, None]).reshape(n, 6)
    idx = np.arange(n)
    for k, h in enumerate(horizons(db.fps)):
        j = np.minimum(idx + h, db.clip_stop - 1)
        d = quat.rotate(inv[:, 0], root_p[j] - root_p)
        z[:, 15 + 2 * k] = d[:, 0]
        z[:, 16 + 2 * k] = d[:, 2]
        z[:, 21 + 2 * k:23 + 2 * k] = quat.yaw_direction(yaw[j] - yaw)
    return z


@dataclass(eq=False)
class FeatureDatabase:
    raw: np.ndarray
    valid: np.ndarray
    scaler: FeatureScaler

    def __post_init__(self):
        self.raw = np.ascontiguousarray(self.raw, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.normalized = np.ascontiguousarray(self.scaler.transform(self.raw))
        for a in (self.raw, self.valid, self.normalized):
            a.setflags(write=False)

    def __len__(self):
        return self.raw.shape[0]

    @property
    def mean(self):
        return self.scaler.mean_

    @property
    def std(self):
        return self.scaler.scale_

    @property
    def valid_indices(self):
        return np.flatnonzero(self.valid)

    def normalize(self, z):
        return (np.asarray(z, dtype=float) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


def build_feature_db(db, std_floor=1e-8):
    if len(db) == 0:
        raise InputError("empty pose database")
    raw = compute_features(db)
    valid = valid_mask(db)
    if valid.sum() < 2:
        raise InputError(f"only {int(valid.sum())} poses have a full one-second lookahead; need at least 2")
    scaler = FeatureScaler(std_floor).fit(raw[valid])
    return FeatureDatabase(raw, valid, scaler)


def feature_db_arrays(fdb):
    meta = {"std_floor": fdb.scaler.std_floor, "n_features": N_FEATURES}
    arrays = {
        "raw": np.asarray(fdb.raw, dtype="<f8"),
        "valid": np.asarray(fdb.valid, dtype="u1"),
        "mean": np.asarray(fdb.mean, dtype="<f8"),
        "std": np.asarray(fdb.std, dtype="<f8"),
    }
    return meta, arrays


def feature_db_from_arrays(meta, arrays):
    scaler = FeatureScaler(meta["std_floor"])
    scaler.mean_ = np.array(arrays["mean"], dtype=float)
    scaler.scale_ = np.array(arrays["std"], dtype=float)
    scaler.n_features_in_ = N_FEATURES
    return FeatureDatabase(arrays["raw"], arrays["valid"].astype(bool), scaler)
