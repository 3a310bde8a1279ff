"""Body-orientation predictor: a 42-32-32-6 ReLU network trained by feeding back its own output."""
import io
from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.base import BaseEstimator

from . import quat, storage
from .errors import InputError, InvariantViolation, TrainingDivergedError
from .rotation6d import rot_from_6d, rot_to_6d, yaw_of_6d, yaw_to_6d
from .tracker_sim import NET_INPUT_SIZE, encode_devices, hmd_yaw, hmd_yaws, yaw_rotate_6d

__all__ = [
    "ARCHITECTURE", "NetModel", "TrainConfig", "OrientationDataset", "HMD_FORWARD", "rot_to_6d", "rot_from_6d",
    "init_model", "forward", "train", "predict_stream", "angle_errors", "save_model", "load_model",
    "OrientationPredictor",
]

ARCHITECTURE = (NET_INPUT_SIZE, 32, 32, 6)
MAGIC = b"MMON"
HMD_FORWARD = "hmd-forward"


@dataclass(frozen=True, eq=False)
class NetModel:
    """Weights (float32) plus input normalization statistics and training metadata."""
    weights: tuple
    biases: tuple
    input_mean: np.ndarray
    input_std: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float32) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float32) for b in self.biases)
        dims = (ws[0].shape[0],) + tuple(w.shape[1] for w in ws)
        if dims != ARCHITECTURE or any(b.shape != (w.shape[1],) for w, b in zip(ws, bs)):
            raise InputError(f"network dimensions {dims} differ from {ARCHITECTURE}")
        mean = np.array(self.input_mean, dtype=np.float64)
        std = np.array(self.input_std, dtype=np.float64)
        if mean.shape != (NET_INPUT_SIZE,) or std.shape != (NET_INPUT_SIZE,) or np.any(std <= 0):
            raise InputError("input normalization must be 42 means and 42 positive deviations")
        for a in ws + bs + (mean, std):
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "input_mean", mean)
        object.__setattr__(self, "input_std", std)
        object.__setattr__(self, "metadata", dict(self.metadata))

    def params64(self):
        return [a.astype(np.float64) for pair in zip(self.weights, self.biases) for a in pair]

    def equals(self, other):
        mine = self.params64() + [self.input_mean, self.input_std]
        theirs = other.params64() + [other.input_mean, other.input_std]
        return all(np.array_equal(a, b) for a, b in zip(mine, theirs)) and self.metadata == other.metadata


@dataclass(frozen=True)
class TrainConfig:
    r: int = 50
    batch_size: int = 64
    learning_rate: float = 3e-4
    weight_decay: float = 0.035
    epochs: int = 20
    seed: int = 0
    decoupled_weight_decay: bool = True
    windows_per_epoch: int = None  # None: every window each epoch
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.r < 1:
            raise InputError("rollout length r must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0 or self.weight_decay < 0:
            raise InputError("invalid training hyper-parameters")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InputError("validation_fraction must be in [0, 1)")


def init_model(seed=0, input_mean=None, input_std=None):
    """He-uniform weights, zero biases; identity normalization unless given."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for a, b in zip(ARCHITECTURE[:-1], ARCHITECTURE[1:]):
        lim = np.sqrt(6.0 / a)
        ws.append(rng.uniform(-lim, lim, size=(a, b)))
        bs.append(np.zeros(b))
    mean = np.zeros(NET_INPUT_SIZE) if input_mean is None else input_mean
    std = np.ones(NET_INPUT_SIZE) if input_std is None else input_std
    return NetModel(ws, bs, mean, std, {"seed": int(seed)})


def _mlp(params, x):
    W1, b1, W2, b2, W3, b3 = params
    h1 = np.maximum(x @ W1 + b1, 0.0)
    h2 = np.maximum(h1 @ W2 + b2, 0.0)
    return h2 @ W3 + b3


def forward(model, x):
    """Raw 6D output for one input (42,) or a batch (n, 42); computed in float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != NET_INPUT_SIZE:
        raise InputError(f"network input must have {NET_INPUT_SIZE} components")
    if not np.all(np.isfinite(x)):
        raise InputError("network input contains non-finite values")
    return _mlp(model.params64(), (x - model.input_mean) / model.input_std)


# ---------------------------------------------------------------------------
# dataset


@dataclass(eq=False)
class OrientationDataset:
    """Per-frame encoded inputs of one or more traces, concatenated.

    ``base``: tracker part of the input in each frame's HMD ground frame.
    ``seed``: ground-truth orientation of the previous frame, in this frame's HMD frame.
    ``target``: ground-truth orientation of this frame, in this frame's HMD frame.
    ``frame_yaw``: HMD ground-frame yaw of each frame.
    """
    base: np.ndarray
    seed: np.ndarray
    target: np.ndarray
    frame_yaw: np.ndarray
    trace_ranges: list

    @classmethod
    def from_traces(cls, traces, yaws):
        traces, yaws = list(traces), [np.asarray(y, dtype=float) for y in yaws]
        if len(traces) != len(yaws) or not traces:
            raise InputError("need matching, non-empty lists of traces and ground-truth yaws")
        parts, ranges, start = [], [], 0
        for k, (tr, gt) in enumerate(zip(traces, yaws)):
            if gt.shape != (len(tr),):
                raise InputError(f"trace {k}: {len(tr)} frames but {gt.shape[0]} ground-truth yaws")
            if not np.all(np.isfinite(gt)):
                raise InputError(f"trace {k}: non-finite ground truth")
            psi = hmd_yaws(tr)
            base = encode_devices(tr.velocities, tr.angular_velocities, tr.rotations, psi)
            world = yaw_to_6d(gt)
            target = yaw_rotate_6d(world, -psi)
            seed = np.empty_like(target)
            seed[1:] = yaw_rotate_6d(world[:-1], -psi[1:])
            seed[0] = target[0]
            parts.append((base, seed, target, psi))
            ranges.append((start, start + len(tr)))
            start += len(tr)
        cat = [np.concatenate([p[i] for p in parts]) for i in range(4)]
        return cls(*cat, ranges)

    def inputs(self):
        return np.concatenate([self.base, self.seed], axis=1)

    def window_starts(self, r, part="train", validation_fraction=0.1):
        """Start frames s with s-1 and s+r-1 inside the same block of the same trace.

        Each trace is split into a leading training block and a trailing
        validation block (contiguous, no shuffling across time).
        """
        out = []
        for a, b in self.trace_ranges:
            cut = b - int(round((b - a) * validation_fraction))
            lo, hi = (a, cut) if part == "train" else (cut, b)
            out.append(np.arange(lo + 1, hi - r + 1))
        return np.concatenate(out).astype(np.int64) if out else np.zeros(0, np.int64)

    def frames(self, part="train", validation_fraction=0.1):
        out = []
        for a, b in self.trace_ranges:
            cut = b - int(round((b - a) * validation_fraction))
            out.append(np.arange(a + 1, cut) if part == "train" else np.arange(cut, b))
        return np.concatenate(out)


# ---------------------------------------------------------------------------
# rollout loss and gradient


def rollout_loss(params, mean, std, data, starts, r, grad=True):
    """MSE between the final rolled-out 6D output and its target, plus the gradient wrt params.

    The first step sees the ground-truth seed; each later step sees the
    previous raw output rotated into the current frame's HMD ground frame.
    """
    W1, b1, W2, b2, W3, b3 = params
    idx = starts[:, None] + np.arange(r)
    base = (data.base[idx] - mean[:36]) / std[:36]
    psi = data.frame_yaw[idx]
    xd = data.seed[starts]
    cache = []
    for j in range(r):
        xn = np.concatenate([base[:, j], (xd - mean[36:]) / std[36:]], axis=1)
        z1 = xn @ W1 + b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ W2 + b2
        h2 = np.maximum(z2, 0.0)
        out = h2 @ W3 + b3
        cache.append((xn, z1, h1, z2, h2))
        if j + 1 < r:
            xd = yaw_rotate_6d(out, psi[:, j] - psi[:, j + 1])
    err = out - data.target[idx[:, -1]]
    loss = float(np.mean(err ** 2))
    if not grad:
        return loss, None
    g = [np.zeros_like(p) for p in params]
    d_out = 2.0 * err / err.size
    for j in range(r - 1, -1, -1):
        xn, z1, h1, z2, h2 = cache[j]
        g[4] += h2.T @ d_out
        g[5] += d_out.sum(axis=0)
        dz2 = (d_out @ W3.T) * (z2 > 0)
        g[2] += h1.T @ dz2
        g[3] += dz2.sum(axis=0)
        dz1 = (dz2 @ W2.T) * (z1 > 0)
        g[0] += xn.T @ dz1
        g[1] += dz1.sum(axis=0)
        if j > 0:
            d_xd = (dz1 @ W1[36:].T) / std[36:]
            d_out = yaw_rotate_6d(d_xd, -(psi[:, j - 1] - psi[:, j]))
    return loss, g


class _Adam:
    def __init__(self, params, lr, wd, decoupled, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.wd, self.decoupled = lr, wd, decoupled
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if not self.decoupled:
                g = g + self.wd * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.decoupled:
                p *= 1.0 - self.lr * self.wd
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit_normalization(data, frames):
    x = data.inputs()[frames]
    if len(x) < 2:
        raise InputError("not enough frames to fit input normalization")
    std = x.std(axis=0)
    # near-constant inputs (e.g. the vertical part of a yaw-only seed) keep unit scale;
    # a floored deviation would amplify the fed-back prediction's small deviations
    return x.mean(axis=0), np.where(std > 1e-3, std, 1.0)


def train(traces, yaws, cfg=None, log=None):
    """Train on traces with aligned ground-truth body yaw. Returns (model, history)."""
    cfg = TrainConfig() if cfg is None else cfg
    data = traces if isinstance(traces, OrientationDataset) else OrientationDataset.from_traces(traces, yaws)
    starts = data.window_starts(cfg.r, "train", cfg.validation_fraction)
    if len(starts) == 0:
        raise InputError(f"dataset too short for rollout length r={cfg.r}")
    val_starts = data.window_starts(cfg.r, "val", cfg.validation_fraction)
    mean, std = fit_normalization(data, data.frames("train", cfg.validation_fraction))
    rng = np.random.default_rng(cfg.seed)
    params = init_model(cfg.seed).params64()
    opt = _Adam(params, cfg.learning_rate, cfg.weight_decay, cfg.decoupled_weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(starts)
        if cfg.windows_per_epoch is not None:
            order = order[:cfg.windows_per_epoch]
        total = 0.0
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            loss, grads = rollout_loss(params, mean, std, data, batch, cfg.r)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b // cfg.batch_size} (loss={loss}); "
                    f"try a lower learning rate (current {cfg.learning_rate})")
            opt.step(params, grads)
            total += loss * len(batch)
        row = {"epoch": epoch, "train_loss": total / len(order)}
        if len(val_starts):
            row["val_loss"] = _batched_loss(params, mean, std, data, val_starts, cfg.r)
        history.append(row)
        if log is not None:
            log(row)
    meta = {"r": cfg.r, "seed": cfg.seed, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate, "weight_decay": cfg.weight_decay,
            "decoupled_weight_decay": cfg.decoupled_weight_decay}
    return NetModel(params[0::2], params[1::2], mean, std, meta), history


def _batched_loss(params, mean, std, data, starts, r, chunk=4096):
    total = 0.0
    for b in range(0, len(starts), chunk):
        s = starts[b:b + chunk]
        total += rollout_loss(params, mean, std, data, s, r, grad=False)[0] * len(s)
    return total / len(starts)


# ---------------------------------------------------------------------------
# inference


def predict_stream(model, trace, initial_yaw=None, return_6d=False):
    """World body yaw per frame.

    ``model`` may be ``HMD_FORWARD`` for the baseline that reports the HMD's
    projected forward. The recurrence is seeded with the HMD forward unless
    ``initial_yaw`` is given.
    """
    psi = hmd_yaws(trace)
    if isinstance(model, str):
        if model != HMD_FORWARD:
            raise InputError(f"unknown baseline {model!r}")
        return (psi, yaw_to_6d(psi)) if return_6d else psi
    base = encode_devices(trace.velocities, trace.angular_velocities, trace.rotations, psi)
    base = (base - model.input_mean[:36]) / model.input_std[:36]
    W1, b1, W2, b2, W3, b3 = model.params64()
    # fold the (constant) base contribution of the first layer into one matmul
    pre = base @ W1[:36] + b1
    Wd = W1[36:] / model.input_std[36:, None]
    cd = model.input_mean[36:] @ Wd
    prev = yaw_to_6d(psi[0] if initial_yaw is None else float(initial_yaw))
    out6 = np.empty((len(trace), 6))
    for i in range(len(trace)):
        xd = yaw_rotate_6d(prev, -psi[i])
        h1 = np.maximum(pre[i] + xd @ Wd - cd, 0.0)
        h2 = np.maximum(h1 @ W2 + b2, 0.0)
        o = h2 @ W3 + b3
        prev = yaw_rotate_6d(o, psi[i])
        out6[i] = prev
    if not np.all(np.isfinite(out6)):
        raise InvariantViolation("orientation network produced non-finite output")
    try:
        yaw = yaw_of_6d(out6)
    except InputError as exc:
        raise InvariantViolation(f"orientation network produced a degenerate rotation: {exc}") from exc
    return (yaw, out6) if return_6d else yaw


class StreamPredictor:
    """Frame-by-frame counterpart of :func:`predict_stream` for live use."""

    def __init__(self, model, initial_yaw=None):
        self.model = model
        self._initial = initial_yaw
        self._prev = None
        self._psi = None
        if not isinstance(model, str):
            W1, b1, W2, b2, W3, b3 = model.params64()
            self._Wb = W1[:36] / model.input_std[:36, None]
            self._cb = b1 - model.input_mean[:36] @ self._Wb
            self._Wd = W1[36:] / model.input_std[36:, None]
            self._cd = model.input_mean[36:] @ self._Wd
            self._rest = (W2, b2, W3, b3)
        elif model != HMD_FORWARD:
            raise InputError(f"unknown baseline {model!r}")

    def update(self, frame):
        psi = hmd_yaw(frame.rotations[0], self._psi)
        self._psi = psi
        if isinstance(self.model, str):
            return psi
        if self._prev is None:
            self._prev = yaw_to_6d(psi if self._initial is None else float(self._initial))
        base = encode_devices(frame.velocities, frame.angular_velocities, frame.rotations, psi)
        xd = yaw_rotate_6d(self._prev, -psi)
        W2, b2, W3, b3 = self._rest
        h1 = np.maximum(base @ self._Wb + self._cb + xd @ self._Wd - self._cd, 0.0)
        h2 = np.maximum(h1 @ W2 + b2, 0.0)
        self._prev = yaw_rotate_6d(h2 @ W3 + b3, psi)
        if not np.all(np.isfinite(self._prev)):
            raise InvariantViolation("orientation network produced non-finite output")
        try:
            return float(yaw_of_6d(self._prev))
        except InputError as exc:
            raise InvariantViolation(f"orientation network produced a degenerate rotation: {exc}") from exc


def angle_errors(pred_yaw, true_yaw):
    """Absolute yaw difference in degrees, wrapped to [0, 180]."""
    return np.degrees(np.abs(quat.wrap_angle(np.asarray(pred_yaw) - np.asarray(true_yaw))))


# ---------------------------------------------------------------------------
# files


def _write_model(fh, model):
    storage.write_header(fh, MAGIC)
    meta = {"architecture": list(ARCHITECTURE), "metadata": model.metadata}
    arrays = {"input_mean": model.input_mean, "input_std": model.input_std}
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{k}"] = w
        arrays[f"b{k}"] = b
    storage.write_section(fh, MAGIC, meta, arrays)


def model_bytes(model):
    return storage.to_bytes(lambda fh: _write_model(fh, model))


def save_model(path, model):
    storage.atomic_write(path, model_bytes(model))


def model_from_bytes(data):
    fh = io.BytesIO(data)
    storage.read_header(fh, MAGIC)
    meta, arrays = storage.read_section(fh, MAGIC)
    if tuple(meta["architecture"]) != ARCHITECTURE:
        raise InputError(f"model architecture {meta['architecture']} is not supported")
    n = len(ARCHITECTURE) - 1
    return NetModel([arrays[f"W{k}"] for k in range(n)], [arrays[f"b{k}"] for k in range(n)],
                    arrays["input_mean"], arrays["input_std"], meta["metadata"])


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# estimator


class OrientationPredictor(BaseEstimator):
    """Estimator wrapper: ``fit(traces, yaws)`` then ``predict(traces)`` -> list of yaw arrays."""

    def __init__(self, r=50, batch_size=64, learning_rate=3e-4, weight_decay=0.035, epochs=20, seed=0,
                 decoupled_weight_decay=True, windows_per_epoch=None, validation_fraction=0.1):
        self.r = r
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.seed = seed
        self.decoupled_weight_decay = decoupled_weight_decay
        self.windows_per_epoch = windows_per_epoch
        self.validation_fraction = validation_fraction

    def config(self):
        return TrainConfig(**self.get_params())

    def fit(self, X, y):
        self.model_, self.history_ = train(X, y, self.config())
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise InputError("OrientationPredictor is not fitted")
        return [predict_stream(self.model_, tr) for tr in X]

    def score(self, X, y):
        """Negative mean angle error in degrees (higher is better)."""
        errs = [angle_errors(p, t) for p, t in zip(self.predict(X), y)]
        return -float(np.mean(np.concatenate(errs)))

    @classmethod
    def from_model(cls, model):
        est = cls(**{k: v for k, v in model.metadata.items() if k in cls().get_params()})
        est.model_ = model
        est.history_ = []
        return est


def train_config_dict(cfg):
    return asdict(cfg)
