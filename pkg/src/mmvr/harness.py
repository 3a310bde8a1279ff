"""Evaluation procedures: replay, orientation error, database ablation and search benchmarking."""
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .config import RuntimeConfig
from .errors import InputError
from .matching import MatchDatabase, MotionMatcher, search_accel, search_brute
from .mocap_io import RawClip
from .orientation_net import HMD_FORWARD, StreamPredictor, angle_errors, predict_stream

GROUND_TRUTH = "ground-truth"


# ---------------------------------------------------------------------------
# replay


@dataclass(eq=False)
class ReplayReport:
    """Per-frame replay metrics. Angle errors are NaN when no ground truth was given."""
    times: np.ndarray
    position_error: np.ndarray
    angle_error: np.ndarray
    band: list
    index: np.ndarray
    searched: np.ndarray
    transitioned: np.ndarray
    forced: np.ndarray
    distinct_poses: np.ndarray
    target: np.ndarray
    root: np.ndarray
    feature_position: np.ndarray
    search_interval: int = 10
    window: int = 60

    def __len__(self):
        return len(self.times)

    @property
    def distinct_count(self):
        return int(self.distinct_poses[-1]) if len(self) else 0

    def summary(self):
        ang = self.angle_error[np.isfinite(self.angle_error)]
        return {
            "frames": len(self),
            "position_error_mean": float(np.mean(self.position_error)),
            "position_error_std": float(np.std(self.position_error)),
            "position_error_max": float(np.max(self.position_error)),
            "angle_error_mean": float(np.mean(ang)) if len(ang) else float("nan"),
            "angle_error_std": float(np.std(ang)) if len(ang) else float("nan"),
            "searches": int(self.searched.sum()),
            "forced_searches": int(self.forced.sum()),
            "transitions": int(self.transitioned.sum()),
            "distinct_poses": self.distinct_count,
        }

    def windowed(self, values):
        c = np.cumsum(np.insert(values, 0, 0.0))
        k = np.arange(1, len(values) + 1)
        lo = np.maximum(0, k - self.window)
        return (c[k] - c[lo]) / (k - lo)

    def to_csv(self):
        out = io.StringIO()
        out.write("frame,t,position_error,position_error_window,angle_error,band,index,searched,forced,"
                  "transitioned,distinct_poses,target_x,target_z,root_x,root_z,feature_px,feature_pz\n")
        win = self.windowed(self.position_error)
        for i in range(len(self)):
            out.write(f"{i},{self.times[i]:.6f},{self.position_error[i]:.6f},{win[i]:.6f},"
                      f"{self.angle_error[i]:.6f},{self.band[i]},{self.index[i]},{int(self.searched[i])},"
                      f"{int(self.forced[i])},{int(self.transitioned[i])},{self.distinct_poses[i]},"
                      f"{self.target[i, 0]:.6f},{self.target[i, 1]:.6f},{self.root[i, 0]:.6f},"
                      f"{self.root[i, 1]:.6f},{self.feature_position[i, 0]:.6f},{self.feature_position[i, 1]:.6f}\n")
        for k, v in self.summary().items():
            out.write(f"# {k},{v:.6f}\n" if isinstance(v, float) else f"# {k},{v}\n")
        return out.getvalue()


@dataclass(eq=False)
class ReplayResult:
    report: ReplayReport
    clip: RawClip
    steps: list = field(default_factory=list)


def orientation_source(source, trace, ground_truth=None):
    """Per-frame yaw provider: a NetModel, ``"hmd-forward"`` or ``"ground-truth"``."""
    if isinstance(source, str) and source == GROUND_TRUTH:
        if ground_truth is None:
            raise InputError("ground-truth orientation requested but none given")
        gt = np.asarray(ground_truth, dtype=float)
        return lambda i, frame: float(gt[i])
    sp = StreamPredictor(source)
    return lambda i, frame: sp.update(frame)


def replay(trace, databases, orientation=HMD_FORWARD, config=None, calibration_height=None, ground_truth=None,
           matcher=None, initial_index=None, initial_root=None, keep_steps=False):
    """Run predict, match and adjust over a whole trace.

    ``databases`` is ``{band: PoseDatabase | MatchDatabase}`` (or a single one
    for the normal band). Returns the animation and a :class:`ReplayReport`.
    """
    cfg = RuntimeConfig() if config is None else config
    calib = trace.calibration_height if calibration_height is None else calibration_height
    if calib is None:
        raise InputError("calibration height missing: not in the trace metadata and not given")
    if ground_truth is not None and len(ground_truth) != len(trace):
        raise InputError(f"misaligned ground truth: {len(ground_truth)} values for {len(trace)} frames")
    mm = matcher if matcher is not None else MotionMatcher(cfg).fit(databases)
    predict = orientation_source(orientation, trace, ground_truth)

    n = len(trace)
    yaw_pred = np.empty(n)
    steps = []
    results = []
    for i in range(n):
        frame = trace[i]
        try:
            yaw_pred[i] = predict(i, frame)
            r = (mm.reset(frame, yaw_pred[i], calib, initial_index, initial_root) if i == 0
                 else mm.step(frame, yaw_pred[i]))
        except InputError as exc:
            raise InputError(f"frame {i}: {exc}") from exc
        results.append(r)
        if keep_steps:
            steps.append(r)

    seen, distinct = set(), np.empty(n, dtype=np.int64)
    for i, r in enumerate(results):
        seen.add((r.band, r.index))
        distinct[i] = len(seen)
    fpos = np.array([mm.databases_[r.band].features.raw[r.index, 19:21] for r in results])
    ang = angle_errors(yaw_pred, ground_truth) if ground_truth is not None else np.full(n, np.nan)
    report = ReplayReport(
        times=np.asarray(trace.times, float), position_error=np.array([r.position_error for r in results]),
        angle_error=np.asarray(ang, float), band=[r.band for r in results],
        index=np.array([r.index for r in results]), searched=np.array([r.searched for r in results]),
        transitioned=np.array([r.transitioned for r in results]), forced=np.array([r.forced for r in results]),
        distinct_poses=distinct, target=np.array([r.target for r in results]),
        root=np.array([r.root for r in results]), feature_position=fpos,
        search_interval=cfg.search_interval, window=max(1, int(round(mm.fps_))))
    dt = float(np.median(np.diff(trace.times))) if n > 1 else 1.0 / mm.fps_
    clip = RawClip(mm.skeleton_, dt, quat.normalize(np.array([r.local_rotations for r in results])),
                   np.array([r.local_positions for r in results]))
    return ReplayResult(report, clip, steps)


# ---------------------------------------------------------------------------
# orientation evaluation


def _trace_errors(task):
    source, trace, yaw = task
    return angle_errors(predict_stream(source, trace), yaw)


def eval_orientation(source, traces, yaws, minute=60.0, jobs=1):
    """Per-minute and overall angle error (degrees) of ``source`` and of the HMD-forward baseline.

    Returns rows ``(predictor, trace, minute, frames, mean, std)``; ``minute`` is -1 for the overall row.
    """
    for k, (tr, gt) in enumerate(zip(traces, yaws)):
        if len(gt) != len(tr):
            raise InputError(f"trace {k}: {len(tr)} frames but {len(gt)} ground-truth values")
    rows = []
    sources = [("model", source)] if not (isinstance(source, str) and source == HMD_FORWARD) else []
    sources.append(("hmd-forward", HMD_FORWARD))
    for name, src in sources:
        errs = run_tasks(_trace_errors, [(src, tr, gt) for tr, gt in zip(traces, yaws)], jobs)
        for k, (tr, e) in enumerate(zip(traces, errs)):
            bucket = np.floor((tr.times - tr.times[0]) / minute).astype(int)
            for m in np.unique(bucket):
                sel = e[bucket == m]
                rows.append((name, k, int(m), int(sel.size), float(sel.mean()), float(sel.std())))
        allerr = np.concatenate(errs)
        rows.append((name, -1, -1, int(allerr.size), float(allerr.mean()), float(allerr.std())))
    return rows


def eval_csv(rows):
    out = ["predictor,trace,minute,frames,mean_deg,std_deg"]
    out += [f"{p},{t},{m},{n},{mu:.6f},{sd:.6f}" for p, t, m, n, mu, sd in rows]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# ablation


def _ablate_one(args):
    trace, poses, fraction, orientation, config, calibration_height, ground_truth = args
    sub = poses.subset(fraction) if fraction < 1.0 else poses
    rep = replay(trace, {"normal": sub}, orientation, config, calibration_height, ground_truth).report
    s = rep.summary()
    return (fraction, len(sub), s["position_error_mean"], s["position_error_std"], s["distinct_poses"])


def ablate(trace, poses, fractions=(0.1, 0.25, 1.0), orientation=HMD_FORWARD, config=None,
           calibration_height=None, ground_truth=None, jobs=1):
    """Replay against per-clip prefixes of the database; one row per fraction."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise InputError(f"fraction {f} outside (0, 1]")
    tasks = [(trace, poses, f, orientation, config, calibration_height, ground_truth) for f in fractions]
    return run_tasks(_ablate_one, tasks, jobs)


def ablation_csv(rows):
    out = ["fraction,poses,position_error_mean,position_error_std,distinct_poses"]
    out += [f"{f},{n},{m:.6f},{s:.6f},{d}" for f, n, m, s, d in rows]
    return "\n".join(out) + "\n"


def run_tasks(fn, tasks, jobs=1):
    """Map ``fn`` over independent tasks, in order; processes when ``jobs`` > 1."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


# ---------------------------------------------------------------------------
# search benchmark


def random_queries(features, n, seed=0):
    """Queries drawn around real entries: a random valid row plus Gaussian noise (normalized space)."""
    rng = np.random.default_rng(seed)
    ids = features.valid_indices
    base = features.normalized[rng.choice(ids, size=n)]
    return base + rng.normal(0.0, 0.5, size=base.shape)


def bench_search(db, n_queries=1000, seed=0, weights=None):
    """Latency percentiles (ms) for brute force and accelerated search, plus an agreement check."""
    if not isinstance(db, MatchDatabase):
        db = MatchDatabase(db)
    qs = random_queries(db.features, n_queries, seed)
    search_brute(qs[0], db.features, weights, db.index)
    search_accel(qs[0], db.features, db.index, weights)
    tb, ta, mismatches, stats = [], [], 0, {}
    for q in qs:
        t0 = time.perf_counter()
        rb = search_brute(q, db.features, weights, db.index)
        t1 = time.perf_counter()
        ra = search_accel(q, db.features, db.index, weights, stats=stats)
        t2 = time.perf_counter()
        tb.append(t1 - t0)
        ta.append(t2 - t1)
        mismatches += rb != ra
    tb, ta = np.array(tb) * 1e3, np.array(ta) * 1e3
    return {
        "entries": len(db.index), "queries": n_queries,
        "brute_p50_ms": float(np.percentile(tb, 50)), "brute_p99_ms": float(np.percentile(tb, 99)),
        "accel_p50_ms": float(np.percentile(ta, 50)), "accel_p99_ms": float(np.percentile(ta, 99)),
        "evaluated_fraction": stats["evaluated"] / stats["entries"], "mismatches": int(mismatches),
    }
