"""Command-line interface.

Exit status: 0 on success, 1 for bad input (files, flags, preconditions),
2 when an internal invariant is violated.
"""
import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import benchmarks, dbfile, storage
from .config import load_config
from .errors import InputError, InvariantViolation, TrainingDivergedError
from .feature_db import build_feature_db
from .harness import (GROUND_TRUTH, ablate, ablation_csv, bench_search, eval_csv, eval_orientation, replay)
from .matching import MatchDatabase
from .mocap_io import GaitParams, read_bvh, synth_gait, write_bvh
from .orientation_net import HMD_FORWARD, TrainConfig, load_model, save_model, train
from .pose_db import DEFAULT_CONTACT_THRESHOLD, build_pose_db
from .tracker_sim import read_ground_truth, read_trace, simulate_trackers, trace_to_jsonl, write_ground_truth

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        storage.atomic_write(path, text.encode("utf-8"))


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def _traces_with_truth(trace_paths, gt_paths, benchmark_split=None, minutes=None):
    if benchmark_split is not None and minutes:
        return benchmarks.orientation_set(benchmark_split, minutes)
    if not trace_paths:
        raise InputError("no traces given (use --trace/--ground-truth or --benchmark-minutes)")
    if len(trace_paths) != len(gt_paths):
        raise InputError(f"{len(trace_paths)} traces but {len(gt_paths)} ground-truth files")
    traces, yaws = [], []
    for tp, gp in zip(trace_paths, gt_paths):
        tr = read_trace(tp)
        times, yaw = read_ground_truth(gp)
        if len(yaw) != len(tr):
            raise InputError(f"{gp}: {len(yaw)} ground-truth rows for {len(tr)} trace frames in {tp}")
        traces.append(tr)
        yaws.append(yaw)
    return traces, yaws


def _orientation(args):
    if args.model:
        return load_model(args.model)
    return args.orientation


def _databases(specs, cfg):
    """``--db`` values are ``PATH`` (normal band) or ``BAND=PATH``."""
    out = {}
    for spec in specs:
        band, path = spec.split("=", 1) if "=" in spec else ("normal", spec)
        poses, features = dbfile.load_database(path)
        out[band] = MatchDatabase(poses, features, leaf_size=cfg.leaf_size, group_size=cfg.group_size)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_gait(args, cfg):
    if args.recipe is not None:
        params = benchmarks.random_recipe(args.recipe, args.duration, args.fps, knee_bend=args.knee_bend,
                                          decoupled_head=not args.coupled_head)
    else:
        params = GaitParams(speed=args.speed, heading=args.heading, head_sweep_amplitude=np.radians(args.head_sweep),
                            knee_bend=args.knee_bend or 0.0, duration=args.duration, fps=args.fps, seed=args.seed)
    _write_text(args.output, write_bvh(synth_gait(params)))
    return EXIT_OK


def cmd_build_db(args, cfg):
    clips = []
    for path in args.clips:
        try:
            clips.append(read_bvh(path))
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc}") from exc
    poses = build_pose_db(clips, args.contact_threshold)
    features = build_feature_db(poses)
    params = {
        "clips": [{"file": os.path.basename(p), "sha256": _sha256(p), "frames": c.n_frames}
                  for p, c in zip(args.clips, clips)],
        "contact_threshold": args.contact_threshold, "poses": len(poses),
        "valid_entries": int(features.valid.sum()), "fps": poses.fps,
    }
    dbfile.save_database(args.output, poses, features, params)
    print(f"wrote {args.output}: {len(poses)} poses, {params['valid_entries']} searchable")
    return EXIT_OK


def cmd_simulate_trackers(args, cfg):
    clip = read_bvh(args.clip)
    trace = simulate_trackers(clip)
    calib = args.calibration_height if args.calibration_height else float(trace.hmd_heights[0])
    trace = type(trace)(trace.times, trace.positions, trace.rotations, calibration_height=calib)
    _write_text(args.output, trace_to_jsonl(trace))
    if args.ground_truth:
        _write_text(args.ground_truth, write_ground_truth(benchmarks.body_yaw(clip), clip.times))
    return EXIT_OK


def cmd_train_orientation(args, cfg):
    traces, yaws = _traces_with_truth(args.trace, args.ground_truth, "train", args.benchmark_minutes)
    tcfg = TrainConfig(r=args.rollout, batch_size=args.batch_size, learning_rate=args.learning_rate,
                       weight_decay=args.weight_decay, epochs=args.epochs, seed=args.seed,
                       decoupled_weight_decay=not args.l2, windows_per_epoch=args.windows_per_epoch)

    def log(row):
        if not args.quiet:
            extra = f" val={row['val_loss']:.6f}" if "val_loss" in row else ""
            print(f"epoch {row['epoch']}: train={row['train_loss']:.6f}{extra}", file=sys.stderr)

    model, _ = train(traces, yaws, tcfg, log)
    save_model(args.output, model)
    return EXIT_OK


def cmd_eval_orientation(args, cfg):
    traces, yaws = _traces_with_truth(args.trace, args.ground_truth, "test", args.benchmark_minutes)
    source = load_model(args.model) if args.model else HMD_FORWARD
    _write_text(args.output, eval_csv(eval_orientation(source, traces, yaws, jobs=args.jobs)))
    return EXIT_OK


def cmd_replay(args, cfg):
    trace = read_trace(args.trace)
    gt = None
    if args.ground_truth:
        _, gt = read_ground_truth(args.ground_truth)
    orientation = _orientation(args)
    if orientation == GROUND_TRUTH and gt is None:
        raise InputError("--orientation ground-truth needs --ground-truth")
    res = replay(trace, _databases(args.db, cfg), orientation, cfg, args.calibration_height, gt)
    if args.output:
        storage.atomic_write(args.output, write_bvh(res.clip).encode("utf-8"))
    _write_text(args.report, res.report.to_csv())
    return EXIT_OK


def cmd_ablate_db(args, cfg):
    trace = read_trace(args.trace)
    gt = read_ground_truth(args.ground_truth)[1] if args.ground_truth else None
    orientation = _orientation(args)
    poses, _ = dbfile.load_database(args.db)
    rows = ablate(trace, poses, _floats(args.fractions), orientation, cfg, args.calibration_height, gt,
                  jobs=args.jobs)
    _write_text(args.output, ablation_csv(rows))
    return EXIT_OK


def cmd_bench_search(args, cfg):
    if args.db:
        poses, features = dbfile.load_database(args.db)
    else:
        poses = benchmarks.motion_database(args.synthetic_poses)
        features = None
    db = MatchDatabase(poses, features, leaf_size=cfg.leaf_size, group_size=cfg.group_size)
    result = bench_search(db, args.queries, args.seed)
    _write_text(args.output, json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if result["mismatches"] == 0 else EXIT_INVARIANT


# ---------------------------------------------------------------------------
# parser


def _orientation_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="orientation model file")
    g.add_argument("--orientation", default=HMD_FORWARD, choices=[HMD_FORWARD, GROUND_TRUTH],
                   help="built-in orientation source when no model is given")
    p.add_argument("--ground-truth", help="ground-truth body yaw CSV for angle errors")
    p.add_argument("--calibration-height", type=float, help="standing HMD height (m); default from trace metadata")


def build_parser():
    parser = _Parser(prog="mmvr", description="Full-body avatar animation from three-point VR tracking.")
    parser.add_argument("--config", help="runtime configuration file (TOML key = value)")
    parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for independent tasks")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth-gait", help="write a synthetic walking clip as BVH")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--recipe", type=int, help="use the randomized benchmark recipe with this seed")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--fps", type=float, default=60.0)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--heading", type=float, default=0.0, help="constant heading (rad)")
    p.add_argument("--head-sweep", type=float, default=0.0, help="head yaw sweep amplitude (deg)")
    p.add_argument("--knee-bend", type=float, default=None)
    p.add_argument("--coupled-head", action="store_true", help="recipe only: head follows the body")
    p.set_defaults(func=cmd_synth_gait)

    p = sub.add_parser("build-db", help="build a pose + feature database from BVH clips")
    p.add_argument("clips", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--contact-threshold", type=float, default=DEFAULT_CONTACT_THRESHOLD)
    p.set_defaults(func=cmd_build_db)

    p = sub.add_parser("simulate-trackers", help="derive an HMD + controller trace from a BVH clip")
    p.add_argument("clip")
    p.add_argument("-o", "--output", required=True, help="trace JSONL")
    p.add_argument("--ground-truth", help="also write ground-truth body yaw CSV")
    p.add_argument("--calibration-height", type=float, help="default: HMD height at the first frame")
    p.set_defaults(func=cmd_simulate_trackers)

    for name, func, helptext in (("train-orientation", cmd_train_orientation, "train the body orientation network"),
                                 ("eval-orientation", cmd_eval_orientation, "per-minute angle error CSV")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--trace", action="append", default=[], help="trace JSONL (repeatable)")
        p.add_argument("--ground-truth", action="append", default=[], help="matching ground-truth CSV")
        p.add_argument("--benchmark-minutes", type=float,
                       help="use this many minutes of the built-in synthetic benchmark instead of files")
        p.set_defaults(func=func)
        if func is cmd_train_orientation:
            d = TrainConfig()
            p.add_argument("-o", "--output", required=True, help="model file")
            p.add_argument("--rollout", type=int, default=d.r, help="rollout length r")
            p.add_argument("--epochs", type=int, default=d.epochs)
            p.add_argument("--batch-size", type=int, default=d.batch_size)
            p.add_argument("--learning-rate", type=float, default=d.learning_rate)
            p.add_argument("--weight-decay", type=float, default=d.weight_decay)
            p.add_argument("--windows-per-epoch", type=int, help="subsample training windows each epoch")
            p.add_argument("--l2", action="store_true", help="L2 penalty instead of decoupled weight decay")
            p.add_argument("--quiet", action="store_true")
        else:
            p.add_argument("--model", help="model file; omitted: baseline only")
            p.add_argument("-o", "--output", help="CSV path (default stdout)")

    p = sub.add_parser("replay", help="animate a trace; writes BVH and a per-frame report")
    p.add_argument("trace")
    p.add_argument("--db", action="append", required=True, help="database file, optionally BAND=PATH (repeatable)")
    _orientation_flags(p)
    p.add_argument("-o", "--output", help="output BVH")
    p.add_argument("--report", help="report CSV (default stdout)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("ablate-db", help="replay against per-clip prefixes of a database")
    p.add_argument("trace")
    p.add_argument("--db", required=True)
    p.add_argument("--fractions", default="0.1,0.25,1.0")
    _orientation_flags(p)
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_ablate_db)

    p = sub.add_parser("bench-search", help="latency of brute-force vs accelerated search")
    p.add_argument("--db", help="database file; omitted: synthetic database")
    p.add_argument("--synthetic-poses", type=int, default=25_000)
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("-o", "--output", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_bench_search)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise InputError("--jobs must be >= 1")
        cfg = load_config(args.config).with_overrides(seed=args.seed)
        return args.func(args, cfg)
    except InvariantViolation as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
