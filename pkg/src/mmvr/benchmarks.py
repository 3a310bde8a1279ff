"""Deterministic synthetic benchmark suite: random gait recipes, tracker traces and databases.

Everything here is a pure function of its arguments, so tests, the CLI and
the acceptance suite all see the same data.
"""
from dataclasses import replace

import numpy as np

from . import quat
from .mocap_io import GaitParams, synth_gait
from .pose_db import add_virtual_root, build_pose_db
from .tracker_sim import simulate_trackers

# distinct seed streams so the training and held-out sets never share a recipe
TRAIN_STREAM = 1_000
TEST_STREAM = 2_000
DATABASE_STREAM = 3_000
REPLAY_STREAM = 4_000


def _ramp_keys(rng, duration, hold, ramp, draw, start):
    """Keyframes that hold a value for ``hold`` seconds, then ramp to a new draw."""
    keys, t, v = [(0.0, start)], 0.0, start
    while t < duration:
        t += rng.uniform(*hold)
        keys.append((t, v))
        v = draw(v)
        t += rng.uniform(*ramp)
        keys.append((t, v))
    return tuple(keys)


def random_recipe(seed, duration=60.0, fps=60.0, knee_bend=None, decoupled_head=True, max_speed=1.8):
    """A varied locomotion recipe: turns, speed changes, side and backward steps, idle spells.

    With ``decoupled_head`` the head yaw wanders independently of the body
    (offsets up to about 70 degrees plus a slow sweep).
    """
    rng = np.random.default_rng(seed)

    def next_heading(v):
        return v + rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 2.5)

    heading = _ramp_keys(rng, duration, (1.0, 5.0), (0.4, 1.8), next_heading, rng.uniform(-np.pi, np.pi))

    moves = []
    for _ in range(64):
        kind = rng.choice(4, p=[0.55, 0.15, 0.15, 0.15])
        if kind == 0:
            moves.append((0.0, rng.uniform(0.4, max_speed)))
        elif kind == 1:
            moves.append((0.0, 0.0))
        elif kind == 2:
            moves.append((rng.choice([-1.0, 1.0]) * np.pi / 2, rng.uniform(0.3, 0.9)))
        else:
            moves.append((np.pi, rng.uniform(0.3, 1.0)))
    it = iter(moves)
    speed_keys, dir_keys, t = [], [], 0.0
    direction, speed = next(it)
    speed_keys.append((0.0, speed))
    dir_keys.append((0.0, direction))
    while t < duration:
        t += rng.uniform(1.5, 6.0)
        speed_keys.append((t, speed))
        dir_keys.append((t, direction))
        # slow down, change travel direction, speed up again
        new_dir, new_speed = next(it)
        t_mid = t + rng.uniform(0.3, 0.8)
        if new_dir != direction:
            speed_keys.append((t_mid, 0.0))
            dir_keys.append((t_mid, direction))
            dir_keys.append((t_mid + 0.05, new_dir))
        t = t_mid + rng.uniform(0.3, 0.8)
        speed_keys.append((t, new_speed))
        dir_keys.append((t, new_dir))
        direction, speed = new_dir, new_speed

    if decoupled_head:
        head = _ramp_keys(rng, duration, (0.5, 3.0), (0.3, 1.0),
                          lambda v: rng.uniform(-1.2, 1.2), 0.0)
        sweep = rng.uniform(0.0, 0.6)
    else:
        head, sweep = 0.0, 0.0
    return GaitParams(
        speed=tuple(speed_keys), heading=heading, move_direction=tuple(dir_keys), head_yaw=head,
        head_sweep_amplitude=sweep, head_sweep_frequency=rng.uniform(0.08, 0.35),
        stride_frequency=rng.uniform(0.75, 1.05),
        knee_bend=float(rng.choice([0.0, 0.0, 0.0, 0.25, 0.5])) if knee_bend is None else knee_bend,
        duration=duration, fps=fps, seed=int(seed),
        start_position=tuple(rng.uniform(-5.0, 5.0, 2)),
    )


def body_yaw(clip):
    """Ground-truth body orientation: yaw of the virtual root."""
    return quat.yaw_of(add_virtual_root(clip).rotations[:, 0])


def orientation_set(split, minutes=10.0, clip_seconds=60.0, fps=60.0):
    """``(traces, yaws)`` for the body-orientation benchmark.

    ``split`` is ``"train"`` or ``"test"``; the two come from disjoint seed streams.
    """
    stream = {"train": TRAIN_STREAM, "test": TEST_STREAM}[split]
    n = int(np.ceil(minutes * 60.0 / clip_seconds))
    traces, yaws = [], []
    for k in range(n):
        clip = synth_gait(random_recipe(stream + k, clip_seconds, fps))
        traces.append(simulate_trackers(clip))
        yaws.append(body_yaw(clip))
    return traces, yaws


def database_clips(n_poses=25_000, clip_seconds=20.0, fps=60.0, knee_bend=0.0, seed=0):
    """Clips for a motion database of about ``n_poses`` poses."""
    per = int(round(clip_seconds * fps)) + 1
    n = max(1, int(np.ceil(n_poses / per)))
    return [synth_gait(random_recipe(DATABASE_STREAM + 97 * seed + k, clip_seconds, fps,
                                     knee_bend=knee_bend, decoupled_head=False)) for k in range(n)]


def motion_database(n_poses=25_000, **kwargs):
    return build_pose_db(database_clips(n_poses, **kwargs))


def replay_clip(k=0, duration=60.0, fps=60.0, knee_bend=0.0):
    """A held-out performance to replay through the matcher."""
    return synth_gait(random_recipe(REPLAY_STREAM + k, duration, fps, knee_bend=knee_bend))


def idle_clip(duration=10.0, fps=60.0, seed=0, knee_bend=0.0):
    return synth_gait(GaitParams(speed=0.0, duration=duration, fps=fps, seed=seed, knee_bend=knee_bend))


def with_params(params, **changes):
    return replace(params, **changes)
