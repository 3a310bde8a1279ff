import numpy as np
import pytest
from sklearn.base import clone

from _oracles import finite_difference_check
from mmvr import benchmarks, quat
from mmvr.errors import InputError
from mmvr.mocap_io import GaitParams, RawClip, default_skeleton, synth_gait
from mmvr.orientation_net import (ARCHITECTURE, HMD_FORWARD, NetModel, OrientationDataset, OrientationPredictor,
                                  StreamPredictor, TrainConfig, angle_errors, forward, init_model, load_model,
                                  model_bytes, model_from_bytes, predict_stream, save_model, train)
from mmvr.orientation_net import fit_normalization
from mmvr.rotation6d import rot_from_6d
from mmvr.tracker_sim import hmd_yaws, simulate_trackers

GOLDEN_INPUT = np.sin(np.arange(42) * 0.7) * 1.5
GOLDEN_OUTPUT = [-1.3440830958702552, 1.3809063061732416, -1.9232610279146574, -3.5170887032871416,
                 0.1481286431328433, 1.5811680845039744]


@pytest.fixture(scope="module")
def small_set():
    return benchmarks.orientation_set("train", minutes=2.0, clip_seconds=30.0)


@pytest.fixture(scope="module")
def trained(small_set):
    traces, yaws = small_set
    model, _ = train(traces, yaws, TrainConfig(r=20, epochs=8, windows_per_epoch=4000))
    return model


def _static_trace(yaw, n=1200):
    sk = default_skeleton()
    pos = np.broadcast_to(sk.offsets, (n, len(sk), 3)).copy()
    pos[:, 0] = [0, 0.92, 0]
    rot = quat.identity((n, len(sk)))
    rot[:, 0] = quat.from_yaw(yaw)
    return simulate_trackers(RawClip(sk, 1 / 60, rot, pos))


def test_architecture():
    assert ARCHITECTURE == (42, 32, 32, 6)
    m = init_model(0)
    assert [w.shape for w in m.weights] == [(42, 32), (32, 32), (32, 6)]
    assert all(w.dtype == np.float32 for w in m.weights)


def test_golden_output():
    out = forward(init_model(0), GOLDEN_INPUT)
    assert np.allclose(out, GOLDEN_OUTPUT, atol=1e-6, rtol=0)
    assert np.array_equal(out, forward(init_model(0), GOLDEN_INPUT))


def test_zero_model_output_is_degenerate():
    z = init_model(0)
    zero = NetModel([np.zeros_like(w) for w in z.weights], [np.zeros_like(b) for b in z.biases],
                    z.input_mean, z.input_std, {})
    out = forward(zero, GOLDEN_INPUT)
    assert np.all(out == 0)
    with pytest.raises(InputError):
        rot_from_6d(out)


def test_forward_rejects_bad_input():
    with pytest.raises(InputError):
        forward(init_model(0), np.zeros(41))
    with pytest.raises(InputError):
        forward(init_model(0), np.full(42, np.nan))


def test_gradient_matches_finite_differences(small_set):
    traces, yaws = small_set
    data = OrientationDataset.from_traces(traces[:1], yaws[:1])
    mean, std = fit_normalization(data, data.frames())
    rng = np.random.default_rng(5)
    starts = rng.choice(data.window_starts(3), size=16, replace=False)
    for draw in range(3):
        params = [p.astype(np.float64) * rng.uniform(0.5, 1.5) for p in init_model(100 + draw).params64()]
        params = [p + rng.normal(0, 0.05, p.shape) for p in params]
        assert finite_difference_check(data, starts, 3, params, mean, std, rng=rng) < 1e-4


def test_constant_dataset_is_learned():
    tr = _static_trace(0.7)
    _, hist = train([tr], [np.full(len(tr), 0.7)], TrainConfig(r=5, epochs=50))
    assert hist[-1]["train_loss"] < 1e-4


def test_training_is_reproducible(small_set):
    traces, yaws = small_set
    cfg = TrainConfig(r=4, epochs=1, windows_per_epoch=500)
    a, _ = train(traces[:1], yaws[:1], cfg)
    b, _ = train(traces[:1], yaws[:1], cfg)
    assert a.equals(b)
    c, _ = train(traces[:1], yaws[:1], TrainConfig(r=4, epochs=1, windows_per_epoch=500, seed=1))
    assert not a.equals(c)


def test_training_errors(small_set):
    traces, yaws = small_set
    with pytest.raises(InputError):
        train(traces[:1], [yaws[0][:-1]], TrainConfig(epochs=1))
    with pytest.raises(InputError):
        TrainConfig(r=0)
    with pytest.raises(InputError):
        train([traces[0].slice(0, 30)], [yaws[0][:30]], TrainConfig(r=50, epochs=1))


def test_split_is_contiguous(small_set):
    traces, yaws = small_set
    data = OrientationDataset.from_traces(traces, yaws)
    for (a, b) in data.trace_ranges:
        tr_frames = data.frames("train")
        va_frames = data.frames("val")
        inside_t = tr_frames[(tr_frames >= a) & (tr_frames < b)]
        inside_v = va_frames[(va_frames >= a) & (va_frames < b)]
        assert inside_t.max() < inside_v.min()
        assert len(inside_v) == round(0.1 * (b - a))


def test_baseline_is_hmd_forward(recipe_clip):
    tr = simulate_trackers(recipe_clip)
    assert np.array_equal(predict_stream(HMD_FORWARD, tr), hmd_yaws(tr))


def test_stream_predictor_matches_batch(trained, recipe_clip):
    tr = simulate_trackers(recipe_clip).slice(0, 300)
    batch = predict_stream(trained, tr)
    sp = StreamPredictor(trained)
    live = np.array([sp.update(tr[i]) for i in range(len(tr))])
    assert np.max(np.abs(quat.wrap_angle(live - batch))) < 1e-9


def test_predictions_are_yaw_equivariant(trained, recipe_clip):
    tr = simulate_trackers(recipe_clip).slice(0, 600)
    base = predict_stream(trained, tr)
    rng = np.random.default_rng(1)
    for _ in range(20):
        yaw = rng.uniform(-np.pi, np.pi)
        moved = predict_stream(trained, tr.transformed(yaw, rng.uniform(-20, 20, 3)))
        assert np.max(np.abs(quat.wrap_angle(moved - base - yaw))) < 1e-4


@pytest.mark.slow
def test_aligned_straight_walk_gives_constant_prediction(orientation_model):
    model, _ = orientation_model
    for seed in (3, 4, 5):
        clip = synth_gait(GaitParams(speed=1.0, heading=0.4, duration=6.0, seed=seed))
        tr = simulate_trackers(clip)
        assert np.allclose(hmd_yaws(tr), 0.4, atol=1e-9)
        pred = predict_stream(model, tr)[60:]
        assert np.degrees(np.max(np.abs(quat.wrap_angle(pred - 0.4)))) < 2.0


def test_model_files_round_trip(trained, tmp_path):
    p = tmp_path / "m.mmon"
    save_model(str(p), trained)
    back = load_model(str(p))
    assert back.equals(trained)
    assert model_bytes(back) == model_bytes(trained)
    with pytest.raises(InputError):
        model_from_bytes(b"MMON" + b"\0" * 10)
    with pytest.raises(InputError):
        model_from_bytes(model_bytes(trained)[:-5])


def test_angle_errors_wrap():
    assert np.allclose(angle_errors([np.pi - 0.01], [-np.pi + 0.01]), np.degrees(0.02))


def test_estimator_api(small_set):
    traces, yaws = small_set
    est = OrientationPredictor(r=3, epochs=1, windows_per_epoch=200)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(InputError):
        est.predict(traces[:1])
    est.fit(traces[:1], yaws[:1])
    preds = est.predict(traces[:1])
    assert preds[0].shape == (len(traces[0]),)
    assert est.score(traces[:1], yaws[:1]) <= 0
    again = OrientationPredictor.from_model(est.model_)
    assert again.r == 3
