import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmvr import benchmarks
from mmvr.mocap_io import GaitParams, synth_gait
from mmvr.pose_db import build_pose_db

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow,
                                                                        HealthCheck.function_scoped_fixture])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def walk_clip():
    """Straight constant-speed walk along +Z."""
    return synth_gait(GaitParams(speed=1.0, duration=6.0, seed=1))


@pytest.fixture(scope="session")
def recipe_clip():
    return synth_gait(benchmarks.random_recipe(11, duration=20.0))


@pytest.fixture(scope="session")
def small_db():
    """About 4k poses of varied locomotion."""
    return benchmarks.motion_database(4000)


@pytest.fixture(scope="session")
def walk_db(walk_clip):
    return build_pose_db([walk_clip])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance bookkeeping -------------------------------------------------------------

ACCEPTANCE_RESULTS = {}


def record_criterion(number, ok, detail):
    """Remember one acceptance verdict; all verdicts are listed at the end of the run."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[k])


# -- trained orientation models ------------------------------------------------------------

TRAIN_MINUTES = 20.0
TEST_MINUTES = 10.0
TRAIN_EPOCHS = 100
WINDOWS_PER_EPOCH = 20_000


@pytest.fixture(scope="session")
def orientation_benchmark():
    return benchmarks.orientation_set("train", TRAIN_MINUTES), benchmarks.orientation_set("test", TEST_MINUTES)


def _train_timed(data, r):
    import time

    from mmvr.orientation_net import TrainConfig, train
    traces, yaws = data
    t0 = time.perf_counter()
    model, history = train(traces, yaws, TrainConfig(r=r, epochs=TRAIN_EPOCHS, windows_per_epoch=WINDOWS_PER_EPOCH))
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def orientation_model(orientation_benchmark):
    """The r = 50 model and its training time in seconds."""
    return _train_timed(orientation_benchmark[0], 50)


@pytest.fixture(scope="session")
def orientation_model_r1(orientation_benchmark):
    return _train_timed(orientation_benchmark[0], 1)
