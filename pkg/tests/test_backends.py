import numpy as np
import pytest

from gazestream import scene, vision
from gazestream.backends import (AnalyticBackend, EccOnlyBackend,
                                 NeuralBackend, UniformBackend)
from gazestream.errors import ModelError
from gazestream.neural import (denormalize_targets, features_from,
                               init_model, predict)
from gazestream.perception import (GazeState, PerceptionParams,
                                   importance_bounds)
from gazestream.scheduler import plan_update
from gazestream.sweep import SceneSweep

DISPLAY = vision.DisplayParams(width=64, height=64, pixels_per_degree=4.0)
CAMERA = scene.Camera()
FIX = GazeState((1.0, -0.5), "fixation", 0.0)
SAC = GazeState((1.0, -0.5), "saccade", 400.0)


@pytest.fixture(scope="module")
def rig():
    asset = scene.heightfield_asset((4, 4), 3, seed=3)
    return asset, SceneSweep(asset, DISPLAY)


def test_analytic_matches_sweep_exactly(rig):
    asset, sweep = rig
    backend = AnalyticBackend(sweep, gaze_snap=0.0)
    got = backend.table(CAMERA, FIX)
    want = sweep.table(CAMERA, FIX)
    assert np.array_equal(got.values, want.values)
    assert np.array_equal(got.pixels, want.pixels)
    assert got.mode == "fixation"


def test_analytic_snaps_fixation_gaze(rig):
    _, sweep = rig
    backend = AnalyticBackend(sweep, gaze_snap=0.5)
    a = backend.table(CAMERA, GazeState((1.1, 0.1), "fixation", 0.0))
    b = backend.table(CAMERA, GazeState((0.9, -0.1), "fixation", 0.0))
    far = backend.table(CAMERA, GazeState((4.0, 0.0), "fixation", 0.0))
    assert a is b
    assert far is not a
    snapped = sweep.table(CAMERA, GazeState((1.0, 0.0), "fixation", 0.0))
    assert np.array_equal(a.values, snapped.values)


def test_analytic_saccade_table_shared_across_gazes(rig):
    _, sweep = rig
    backend = AnalyticBackend(sweep, gaze_snap=0.5)
    a = backend.table(CAMERA, SAC)
    b = backend.table(CAMERA, GazeState((-5.0, 3.0), "saccade", 300.0))
    assert a is b
    assert np.array_equal(a.values, sweep.table(CAMERA, SAC).values)


def test_footprint_counts_match_table_pixels(rig):
    _, sweep = rig
    counts = sweep.footprint_counts(CAMERA)
    assert np.array_equal(counts, sweep.table(CAMERA, FIX).pixels)
    assert np.all(counts[:, 0] == 0)


def test_neural_backend_mechanics(rig):
    asset, sweep = rig
    bounds = importance_bounds(sweep.spec, DISPLAY, sweep.retina,
                               sweep.params)
    model = init_model(asset.slot_count, asset.scene_hash(), bounds,
                       seed=5, hidden=(6,))
    backend = NeuralBackend(model, sweep)
    got = backend.table(CAMERA, SAC)
    pixels = sweep.footprint_counts(CAMERA)
    assert np.array_equal(got.pixels, pixels)
    assert got.mode == "saccade"
    feats = features_from(CAMERA, SAC, DISPLAY).astype(np.float32)
    expect = denormalize_targets(predict(model, feats).astype(np.float64),
                                 pixels, bounds)
    assert np.array_equal(got.values, expect)
    assert np.all(got.values[:, 0] == 0.0)


def test_neural_backend_rejects_wrong_scene(rig):
    asset, sweep = rig
    model = init_model(asset.slot_count, "e" * 64, (0.0, 1.0), hidden=(4,))
    with pytest.raises(ModelError):
        NeuralBackend(model, sweep)


def test_uniform_backend_is_breadth_first(rig):
    asset, _ = rig
    backend = UniformBackend(asset)
    fix = backend.table(CAMERA, FIX)
    sac = backend.table(CAMERA, SAC)
    assert np.array_equal(fix.values, sac.values)
    assert np.all(fix.values[:, 1] == 1.0)
    assert np.all(fix.values[:, 2] == 0.5)
    assert np.all(fix.values[:, 0] == 0.0)
    assert np.all(fix.pixels == 0)


def test_ecc_backend_ignores_mode_and_popping(rig):
    asset, sweep = rig
    backend = EccOnlyBackend(sweep, gaze_snap=0.0)
    fix = backend.table(CAMERA, FIX)
    sac = backend.table(CAMERA, SAC)
    assert np.array_equal(fix.values, sac.values)
    assert fix.mode == "fixation"
    # equals the full sweep with the popping weight turned off
    plain = SceneSweep(asset, DISPLAY,
                       params=PerceptionParams(lambda_popping=0.0))
    want = plain.table(CAMERA, FIX)
    assert fix.values == pytest.approx(want.values, rel=1e-12, abs=1e-12)
    assert np.array_equal(fix.pixels, want.pixels)


def test_all_backends_feed_the_planner(rig):
    asset, sweep = rig
    bounds = importance_bounds(sweep.spec, DISPLAY, sweep.retina,
                               sweep.params)
    model = init_model(asset.slot_count, asset.scene_hash(), bounds,
                       hidden=(6,))
    backends = [AnalyticBackend(sweep), NeuralBackend(model, sweep),
                UniformBackend(asset), EccOnlyBackend(sweep)]
    state = scene.LoDState.uniform(asset, 0)
    for backend in backends:
        plan = plan_update(backend.table(CAMERA, FIX), asset, state, 10_000)
        assert plan.total_bytes <= 10_000
        assert backend.name
