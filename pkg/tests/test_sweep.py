import numpy as np
import pytest

from gazestream import scene, scheduler, vision
from gazestream.perception import GazeState, static_importance_field
from gazestream.scene import raster
from gazestream.sweep import SceneSweep

DISPLAY = vision.DisplayParams(width=112, height=112, pixels_per_degree=4.0)
CAMERA = scene.Camera()
FIX = GazeState(gaze=(3.0, -2.0), mode="fixation", speed=0.0)
SAC = GazeState(gaze=(0.0, 0.0), mode="saccade", speed=400.0)


@pytest.fixture(scope="module")
def hf():
    return scene.heightfield_asset((8, 8), 3, seed=1)


@pytest.fixture(scope="module")
def patch():
    return scene.patch_mesh_asset((5, 5), 3, seed=2)


# -- layered rasterization ----------------------------------------------------

def test_layer_one_matches_plain_render(hf):
    pos, luma, ids = scene.gather_triangles(hf, scene.LoDState.uniform(hf))
    layers = scene.render_layers(pos, luma, ids, CAMERA, DISPLAY)
    lum, idb, invz = scene.render_triangles(pos, luma, ids, CAMERA, DISPLAY)
    assert np.array_equal(layers.lum1, lum)
    assert np.array_equal(layers.id1, idb)
    assert np.array_equal(layers.invz1, invz)


def test_layer_two_is_distinct_unit(hf):
    pos, luma, ids = scene.gather_triangles(hf, scene.LoDState.uniform(hf))
    layers = scene.render_layers(pos, luma, ids, CAMERA, DISPLAY)
    filled = layers.id2 != scene.BACKGROUND_ID
    assert np.all(layers.id1[filled] != layers.id2[filled])
    assert np.all(layers.invz2[filled] <= layers.invz1[filled])


def test_fragment_table_rows_unique_and_sorted(hf):
    pos, luma, ids = scene.gather_triangles(hf, scene.LoDState.uniform(hf, 1))
    table = scene.fragment_table(pos, luma, ids, CAMERA, DISPLAY)
    key = table.unit * (DISPLAY.height * DISPLAY.width) + table.pix
    assert np.all(np.diff(key) > 0)
    total = sum(hi - lo for lo, hi in table.slices.values())
    assert total == table.pix.size


def recompose(layers, table, unit, shape):
    out = layers.lum1.reshape(-1).copy()
    outz = layers.invz1.reshape(-1).copy()
    mine = layers.id1.reshape(-1) == unit
    out[mine] = layers.lum2.reshape(-1)[mine]
    outz[mine] = layers.invz2.reshape(-1)[mine]
    pix, invz, lum = table.rows(unit)
    win = invz > outz[pix]
    out[pix[win]] = lum[win]
    return out.reshape(shape)


@pytest.mark.parametrize("kind", ["hf", "patch"])
def test_single_unit_recomposition_is_exact(kind, hf, patch):
    asset = hf if kind == "hf" else patch
    state = scene.LoDState.uniform(asset, 0)
    pos, luma, ids = scene.gather_triangles(asset, state)
    layers = scene.render_layers(pos, luma, ids, CAMERA, DISPLAY)
    rng = np.random.default_rng(0)
    for _ in range(12):
        unit = int(rng.integers(0, asset.unit_count))
        level = int(rng.integers(1, asset.levels))
        p2, l2, i2 = scene.gather_triangles(
            asset, scene.LoDState.uniform(asset, level))
        table = scene.fragment_table(p2, l2, i2, CAMERA, DISPLAY)
        rec = recompose(layers, table, unit,
                        (DISPLAY.height, DISPLAY.width)) * DISPLAY.luminance
        hyp = scene.hypothetical_frame(asset, state, unit, level,
                                       CAMERA, DISPLAY)
        assert np.array_equal(rec, hyp.luminance)


def test_batched_layers_match_single_batch(hf, monkeypatch):
    pos, luma, ids = scene.gather_triangles(hf, scene.LoDState.uniform(hf, 2))
    whole = scene.render_layers(pos, luma, ids, CAMERA, DISPLAY)
    monkeypatch.setattr(raster, "_BATCH_FRAGMENTS", 5000)
    parts = scene.render_layers(pos, luma, ids, CAMERA, DISPLAY)
    for name in ("id1", "invz1", "lum1", "id2", "invz2", "lum2"):
        assert np.array_equal(getattr(whole, name), getattr(parts, name)), name


def test_batched_fragment_table_matches(hf, monkeypatch):
    pos, luma, ids = scene.gather_triangles(hf, scene.LoDState.uniform(hf, 2))
    whole = scene.fragment_table(pos, luma, ids, CAMERA, DISPLAY)
    monkeypatch.setattr(raster, "_BATCH_FRAGMENTS", 5000)
    parts = scene.fragment_table(pos, luma, ids, CAMERA, DISPLAY)
    assert np.array_equal(whole.pix, parts.pix)
    assert np.array_equal(whole.unit, parts.unit)
    assert np.array_equal(whole.invz, parts.invz)
    assert np.array_equal(whole.lum, parts.lum)


# -- sweep tables --------------------------------------------------------------

@pytest.mark.parametrize("gs", [FIX, SAC], ids=["fixation", "saccade"])
def test_sweep_matches_exact_slots_heightfield(hf, gs):
    sweep = SceneSweep(hf, DISPLAY)
    tab = sweep.table(CAMERA, gs)
    assert np.all(tab.values[:, 0] == 0)
    for k in range(1, hf.levels):
        state = scene.LoDState.uniform(hf, k - 1)
        frame = scene.rasterize(hf, state, CAMERA, DISPLAY)
        for u in range(0, hf.unit_count, 7):
            exact = scheduler.unit_sensitivity(frame, gs, hf, state, u, k,
                                               CAMERA, DISPLAY)
            assert tab.values[u, k] == pytest.approx(exact, rel=1e-9, abs=1e-12)
            assert tab.pixels[u, k] == int(frame.footprint(u).sum())


def test_sweep_matches_exact_slots_mesh(patch):
    sweep = SceneSweep(patch, DISPLAY)
    tab = sweep.table(CAMERA, FIX)
    state = scene.LoDState.uniform(patch, 0)
    frame = scene.rasterize(patch, state, CAMERA, DISPLAY)
    for u in range(0, patch.unit_count, 11):
        exact = scheduler.unit_sensitivity(frame, FIX, patch, state, u, 1,
                                           CAMERA, DISPLAY)
        assert tab.values[u, 1] == pytest.approx(exact, rel=1e-9, abs=1e-12)


def test_sweep_saccade_tables_gaze_invariant(hf):
    sweep = SceneSweep(hf, DISPLAY)
    a = sweep.table(CAMERA, SAC)
    b = sweep.table(CAMERA, GazeState(gaze=(-9.0, 7.0), mode="saccade",
                                      speed=300.0))
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.pixels, b.pixels)


def test_sweep_deterministic_across_instances(hf):
    a = SceneSweep(hf, DISPLAY).table(CAMERA, FIX)
    b = SceneSweep(hf, DISPLAY).table(CAMERA, FIX)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.pixels, b.pixels)


def test_sweep_flat_scene_reduces_to_static_sums():
    flat = scene.build_heightfield_ladder(np.zeros((33, 33)), 3,
                                          spacing=1.0, depth=64.0)
    sweep = SceneSweep(flat, DISPLAY)
    tab = sweep.table(CAMERA, FIX)
    frame = scene.rasterize(flat, scene.LoDState.uniform(flat), CAMERA, DISPLAY)
    e = static_importance_field(FIX.gaze, DISPLAY)
    for u in range(0, flat.unit_count, 5):
        fp = frame.footprint(u)
        for k in range(1, flat.levels):
            assert tab.values[u, k] == pytest.approx(e[fp].sum(), rel=1e-12)
    sac = sweep.table(CAMERA, SAC)
    assert np.all(sac.values == 0.0)


def test_sweep_empty_view_all_zero(hf):
    away = scene.Camera(forward=(0.0, 0.0, -1.0))
    tab = SceneSweep(hf, DISPLAY).table(away, FIX)
    assert np.all(tab.values == 0.0)
    assert np.all(tab.pixels == 0)


def test_camera_cache_eviction_keeps_results(hf):
    sweep = SceneSweep(hf, DISPLAY, max_cameras=1)
    t1 = sweep.table(CAMERA, FIX)
    other = scene.Camera(position=(0.5, 0.0, 0.0))
    sweep.table(other, FIX)                      # evicts the first camera
    t2 = sweep.table(CAMERA, FIX)                # rebuilt from scratch
    assert np.array_equal(t1.values, t2.values)
