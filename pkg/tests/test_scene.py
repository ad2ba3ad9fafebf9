import numpy as np
import pytest

from gazestream import imaging, scene, vision
from gazestream.errors import AssetError, DomainError

DISPLAY = vision.DisplayParams(width=112, height=112, pixels_per_degree=4.0)
CAMERA = scene.Camera()


@pytest.fixture(scope="module")
def patch722():
    return scene.patch_mesh_asset((19, 19), 4, seed=3)


@pytest.fixture(scope="module")
def hf64():
    return scene.heightfield_asset((8, 8), 3, seed=1)


def manual_asset(tri_lists, colors=None, levels=None):
    """Build a small hand-rolled asset from per-unit triangle vertex arrays."""
    verts, units = [], []
    levels = levels or max(len(t) for t in tri_lists)
    for uid, per_level in enumerate(tri_lists):
        tris = []
        for level_tris in per_level:
            idx = []
            for corner in level_tris.reshape(-1, 3):
                idx.append(len(verts))
                color = colors[uid] if colors else (0.6, 0.6, 0.6)
                verts.append([*corner, *color])
            tris.append(np.asarray(idx, dtype=np.int32).reshape(-1, 3))
        base = 40 * (1 + np.arange(levels, dtype=np.int64)) ** 2
        units.append(scene.Unit(id=uid, tris=tuple(tris), bytes_per_level=base))
    return scene.SceneAsset(kind=scene.MESH, levels=levels,
                            vertices=np.asarray(verts, dtype=np.float64),
                            units=tuple(units))


# -- ladders -----------------------------------------------------------------

def test_patch_mesh_slot_count(patch722):
    assert patch722.unit_count == 722
    assert patch722.slot_count == 2888
    for level in range(4):
        total = sum(u.tris[level].shape[0] for u in patch722.units)
        assert total == 722 * 4 ** level


def test_mesh_vertex_sets_are_nested(patch722):
    used = [np.unique(np.concatenate([u.tris[k] for u in patch722.units]))
            for k in range(4)]
    for k in range(3):
        assert np.isin(used[k], used[k + 1]).all()
        # 2x subsampling per axis quarters the vertex count
        ratio = used[k].size / used[k + 1].size
        assert 0.2 < ratio < 0.3


def test_mesh_bytes_strictly_increase(patch722):
    table = np.array([u.bytes_per_level for u in patch722.units])
    assert np.all(np.diff(table, axis=1) > 0)


def test_ladder_is_deterministic(patch722, tmp_path):
    again = scene.patch_mesh_asset((19, 19), 4, seed=3)
    assert again.scene_hash() == patch722.scene_hash()
    a, b = tmp_path / "a.gzsc", tmp_path / "b.gzsc"
    scene.save_scene(patch722, str(a))
    scene.save_scene(again, str(b))
    assert a.read_bytes() == b.read_bytes()


def test_degenerate_mesh_rejected():
    verts = np.zeros((3, 6))
    verts[:, 3:] = 0.5
    tris = np.array([[0, 1, 2]])
    with pytest.raises(AssetError):
        scene.build_mesh_ladder(verts, tris, 2)


def test_heightfield_level_structure(hf64):
    assert hf64.unit_count == 64
    for unit in hf64.units:
        assert [t.shape[0] for t in unit.tris] == [2, 8, 32]
    # level k vertices form a sublattice of level k+1
    for k in range(2):
        a = np.unique(np.concatenate([u.tris[k] for u in hf64.units]))
        b = np.unique(np.concatenate([u.tris[k + 1] for u in hf64.units]))
        assert np.isin(a, b).all()
        assert a.size == (8 * 2 ** k + 1) ** 2


def test_heightfield_grid_must_subsample():
    with pytest.raises(AssetError):
        scene.build_heightfield_ladder(np.zeros((10, 10)), 3)


def test_heightfield_new_vertex_conservation(hf64):
    # per-level per-unit "new vertex" byte shares add up to the lattice sizes
    from gazestream.constants import (
        TRIANGLE_RECORD_BYTES, UPGRADE_HEADER_BYTES, VERTEX_RECORD_BYTES)
    totals = np.zeros(3, dtype=np.int64)
    for u in hf64.units:
        deltas = np.diff(np.concatenate([[0], u.bytes_per_level]))
        tri_costs = TRIANGLE_RECORD_BYTES * np.array([2, 8, 32])
        verts = (deltas - UPGRADE_HEADER_BYTES - tri_costs) // VERTEX_RECORD_BYTES
        totals += verts
    lattice = np.array([(8 * 2 ** k + 1) ** 2 for k in range(3)])
    assert np.array_equal(np.cumsum(totals), lattice)


# -- rasterizer ---------------------------------------------------------------

def test_empty_scene_renders_background():
    empty = scene.SceneAsset(kind=scene.MESH, levels=2,
                             vertices=np.zeros((0, 6)), units=())
    frame = scene.rasterize(empty, scene.LoDState.uniform(empty), CAMERA, DISPLAY)
    assert np.all(frame.unit_ids == scene.BACKGROUND_ID)
    assert np.all(frame.luminance == 0.0)


def test_fullscreen_triangle_covers_every_pixel():
    tri = np.array([[[-20.0, -20.0, 5.0], [40.0, -20.0, 5.0], [-20.0, 40.0, 5.0]]])
    asset = manual_asset([[tri, tri]])
    frame = scene.rasterize(asset, scene.LoDState.uniform(asset), CAMERA, DISPLAY)
    assert np.all(frame.unit_ids == 0)
    expected = 0.6 * DISPLAY.luminance
    assert np.allclose(frame.luminance, expected, rtol=1e-9)


def test_id_histogram_matches_analytic_coverage():
    # two units split a full-screen quad down the middle; the shared vertical
    # edge may swing at most one pixel column either way
    z = 5.0
    e = 10.0
    left = np.array([[[-e, -e, z], [0.0, -e, z], [0.0, e, z]],
                     [[-e, -e, z], [0.0, e, z], [-e, e, z]]])
    right = np.array([[[0.0, -e, z], [e, -e, z], [e, e, z]],
                      [[0.0, -e, z], [e, e, z], [0.0, e, z]]])
    asset = manual_asset([[left, left], [right, right]],
                         colors=[(0.3, 0.3, 0.3), (0.8, 0.8, 0.8)])
    frame = scene.rasterize(asset, scene.LoDState.uniform(asset), CAMERA, DISPLAY)
    h, w = frame.unit_ids.shape
    assert (frame.unit_ids >= 0).all()          # watertight shared edge
    half = h * w / 2
    for uid in (0, 1):
        assert abs((frame.unit_ids == uid).sum() - half) <= h


def test_hypothetical_frame_masked_diff(hf64):
    state = scene.LoDState.uniform(hf64, 0)
    base = scene.rasterize(hf64, state, CAMERA, DISPLAY)
    hyp = scene.hypothetical_frame(hf64, state, 27, 2, CAMERA, DISPLAY)
    changed = (hyp.luminance != base.luminance) | (hyp.unit_ids != base.unit_ids)
    inside = base.footprint(27) | hyp.footprint(27)
    assert changed.any()
    assert not (changed & ~inside).any()


def test_hypothetical_same_level_is_identity(hf64):
    state = scene.LoDState.uniform(hf64, 1)
    base = scene.rasterize(hf64, state, CAMERA, DISPLAY)
    hyp = scene.hypothetical_frame(hf64, state, 5, 1, CAMERA, DISPLAY)
    assert np.array_equal(base.luminance, hyp.luminance)
    assert np.array_equal(base.unit_ids, hyp.unit_ids)


def test_rasterization_is_deterministic(hf64):
    state = scene.LoDState.uniform(hf64, 2)
    a = scene.rasterize(hf64, state, CAMERA, DISPLAY)
    b = scene.rasterize(hf64, state, CAMERA, DISPLAY)
    assert np.array_equal(a.luminance, b.luminance)
    assert np.array_equal(a.unit_ids, b.unit_ids)


def test_camera_inside_geometry_clips():
    # one triangle pokes behind the camera plane; must clip, not crash
    tri = np.array([[[0.0, -5.0, -1.0], [3.0, 5.0, 6.0], [-3.0, 5.0, 6.0]]])
    asset = manual_asset([[tri, tri]])
    frame = scene.rasterize(asset, scene.LoDState.uniform(asset), CAMERA, DISPLAY)
    assert (frame.unit_ids == 0).any()
    assert np.isfinite(frame.luminance).all()


def test_camera_validation():
    with pytest.raises(DomainError):
        scene.Camera(position=(np.nan, 0, 0))
    with pytest.raises(DomainError):
        scene.Camera(forward=(0, 0, 2))
    with pytest.raises(DomainError):
        scene.Camera(forward=(0, 1, 0))   # parallel to up


def test_lod_state_validation(hf64):
    with pytest.raises(DomainError):
        scene.LoDState.uniform(hf64, 9)
    bad = scene.LoDState(np.full(3, 0, dtype=np.int32))
    with pytest.raises(DomainError):
        bad.validate_for(hf64)
    over = scene.LoDState(np.full(hf64.unit_count, 7, dtype=np.int32))
    with pytest.raises(DomainError):
        over.validate_for(hf64)


def test_depth_order_front_wins():
    far = np.array([[[-9.0, -9.0, 8.0], [9.0, -9.0, 8.0], [0.0, 9.0, 8.0]]])
    near = np.array([[[-1.0, -1.0, 4.0], [1.0, -1.0, 4.0], [0.0, 1.0, 4.0]]])
    asset = manual_asset([[far, far], [near, near]],
                         colors=[(0.2, 0.2, 0.2), (0.9, 0.9, 0.9)])
    frame = scene.rasterize(asset, scene.LoDState.uniform(asset), CAMERA, DISPLAY)
    center = frame.unit_ids[DISPLAY.height // 2, DISPLAY.width // 2]
    assert center == 1
    assert (frame.unit_ids == 0).any()


# -- container and importers ---------------------------------------------------

def test_scene_roundtrip(tmp_path, hf64):
    path = tmp_path / "scene.gzsc"
    scene.save_scene(hf64, str(path))
    loaded = scene.load_scene(str(path))
    assert loaded.kind == hf64.kind
    assert loaded.levels == hf64.levels
    assert np.array_equal(loaded.vertices, hf64.vertices)
    for a, b in zip(loaded.units, hf64.units):
        assert np.array_equal(a.bytes_per_level, b.bytes_per_level)
        for ta, tb in zip(a.tris, b.tris):
            assert np.array_equal(ta, tb)
    assert loaded.scene_hash() == hf64.scene_hash()
    manifest = (tmp_path / "scene.gzsc.manifest.json").read_text()
    assert '"units": 64' in manifest


def test_scene_loader_rejects_corrupt_files(tmp_path):
    bad = tmp_path / "bad.gzsc"
    bad.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(AssetError):
        scene.load_scene(str(bad))
    with pytest.raises(AssetError):
        scene.load_scene(str(tmp_path / "missing.gzsc"))
    truncated = tmp_path / "trunc.gzsc"
    truncated.write_bytes(b"GZSC" + b"\x01\x00\x00\x00" + b"\x00\x01")
    with pytest.raises(AssetError):
        scene.load_scene(str(truncated))


def test_obj_import(tmp_path):
    obj = tmp_path / "quad.obj"
    obj.write_text("""# displaced quad grid
v -2 -2 10 0.2 0.2 0.2
v  2 -2 10 0.9 0.1 0.1
v  2  2 10.5 0.1 0.9 0.1
v -2  2 10 0.4 0.4 0.8
v  0  0 10.2
f 1 2 5
f 2 3 5
f 3 4 5
f 4 1 5
""")
    asset = scene.import_obj(str(obj), level_count=2, base_resolution=1)
    assert asset.unit_count >= 1
    assert asset.vertices.shape[0] == 5
    assert tuple(asset.vertices[4, 3:6]) == (0.5, 0.5, 0.5)   # default color
    frame = scene.rasterize(asset, scene.LoDState.uniform(asset, 1),
                            CAMERA, DISPLAY)
    assert (frame.unit_ids >= 0).any()


def test_obj_import_errors(tmp_path):
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nf 1 2 9\n")
    with pytest.raises(AssetError):
        scene.import_obj(str(bad), 2)
    bad.write_text("v 0 0 zero\n")
    with pytest.raises(AssetError):
        scene.import_obj(str(bad), 2)
    with pytest.raises(AssetError):
        scene.import_obj(str(tmp_path / "missing.obj"), 2)


def test_heightmap_import(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((17, 17))
    path = tmp_path / "land.pgm"
    imaging.write_pgm(str(path), img)
    asset = scene.import_heightmap(str(path), level_count=3)
    assert asset.kind == scene.HEIGHTFIELD
    assert asset.unit_count == 16
    assert asset.levels == 3


def test_gather_triangles_subset(hf64):
    state = scene.LoDState.uniform(hf64, 1)
    pos, luma, ids = scene.gather_triangles(hf64, state, only_units=[3, 9])
    assert set(np.unique(ids)) == {3, 9}
    assert pos.shape[0] == 16        # 8 triangles each at level 1
    assert luma.shape == (16, 3)
