"""LoD ladder construction.

Two builders share the same output contract (a ``SceneAsset``):

* ``build_mesh_ladder`` coarsens an arbitrary triangle mesh by nested vertex
  clustering.  Every coarser level keeps a deterministic subset of the finer
  level's vertices (cluster representatives are picked from the child set),
  so no vertex position is ever invented.  The coarsest level's triangles
  define the unit partition.
* ``build_heightfield_ladder`` treats a regular height grid as a mipmap:
  units are the coarsest texels and level k triangulates each texel from the
  grid subsampled at stride 2^(L-1-k).

Byte accounting is shared: upgrading a unit to level k ships a fixed header,
the level's triangle records and the vertices that first appear at that
level, so cumulative sizes strictly increase by construction.
"""

from __future__ import annotations

import numpy as np

from ..constants import (
    TRIANGLE_RECORD_BYTES,
    UPGRADE_HEADER_BYTES,
    VERTEX_RECORD_BYTES,
)
from ..errors import AssetError
from .types import HEIGHTFIELD, MESH, SceneAsset, Unit


def _cumulative_bytes(tri_counts: list[int], new_vertex_counts: list[int]) -> np.ndarray:
    deltas = [
        UPGRADE_HEADER_BYTES
        + TRIANGLE_RECORD_BYTES * t
        + VERTEX_RECORD_BYTES * v
        for t, v in zip(tri_counts, new_vertex_counts)
    ]
    return np.cumsum(deltas).astype(np.int64)


# -- mesh ladder --------------------------------------------------------------

def _representatives(members: np.ndarray, positions: np.ndarray,
                     resolution: int, lo: np.ndarray, extent: float,
                     nv: int) -> np.ndarray:
    """Map member vertices to one representative per cluster cell.

    Cells are cubes of edge extent/resolution whose centers sit on the
    lattice lo + k*edge (vertices snap to the nearest lattice point); the
    representative is the member closest to its cell center, lowest index
    on ties.  Snapping to centers keeps regular-grid corners exactly on
    their own representatives.
    """
    edge = extent / resolution
    idx = np.floor((positions - lo) / edge + 0.5).astype(np.int64)
    np.clip(idx, 0, resolution, out=idx)
    n = resolution + 1
    cells = (idx[:, 0] * n + idx[:, 1]) * n + idx[:, 2]
    d2 = np.sum((positions - (lo + idx * edge)) ** 2, axis=1)
    order = np.lexsort((members, d2[members], cells[members]))
    sorted_members = members[order]
    sorted_cells = cells[members][order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_cells[1:] != sorted_cells[:-1]
    rep_of_cell_members = sorted_members[np.maximum.accumulate(
        np.where(first, np.arange(len(order)), 0))]
    rep = np.full(nv, -1, dtype=np.int64)
    rep[sorted_members] = rep_of_cell_members
    return rep


def build_mesh_ladder(vertices: np.ndarray, triangles: np.ndarray,
                      level_count: int, base_resolution: int = 8) -> SceneAsset:
    """Coarsen a triangle mesh into a nested LoD ladder.

    vertices: (V, 6) float array, position + vertex color.
    triangles: (T, 3) integer vertex indices (the finest level).
    level_count: number of LoD levels; the finest level is the input mesh.
    base_resolution: clustering grid cells per axis at the coarsest level;
        each finer level doubles it.

    The clustering grid uses cube cells sized by the largest bounding-box
    extent, so flat assets do not over-fragment along their thin axis.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    if level_count < 2:
        raise AssetError("a ladder needs at least 2 levels")
    if vertices.ndim != 2 or vertices.shape[1] != 6:
        raise AssetError("mesh vertices must be (V, 6): position + color")
    if triangles.ndim != 2 or triangles.shape[1] != 3 or triangles.shape[0] == 0:
        raise AssetError("mesh triangles must be a non-empty (T, 3) table")

    pos = vertices[:, :3]
    nv = pos.shape[0]
    lo = pos.min(axis=0)
    extent = float((pos.max(axis=0) - lo).max())
    if extent <= 0.0:
        raise AssetError("degenerate mesh: zero spatial extent")
    a, b, c = triangles.T
    area2 = np.linalg.norm(np.cross(pos[b] - pos[a], pos[c] - pos[a]), axis=1)
    if area2.sum() <= 0.0:
        raise AssetError("degenerate mesh: zero total area")

    # rep_maps[k][v] = index of the vertex standing in for v at level k.
    # Built finest-to-coarsest; each level clusters the previous level's
    # representative set, which keeps the vertex sets nested.
    rep_maps = {level_count - 1: np.arange(nv, dtype=np.int64)}
    for level in range(level_count - 2, -1, -1):
        child_reps = np.unique(rep_maps[level + 1])
        rep_of = _representatives(child_reps, pos,
                                  base_resolution * (2 ** level), lo, extent, nv)
        rep_maps[level] = rep_of[rep_maps[level + 1]]

    # Per-level triangle tables, deduplicated by unordered vertex triple.
    # provenance[k][j] = lowest original-triangle index that produced
    # deduped triangle j of level k.
    level_tris: dict[int, np.ndarray] = {}
    level_prov: dict[int, np.ndarray] = {}
    tri_of_original: dict[int, np.ndarray] = {}
    for level in range(level_count):
        mapped = rep_maps[level][triangles]
        ok = ((mapped[:, 0] != mapped[:, 1])
              & (mapped[:, 1] != mapped[:, 2])
              & (mapped[:, 0] != mapped[:, 2]))
        keys = np.sort(mapped, axis=1)
        # stable first-occurrence dedup among surviving triangles
        surviving = np.flatnonzero(ok)
        _, first_idx, inverse = np.unique(
            keys[surviving], axis=0, return_index=True, return_inverse=True)
        count = len(first_idx)
        if count == 0:
            raise AssetError(f"mesh collapses entirely at level {level}")
        order = np.argsort(first_idx, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(count)
        dedup_ids = rank[inverse]
        # keep the orientation and provenance of the first producer
        prov = np.full(count, triangles.shape[0], dtype=np.int64)
        np.minimum.at(prov, dedup_ids, surviving)
        level_tris[level] = mapped[prov]
        level_prov[level] = prov
        full = np.full(triangles.shape[0], -1, dtype=np.int64)
        full[surviving] = dedup_ids
        tri_of_original[level] = full

    # Units are the coarsest-level triangles.  home[t] = unit owning original
    # triangle t: its own level-0 triangle when the triple survives (this is
    # what guarantees every unit stays non-empty at every level), otherwise
    # the unit with the nearest coarse-triangle centroid.
    unit_count = level_tris[0].shape[0]
    home = tri_of_original[0].copy()
    orphans = np.flatnonzero(home < 0)
    if orphans.size:
        unit_centroids = pos[level_tris[0]].mean(axis=1)
        orphan_centroids = pos[triangles[orphans]].mean(axis=1)
        for s in range(0, orphans.size, 4096):
            block = orphan_centroids[s:s + 4096]
            d2 = np.sum((block[:, None, :] - unit_centroids[None]) ** 2, axis=2)
            home[orphans[s:s + 4096]] = np.argmin(d2, axis=1)

    # Assign every deduped triangle of every level to a unit.  All originals
    # mapping to one deduped triangle share their level-0 triple, so the
    # first producer's home is representative.
    unit_tris: list[list[np.ndarray]] = [[] for _ in range(unit_count)]
    tri_unit: dict[int, np.ndarray] = {}
    for level in range(level_count):
        owner = home[level_prov[level]]
        tri_unit[level] = owner
        for u in range(unit_count):
            unit_tris[u].append(level_tris[level][owner == u])
    for u in range(unit_count):
        for level in range(level_count):
            if unit_tris[u][level].shape[0] == 0:
                raise AssetError(
                    f"unit {u} owns no triangles at level {level}")

    # First level where each vertex appears; attribute its record to the
    # lowest-id unit whose coarsest triangles use its level-0 representative.
    first_level = np.full(nv, level_count, dtype=np.int64)
    for level in range(level_count - 1, -1, -1):
        first_level[np.unique(rep_maps[level])] = level
    used0 = level_tris[0]
    owner0 = tri_unit[0]
    first_use = np.full(nv, unit_count, dtype=np.int64)
    for j in range(used0.shape[0]):
        for v in used0[j]:
            first_use[v] = min(first_use[v], owner0[j])
    rep0 = rep_maps[0]
    vert_unit = np.where(first_use[rep0] < unit_count, first_use[rep0], 0)

    units = []
    for u in range(unit_count):
        tri_counts = [unit_tris[u][k].shape[0] for k in range(level_count)]
        new_verts = []
        for level in range(level_count):
            mine = np.unique(unit_tris[u][level])
            fresh = mine[(first_level[mine] == level) & (vert_unit[mine] == u)]
            new_verts.append(len(fresh))
        units.append(Unit(
            id=u,
            tris=tuple(unit_tris[u][k].astype(np.int32) for k in range(level_count)),
            bytes_per_level=_cumulative_bytes(tri_counts, new_verts),
        ))

    meta = {"base_resolution": base_resolution,
            "input_triangles": int(triangles.shape[0])}
    return SceneAsset(kind=MESH, levels=level_count,
                      vertices=vertices, units=tuple(units), meta=meta)


# -- heightfield ladder -------------------------------------------------------

def build_heightfield_ladder(heights: np.ndarray, level_count: int,
                             spacing: float = 1.0, height_scale: float = 1.0,
                             depth: float = 8.0,
                             colors: np.ndarray | None = None) -> SceneAsset:
    """Build a mipmap-style ladder over a regular height grid.

    heights: (R, C) array; both R-1 and C-1 must be divisible by
        2^(level_count-1) so every level subsamples cleanly.
    spacing: world units between adjacent full-resolution grid vertices.
    depth: distance of the (flat) grid plane from the origin along +z; height
        displaces vertices back toward the camera at the origin.
    colors: optional (R, C, 3) vertex colors; defaults to height-scaled gray.

    The grid is centered on the z axis, x to the right and y up, matching
    screen coordinates for the default camera.
    """
    heights = np.asarray(heights, dtype=np.float64)
    if heights.ndim != 2:
        raise AssetError("height grid must be 2-D")
    if level_count < 2:
        raise AssetError("a ladder needs at least 2 levels")
    step = 2 ** (level_count - 1)
    rows, cols = heights.shape
    if (rows - 1) % step or (cols - 1) % step:
        raise AssetError(
            f"grid {rows}x{cols} does not subsample cleanly over "
            f"{level_count} levels (needs multiples of {step} plus one)")
    if not np.all(np.isfinite(heights)):
        raise AssetError("height grid contains non-finite values")
    coarse_r, coarse_c = (rows - 1) // step, (cols - 1) // step

    if colors is None:
        span = heights.max() - heights.min()
        gray = (heights - heights.min()) / span if span > 0 else np.full_like(heights, 0.5)
        gray = 0.15 + 0.7 * gray
        colors = np.repeat(gray[..., None], 3, axis=2)
    colors = np.asarray(colors, dtype=np.float64)
    if colors.shape != (rows, cols, 3):
        raise AssetError("colors must be (R, C, 3) matching the height grid")

    jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
    x = (jj - (cols - 1) / 2.0) * spacing
    y = ((rows - 1) / 2.0 - ii) * spacing
    z = depth - heights * height_scale
    vertices = np.concatenate(
        [np.stack([x, y, z], axis=-1), colors], axis=-1).reshape(-1, 6)

    def vid(i, j):
        return i * cols + j

    units = []
    for a in range(coarse_r):
        for b in range(coarse_c):
            tris_per_level = []
            tri_counts, new_verts = [], []
            for level in range(level_count):
                stride = 2 ** (level_count - 1 - level)
                n = step // stride            # sub-cells per texel axis
                tris = np.empty((2 * n * n, 3), dtype=np.int32)
                t = 0
                for p in range(n):
                    for q in range(n):
                        i0 = a * step + p * stride
                        j0 = b * step + q * stride
                        v00 = vid(i0, j0)
                        v01 = vid(i0, j0 + stride)
                        v10 = vid(i0 + stride, j0)
                        v11 = vid(i0 + stride, j0 + stride)
                        tris[t] = (v00, v10, v11)
                        tris[t + 1] = (v00, v11, v01)
                        t += 2
                fresh = sum(1 for _ in _new_grid_vertices(
                    a, b, step, stride, coarse_r, coarse_c))
                tris_per_level.append(tris)
                tri_counts.append(tris.shape[0])
                new_verts.append(fresh)
            units.append(Unit(
                id=a * coarse_c + b,
                tris=tuple(tris_per_level),
                bytes_per_level=_cumulative_bytes(tri_counts, new_verts),
            ))

    meta = {"grid": [int(rows), int(cols)],
            "coarse": [int(coarse_r), int(coarse_c)],
            "spacing": float(spacing), "height_scale": float(height_scale),
            "depth": float(depth)}
    return SceneAsset(kind=HEIGHTFIELD, levels=level_count,
                      vertices=vertices, units=tuple(units), meta=meta)


def _new_grid_vertices(a: int, b: int, step: int, stride: int,
                       coarse_r: int, coarse_c: int):
    """Vertices of texel (a, b) first needed at the given stride.

    Shared edge vertices are owned by the texel above/left of the edge;
    the last row/column of texels also owns the grid's outer boundary.
    """
    i_lo, j_lo = a * step, b * step
    for p in range(0, step + 1, stride):
        for q in range(0, step + 1, stride):
            if stride < step and p % (2 * stride) == 0 and q % (2 * stride) == 0:
                continue                      # already present one level down
            i, j = i_lo + p, j_lo + q
            owns_i = p < step or a == coarse_r - 1
            owns_j = q < step or b == coarse_c - 1
            if owns_i and owns_j:
                yield i, j
