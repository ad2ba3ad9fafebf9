"""Synthetic fixture geometry: displaced grid patches and height grids.

These generators produce deterministic, gently varying surfaces with enough
luminance texture that band contrasts are non-trivial at every scale.  The
patch is centered on the +z axis facing the default camera at the origin.
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .ladder import build_heightfield_ladder, build_mesh_ladder
from .types import SceneAsset


def _smooth_bumps(rows: int, cols: int, seed: int, terms: int = 6) -> np.ndarray:
    """Sum of random low-frequency cosines, normalized to [-1, 1]."""
    rng = np.random.default_rng(seed)
    v = np.linspace(0.0, 1.0, rows)[:, None]
    u = np.linspace(0.0, 1.0, cols)[None, :]
    out = np.zeros((rows, cols))
    for _ in range(terms):
        fu, fv = rng.uniform(0.5, 3.0, size=2)
        pu, pv = rng.uniform(0.0, 2.0 * np.pi, size=2)
        amp = rng.uniform(0.4, 1.0)
        out += amp * np.cos(2.0 * np.pi * fu * u + pu) * np.cos(2.0 * np.pi * fv * v + pv)
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def _patch_colors(rows: int, cols: int, bumps: np.ndarray, seed: int) -> np.ndarray:
    """Colorful vertex attributes: height tint plus a finer luminance grain."""
    grain = _smooth_bumps(rows, cols, seed + 1, terms=10)
    base = 0.45 + 0.3 * bumps + 0.18 * grain
    r = np.clip(base + 0.08 * bumps, 0.02, 0.98)
    g = np.clip(base, 0.02, 0.98)
    b = np.clip(base - 0.08 * grain, 0.02, 0.98)
    return np.stack([r, g, b], axis=-1)


def grid_patch_mesh(coarse_cells: tuple[int, int], level_count: int,
                    spacing: float = 1.0, amplitude: float = 0.3,
                    depth: float | None = None, seed: int = 0):
    """Fine triangle mesh over a displaced grid.

    coarse_cells: target coarse grid; the fine grid has
        cells * 2^(level_count-1) cells per axis, so clustering at the
        default resolution collapses back to exactly 2 triangles per coarse
        cell.  amplitude is the displacement in spacing units and must stay
        well under the coarse cell size for that collapse to stay clean.

    Returns (vertices (V, 6), triangles (T, 3), suggested clustering
    resolution per axis).
    """
    cr, cc = coarse_cells
    step = 2 ** (level_count - 1)
    rows, cols = cr * step + 1, cc * step + 1
    bumps = _smooth_bumps(rows, cols, seed)
    if depth is None:
        # patch subtends ~28 degrees: extent/(2*depth) = tan(14 deg)
        depth = 2.0 * max(rows - 1, cols - 1) * spacing
    jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
    x = (jj - (cols - 1) / 2.0) * spacing
    y = ((rows - 1) / 2.0 - ii) * spacing
    z = depth - amplitude * spacing * bumps
    colors = _patch_colors(rows, cols, bumps, seed)
    vertices = np.concatenate(
        [np.stack([x, y, z], axis=-1), colors], axis=-1).reshape(-1, 6)

    cell_r, cell_c = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1),
                                 indexing="ij")
    v00 = (cell_r * cols + cell_c).ravel()
    v01 = v00 + 1
    v10 = v00 + cols
    v11 = v10 + 1
    tris = np.empty((v00.size * 2, 3), dtype=np.int64)
    tris[0::2] = np.stack([v00, v10, v11], axis=1)
    tris[1::2] = np.stack([v00, v11, v01], axis=1)
    return vertices, tris, max(cr, cc)


def patch_mesh_asset(coarse_cells: tuple[int, int], level_count: int,
                     spacing: float = 1.0, amplitude: float = 0.3,
                     depth: float | None = None, seed: int = 0) -> SceneAsset:
    """Displaced-patch mesh run through the clustering ladder."""
    vertices, tris, resolution = grid_patch_mesh(
        coarse_cells, level_count, spacing, amplitude, depth, seed)
    return build_mesh_ladder(vertices, tris, level_count,
                             base_resolution=resolution)


def dolly_cameras(asset: SceneAsset, count: int,
                  spread_degrees: float = 60.0) -> list:
    """Fixed cameras on a horizontal arc around the scene center.

    The arc passes through the default origin pose and keeps the center
    in view from every stop, the way capture sequences orbit an asset.
    """
    from .types import Camera
    lo, hi = asset.bbox()
    center = (np.asarray(lo) + np.asarray(hi)) / 2.0
    arm = -center                      # center -> default camera position
    if not np.linalg.norm(arm) > 0:
        raise DomainError("scene center coincides with the default camera")
    if count == 1:
        angles = [0.0]
    else:
        half = np.radians(spread_degrees) / 2.0
        angles = np.linspace(-half, half, count)
    cameras = []
    for theta in angles:
        c, s = np.cos(theta), np.sin(theta)
        spun = np.array([c * arm[0] + s * arm[2], arm[1],
                         -s * arm[0] + c * arm[2]])
        pos = center + spun
        fwd = center - pos
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 1.0, 0.0]) - fwd[1] * fwd
        up /= np.linalg.norm(up)
        cameras.append(Camera(position=tuple(pos), forward=tuple(fwd),
                              up=tuple(up)))
    return cameras


def heightfield_asset(coarse_cells: tuple[int, int], level_count: int,
                      spacing: float = 1.0, amplitude: float = 1.5,
                      depth: float | None = None, seed: int = 0) -> SceneAsset:
    """Random smooth height grid run through the mipmap ladder."""
    cr, cc = coarse_cells
    step = 2 ** (level_count - 1)
    rows, cols = cr * step + 1, cc * step + 1
    if depth is None:
        depth = 2.0 * max(rows - 1, cols - 1) * spacing
    bumps = _smooth_bumps(rows, cols, seed)
    heights = amplitude * spacing * (bumps + 1.0) / 2.0
    colors = _patch_colors(rows, cols, bumps, seed)
    return build_heightfield_ladder(heights, level_count, spacing=spacing,
                                    height_scale=1.0, depth=depth,
                                    colors=colors)
