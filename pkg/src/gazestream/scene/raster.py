"""Minimal deterministic software rasterizer.

Produces a luminance buffer plus an exact per-pixel unit-id map.  One sample
per pixel (no anti-aliasing), top-left fill convention, perspective-correct
depth and attribute interpolation, double-sided triangles, near-plane
clipping for triangles that straddle the camera plane.

The projection is a pinhole whose focal length is ``pixels_per_degree``
converted to radians, so screen pixels line up with the visual-degree grid
used by the retina model (the usual flat-display approximation).

Besides the plain winner-per-pixel render there are two structured outputs
for incremental re-composition: ``render_layers`` keeps the two nearest
fragments from *different* units per pixel, which is exactly enough to
recompose the frame after any single unit changes, and ``fragment_table``
keeps every unit's own nearest fragment per pixel regardless of occlusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..constants import LUMA_WEIGHTS
from ..errors import DomainError
from ..vision import DisplayParams
from .types import BACKGROUND_ID, Camera, Frame, LoDState, SceneAsset

NEAR_PLANE = 0.01
# cap on candidate fragments processed per vectorized batch
_BATCH_FRAGMENTS = 4_000_000


def gather_triangles(asset: SceneAsset, lod_state: LoDState,
                     only_units: np.ndarray | None = None):
    """Concatenate per-unit triangle tables at their current levels.

    Returns (positions (T,3,3), luma (T,3), unit ids (T,)).  Draw order is
    unit id order, which the depth tie-break relies on for determinism.
    """
    lod_state.validate_for(asset)
    luma_v = asset.vertices[:, 3:6] @ np.asarray(LUMA_WEIGHTS)
    pos_v = asset.vertices[:, :3]
    unit_ids = range(asset.unit_count) if only_units is None else only_units
    pos, luma, ids = [], [], []
    for u in unit_ids:
        tri = asset.units[u].tris[int(lod_state.levels[u])]
        pos.append(pos_v[tri])
        luma.append(luma_v[tri])
        ids.append(np.full(tri.shape[0], u, dtype=np.int32))
    if not pos:
        return (np.zeros((0, 3, 3)), np.zeros((0, 3)),
                np.zeros(0, dtype=np.int32))
    return np.concatenate(pos), np.concatenate(luma), np.concatenate(ids)


def _clip_near(pos: np.ndarray, luma: np.ndarray, ids: np.ndarray,
               near: float):
    """Clip camera-space triangles against z = near.

    Fully-behind triangles are dropped; straddlers are clipped to a convex
    polygon and fanned back into triangles.  Kept triangles pass through
    untouched so the common path stays vectorized.
    """
    z = pos[:, :, 2]
    keep = np.all(z > near, axis=1)
    gone = np.all(z <= near, axis=1)
    straddle = ~(keep | gone)
    out_pos = [pos[keep]]
    out_luma = [luma[keep]]
    out_ids = [ids[keep]]
    for t in np.flatnonzero(straddle):
        poly = [(pos[t, k], luma[t, k]) for k in range(3)]
        clipped = []
        for k in range(3):
            cur, nxt = poly[k], poly[(k + 1) % 3]
            zc, zn = cur[0][2], nxt[0][2]
            if zc > near:
                clipped.append(cur)
            if (zc > near) != (zn > near):
                s = (near - zc) / (zn - zc)
                clipped.append((cur[0] + s * (nxt[0] - cur[0]),
                                cur[1] + s * (nxt[1] - cur[1])))
        for k in range(1, len(clipped) - 1):
            out_pos.append(np.stack(
                [clipped[0][0], clipped[k][0], clipped[k + 1][0]])[None])
            out_luma.append(np.array(
                [[clipped[0][1], clipped[k][1], clipped[k + 1][1]]]))
            out_ids.append(ids[t:t + 1])
    return (np.concatenate(out_pos), np.concatenate(out_luma),
            np.concatenate(out_ids))


def _prepare(positions, luma, ids, camera: Camera, display: DisplayParams,
             near: float):
    """Transform, clip, project and cull a triangle soup.

    Returns None when nothing survives, otherwise the per-triangle screen
    data plus the live-triangle index array and its fragment-count estimate,
    ready for bounding-box scan batching.
    """
    if positions.shape[0] == 0:
        return None
    h, w = display.height, display.width
    right, up, fwd = camera.basis()
    d = positions - np.asarray(camera.position)
    cam = np.stack([d @ right, d @ up, d @ fwd], axis=-1)
    cam, luma, ids = _clip_near(cam, luma, ids, near)
    if cam.shape[0] == 0:
        return None

    focal = display.pixels_per_degree * 180.0 / math.pi
    z = cam[:, :, 2]
    px = w / 2.0 + focal * cam[:, :, 0] / z
    py = h / 2.0 - focal * cam[:, :, 1] / z
    invz_v = 1.0 / z

    # orient every triangle so edge functions are positive inside
    area2 = ((px[:, 1] - px[:, 0]) * (py[:, 2] - py[:, 0])
             - (py[:, 1] - py[:, 0]) * (px[:, 2] - px[:, 0]))
    flip = area2 < 0
    px[flip] = px[flip][:, [0, 2, 1]]
    py[flip] = py[flip][:, [0, 2, 1]]
    invz_v = invz_v.copy()
    invz_v[flip] = invz_v[flip][:, [0, 2, 1]]
    luma = luma.copy()
    luma[flip] = luma[flip][:, [0, 2, 1]]
    live = np.abs(area2) > 0

    c0 = np.clip(np.ceil(px.min(axis=1) - 0.5), 0, w - 1).astype(np.int64)
    c1 = np.clip(np.floor(px.max(axis=1) - 0.5), 0, w - 1).astype(np.int64)
    r0 = np.clip(np.ceil(py.min(axis=1) - 0.5), 0, h - 1).astype(np.int64)
    r1 = np.clip(np.floor(py.max(axis=1) - 0.5), 0, h - 1).astype(np.int64)
    live &= (px.min(axis=1) < w) & (px.max(axis=1) > 0)
    live &= (py.min(axis=1) < h) & (py.max(axis=1) > 0)
    live &= (c1 >= c0) & (r1 >= r0)
    sel = np.flatnonzero(live)
    if sel.size == 0:
        return None
    counts = (r1[sel] - r0[sel] + 1) * (c1[sel] - c0[sel] + 1)
    lumoz = luma * invz_v
    return px, py, invz_v, lumoz, ids, r0, c0, r1, c1, sel, counts


def _batches(sel, counts):
    """Split live triangles into runs of at most _BATCH_FRAGMENTS candidates."""
    start = 0
    while start < sel.size:
        stop = start
        budget = 0
        while stop < sel.size and (stop == start
                                   or budget + counts[stop] <= _BATCH_FRAGMENTS):
            budget += counts[stop]
            stop += 1
        yield sel[start:stop]
        start = stop


def _batch_fragments(batch, px, py, invz_v, lumoz, r0, c0, r1, c1, w):
    """Covered fragments of one triangle batch.

    Returns (t_in, pix, invz, lum): source triangle index, flat pixel index,
    interpolated inverse depth and luminance (perspective-correct), one row
    per pixel actually inside a triangle.  Triangle order is preserved, so a
    stable sort on top keeps the first-drawn-wins tie rule.
    """
    widths = c1[batch] - c0[batch] + 1
    heights = r1[batch] - r0[batch] + 1
    counts = widths * heights
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    total = int(counts.sum())
    t = np.repeat(np.arange(batch.size), counts)
    k = np.arange(total) - offsets[t]
    pr = r0[batch][t] + k // widths[t]
    pc = c0[batch][t] + k % widths[t]
    fx = pc + 0.5
    fy = pr + 0.5

    tri = batch[t]
    e = np.empty((3, total))
    accept = np.empty((3, total), dtype=bool)
    for i in range(3):
        j = (i + 1) % 3
        ax, ay = px[tri, i], py[tri, i]
        dx = px[tri, j] - ax
        dy = py[tri, j] - ay
        e[i] = dx * (fy - ay) - dy * (fx - ax)
        # top-left fill: zero-valued edges count only on top or left edges
        accept[i] = (e[i] > 0) | ((e[i] == 0)
                                  & ((dy < 0) | ((dy == 0) & (dx > 0))))
    inside = accept[0] & accept[1] & accept[2]
    empty = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
             np.zeros(0), np.zeros(0))
    if not inside.any():
        return empty
    t_in = tri[inside]
    # barycentric weights from opposite-edge areas
    w0 = e[1][inside]
    w1 = e[2][inside]
    w2 = e[0][inside]
    denom = w0 + w1 + w2
    good = denom > 0
    t_in, w0, w1, w2, denom = (t_in[good], w0[good], w1[good], w2[good],
                               denom[good])
    if t_in.size == 0:
        return empty
    pix = (pr[inside][good] * w + pc[inside][good]).astype(np.int64)
    b0, b1, b2 = w0 / denom, w1 / denom, w2 / denom
    invz = b0 * invz_v[t_in, 0] + b1 * invz_v[t_in, 1] + b2 * invz_v[t_in, 2]
    lum = ((b0 * lumoz[t_in, 0] + b1 * lumoz[t_in, 1] + b2 * lumoz[t_in, 2])
           / invz)
    return t_in, pix, invz, lum


def render_triangles(positions: np.ndarray, luma: np.ndarray,
                     ids: np.ndarray, camera: Camera, display: DisplayParams,
                     near: float = NEAR_PLANE):
    """Rasterize a triangle soup.

    positions: (T, 3, 3) world-space corners; luma: (T, 3) vertex luminance
    in [0, 1]; ids: (T,) int32 unit ids.  Returns (luma01, unit_ids, invz)
    full-viewport buffers; invz is 0 where no triangle covers the pixel.
    """
    h, w = display.height, display.width
    luma_buf = np.zeros((h, w), dtype=np.float64)
    id_buf = np.full((h, w), BACKGROUND_ID, dtype=np.int32)
    invz_buf = np.zeros((h, w), dtype=np.float64)
    prep = _prepare(positions, luma, ids, camera, display, near)
    if prep is None:
        return luma_buf, id_buf, invz_buf
    px, py, invz_v, lumoz, ids, r0, c0, r1, c1, sel, counts = prep

    flat_invz = invz_buf.reshape(-1)
    flat_luma = luma_buf.reshape(-1)
    flat_id = id_buf.reshape(-1)
    for batch in _batches(sel, counts):
        t_in, pix, invz, lum = _batch_fragments(
            batch, px, py, invz_v, lumoz, r0, c0, r1, c1, w)
        if t_in.size == 0:
            continue
        order = np.lexsort((t_in, -invz, pix))
        pix_s = pix[order]
        first = np.ones(pix_s.size, dtype=bool)
        first[1:] = pix_s[1:] != pix_s[:-1]
        win = order[first]
        pw = pix[win]
        better = invz[win] > flat_invz[pw]
        pw = pw[better]
        win = win[better]
        flat_invz[pw] = invz[win]
        flat_luma[pw] = lum[win]
        flat_id[pw] = ids[t_in[win]]

    return luma_buf, id_buf, invz_buf


@dataclass(frozen=True)
class LayerBuffers:
    """Nearest fragment per pixel plus the nearest one from any other unit.

    Luminance values are unscaled (0..1).  Empty slots carry id
    BACKGROUND_ID, invz 0 and luminance 0.  Removing or altering a single
    unit's geometry can expose at most the second layer, so these buffers
    are sufficient to recompose the exact frame after any one-unit change.
    """

    id1: np.ndarray
    invz1: np.ndarray
    lum1: np.ndarray
    id2: np.ndarray
    invz2: np.ndarray
    lum2: np.ndarray


def _top2_scatter(unit, pix, invz, lum, seq, npix):
    """Reduce fragments to the two nearest distinct-unit ones per pixel.

    seq breaks inverse-depth ties by draw order (lower wins, stable with the
    single-layer renderer).  Returns index arrays (first, second) into the
    fragment arrays.
    """
    order = np.lexsort((seq, -invz, pix))
    pix_s = pix[order]
    lead = np.ones(pix_s.size, dtype=bool)
    lead[1:] = pix_s[1:] != pix_s[:-1]
    first = order[lead]

    win_unit = np.full(npix, BACKGROUND_ID, dtype=np.int64)
    win_unit[pix[first]] = unit[first]
    rival = order[unit[order] != win_unit[pix_s]]
    pix_r = pix[rival]
    lead2 = np.ones(pix_r.size, dtype=bool)
    lead2[1:] = pix_r[1:] != pix_r[:-1]
    second = rival[lead2]
    return first, second


def render_layers(positions: np.ndarray, luma: np.ndarray, ids: np.ndarray,
                  camera: Camera, display: DisplayParams,
                  near: float = NEAR_PLANE) -> LayerBuffers:
    """Rasterize keeping the top two distinct-unit fragments per pixel."""
    h, w = display.height, display.width
    npix = h * w
    buf = LayerBuffers(
        id1=np.full((h, w), BACKGROUND_ID, dtype=np.int32),
        invz1=np.zeros((h, w)), lum1=np.zeros((h, w)),
        id2=np.full((h, w), BACKGROUND_ID, dtype=np.int32),
        invz2=np.zeros((h, w)), lum2=np.zeros((h, w)))
    prep = _prepare(positions, luma, ids, camera, display, near)
    if prep is None:
        return buf
    px, py, invz_v, lumoz, ids, r0, c0, r1, c1, sel, counts = prep

    # candidates from every batch, at most two per pixel per batch
    cand_unit, cand_pix, cand_invz, cand_lum, cand_seq = [], [], [], [], []
    for batch in _batches(sel, counts):
        t_in, pix, invz, lum = _batch_fragments(
            batch, px, py, invz_v, lumoz, r0, c0, r1, c1, w)
        if t_in.size == 0:
            continue
        unit = ids[t_in].astype(np.int64)
        first, second = _top2_scatter(unit, pix, invz, lum, t_in, npix)
        keep = np.concatenate([first, second])
        cand_unit.append(unit[keep])
        cand_pix.append(pix[keep])
        cand_invz.append(invz[keep])
        cand_lum.append(lum[keep])
        # triangle indices grow across batches, preserving global draw order
        cand_seq.append(t_in[keep].astype(np.int64))
    if not cand_unit:
        return buf
    unit = np.concatenate(cand_unit)
    pix = np.concatenate(cand_pix)
    invz = np.concatenate(cand_invz)
    lum = np.concatenate(cand_lum)
    seq = np.concatenate(cand_seq)
    first, second = _top2_scatter(unit, pix, invz, lum, seq, npix)

    for idx, id_b, invz_b, lum_b in ((first, buf.id1, buf.invz1, buf.lum1),
                                     (second, buf.id2, buf.invz2, buf.lum2)):
        id_b.reshape(-1)[pix[idx]] = unit[idx]
        invz_b.reshape(-1)[pix[idx]] = invz[idx]
        lum_b.reshape(-1)[pix[idx]] = lum[idx]
    return buf


@dataclass(frozen=True)
class FragmentTable:
    """Per-unit nearest fragment per covered pixel, ignoring other units.

    Rows are sorted by (unit, pix); ``slices`` maps a unit id to its row
    range.  This is what a unit *would* contribute to any composition, so
    pairing it with LayerBuffers of a base frame reproduces hypothetical
    single-unit changes without re-rendering the scene.
    """

    unit: np.ndarray
    pix: np.ndarray
    invz: np.ndarray
    lum: np.ndarray
    slices: dict[int, tuple[int, int]]

    def rows(self, unit_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lo, hi = self.slices.get(int(unit_id), (0, 0))
        return self.pix[lo:hi], self.invz[lo:hi], self.lum[lo:hi]


def fragment_table(positions: np.ndarray, luma: np.ndarray, ids: np.ndarray,
                   camera: Camera, display: DisplayParams,
                   near: float = NEAR_PLANE) -> FragmentTable:
    """Collect every unit's own visible surface (self-occlusion resolved)."""
    h, w = display.height, display.width
    npix = h * w
    prep = _prepare(positions, luma, ids, camera, display, near)
    parts = []
    if prep is not None:
        px, py, invz_v, lumoz, ids, r0, c0, r1, c1, sel, counts = prep
        for bi, batch in enumerate(_batches(sel, counts)):
            t_in, pix, invz, lum = _batch_fragments(
                batch, px, py, invz_v, lumoz, r0, c0, r1, c1, w)
            if t_in.size:
                parts.append((ids[t_in].astype(np.int64), pix, invz, lum,
                              t_in.astype(np.int64)))
    if not parts:
        empty = np.zeros(0, dtype=np.int64)
        return FragmentTable(empty, empty, np.zeros(0), np.zeros(0), {})
    unit = np.concatenate([p[0] for p in parts])
    pix = np.concatenate([p[1] for p in parts])
    invz = np.concatenate([p[2] for p in parts])
    lum = np.concatenate([p[3] for p in parts])
    seq = np.concatenate([p[4] for p in parts])

    key = unit * npix + pix
    order = np.lexsort((seq, -invz, key))
    key_s = key[order]
    lead = np.ones(key_s.size, dtype=bool)
    lead[1:] = key_s[1:] != key_s[:-1]
    keep = order[lead]             # already sorted by (unit, pix)
    unit, pix, invz, lum = unit[keep], pix[keep], invz[keep], lum[keep]

    slices = {}
    bounds = np.flatnonzero(np.concatenate(
        [[True], unit[1:] != unit[:-1], [True]]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        slices[int(unit[a])] = (int(a), int(b))
    return FragmentTable(unit, pix, invz, lum, slices)


def rasterize(asset: SceneAsset, lod_state: LoDState, camera: Camera,
              display: DisplayParams, near: float = NEAR_PLANE) -> Frame:
    """Render the asset at the given per-unit LoD levels."""
    if near <= 0:
        raise DomainError("near plane must be positive")
    pos, luma, ids = gather_triangles(asset, lod_state)
    luma01, id_buf, _ = render_triangles(pos, luma, ids, camera, display, near)
    return Frame(luminance=luma01 * display.luminance, unit_ids=id_buf)


def hypothetical_frame(asset: SceneAsset, lod_state: LoDState, unit: int,
                       candidate_level: int, camera: Camera,
                       display: DisplayParams,
                       near: float = NEAR_PLANE) -> Frame:
    """Render as if one unit were at a different level, all else unchanged."""
    if not 0 <= unit < asset.unit_count:
        raise DomainError(f"unit {unit} out of range")
    if not 0 <= candidate_level < asset.levels:
        raise DomainError(f"candidate level {candidate_level} out of range")
    return rasterize(asset, lod_state.with_unit(unit, candidate_level),
                     camera, display, near)
