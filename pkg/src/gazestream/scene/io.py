"""Scene container serialization and mesh/heightmap importers.

Binary container layout (little-endian throughout):

    magic    4s   b"GZSC"
    version  u32  1
    kind     u8   0 = mesh, 1 = heightfield
    levels   u8
    reserved u16
    nvert    u64  vertex count
    nunit    u64  unit count
    vertices nvert * 6 float64   (x y z r g b)
    units, nunit times:
        per level: u64 tri_count, then tri_count * 3 u32 indices
        per level: u64 cumulative payload bytes
    meta     u32 length + UTF-8 JSON

The sidecar manifest (``<scene>.manifest.json``) mirrors the header plus
per-level byte totals for humans; the binary file is the source of truth.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import AssetError
from ..imaging import read_pgm
from .ladder import build_heightfield_ladder, build_mesh_ladder
from .types import HEIGHTFIELD, MESH, SceneAsset, Unit

_MAGIC = b"GZSC"
_VERSION = 1
_KIND_CODE = {MESH: 0, HEIGHTFIELD: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def save_scene(asset: SceneAsset, path: str) -> None:
    """Write the binary container and its JSON manifest."""
    out = bytearray()
    out += struct.pack("<4sIBBH", _MAGIC, _VERSION,
                       _KIND_CODE[asset.kind], asset.levels, 0)
    out += struct.pack("<QQ", asset.vertices.shape[0], asset.unit_count)
    out += np.ascontiguousarray(asset.vertices, dtype="<f8").tobytes()
    for unit in asset.units:
        for tri in unit.tris:
            out += struct.pack("<Q", tri.shape[0])
            out += np.ascontiguousarray(tri, dtype="<u4").tobytes()
        out += np.ascontiguousarray(
            unit.bytes_per_level, dtype="<u8").tobytes()
    meta = json.dumps(asset.meta, sort_keys=True).encode()
    out += struct.pack("<I", len(meta)) + meta
    Path(path).write_bytes(bytes(out))
    _write_manifest(asset, path)


def _write_manifest(asset: SceneAsset, path: str) -> None:
    manifest = {
        "format": "GZSC v1",
        "kind": asset.kind,
        "levels": asset.levels,
        "units": asset.unit_count,
        "vertices": int(asset.vertices.shape[0]),
        "slots": asset.slot_count,
        "level_bytes_total": [int(b) for b in asset.level_bytes()],
        "bbox_min": [float(v) for v in asset.bbox()[0]],
        "bbox_max": [float(v) for v in asset.bbox()[1]],
        "scene_hash": asset.scene_hash(),
        "meta": asset.meta,
    }
    Path(str(path) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise AssetError(f"{self.path}: truncated scene file")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise AssetError(f"{self.path}: truncated scene file")
        arr = np.frombuffer(self.data, dtype=dtype, count=count,
                            offset=self.pos)
        self.pos += size
        return arr


def load_scene(path: str) -> SceneAsset:
    """Read a binary scene container back into a SceneAsset."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise AssetError(f"cannot read scene file {path}: {exc}") from exc
    r = _Reader(data, path)
    magic, version, kind_code, levels, _ = r.take("<4sIBBH")
    if magic != _MAGIC:
        raise AssetError(f"{path}: not a scene file (bad magic)")
    if version != _VERSION:
        raise AssetError(f"{path}: unsupported scene version {version}")
    if kind_code not in _CODE_KIND:
        raise AssetError(f"{path}: unknown asset kind code {kind_code}")
    nvert, nunit = r.take("<QQ")
    vertices = r.array("<f8", nvert * 6).reshape(nvert, 6).copy()
    units = []
    for u in range(nunit):
        tris = []
        for _ in range(levels):
            (count,) = r.take("<Q")
            tris.append(r.array("<u4", count * 3)
                        .reshape(count, 3).astype(np.int32))
        sizes = r.array("<u8", levels).astype(np.int64)
        units.append(Unit(id=u, tris=tuple(tris), bytes_per_level=sizes))
    (meta_len,) = r.take("<I")
    meta = json.loads(r.data[r.pos:r.pos + meta_len].decode())
    return SceneAsset(kind=_CODE_KIND[kind_code], levels=levels,
                      vertices=vertices, units=tuple(units), meta=meta)


# -- importers ---------------------------------------------------------------

def import_obj(path: str, level_count: int,
               base_resolution: int = 8) -> SceneAsset:
    """Import a Wavefront-style text mesh with per-vertex colors.

    Supported: ``v x y z [r g b]`` (color defaults to mid gray) and
    triangular/fan ``f`` records with optional ``/vt/vn`` suffixes.
    """
    vertices, faces = [], []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise AssetError(f"cannot read mesh file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) not in (4, 7):
                raise AssetError(
                    f"{path}:{lineno}: vertex needs 3 or 6 numbers")
            try:
                nums = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise AssetError(f"{path}:{lineno}: bad vertex number") from exc
            if len(nums) == 3:
                nums += [0.5, 0.5, 0.5]
            vertices.append(nums)
        elif tag == "f":
            idx = []
            for p in parts[1:]:
                head = p.split("/", 1)[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise AssetError(f"{path}:{lineno}: bad face index") from exc
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            if len(idx) < 3:
                raise AssetError(f"{path}:{lineno}: face needs 3+ vertices")
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
        # other tags (vn, vt, o, g, s, usemtl, ...) are ignored
    if not vertices or not faces:
        raise AssetError(f"{path}: no triangles found")
    verts = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(faces, dtype=np.int64)
    if tris.min() < 0 or tris.max() >= verts.shape[0]:
        raise AssetError(f"{path}: face index out of range")
    verts[:, 3:6] = np.clip(verts[:, 3:6], 0.0, 1.0)
    return build_mesh_ladder(verts, tris, level_count, base_resolution)


def import_heightmap(path: str, level_count: int, spacing: float = 1.0,
                     height_scale: float = 8.0,
                     depth: float | None = None) -> SceneAsset:
    """Import a PGM image as a height grid (pixel value = height)."""
    heights = read_pgm(path)
    span = heights.max() - heights.min()
    norm = (heights - heights.min()) / span if span > 0 else heights * 0.0
    if depth is None:
        depth = 2.0 * max(heights.shape) * spacing
    return build_heightfield_ladder(norm, level_count, spacing=spacing,
                                    height_scale=height_scale, depth=depth)
