"""Core scene data types: units, assets, LoD state, cameras and frames.

A scene is a triangle soup partitioned into *units* (the coarsest-level
elements that are scheduled independently).  Every unit carries one triangle
list per LoD level, all indexing into a single shared vertex table, plus the
cumulative byte size of its payload at each level.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..contrast import LuminanceImage
from ..errors import AssetError, DomainError

BACKGROUND_ID = -1

MESH = "mesh"
HEIGHTFIELD = "heightfield"


@dataclass(frozen=True)
class Unit:
    """One schedulable element with its per-level geometry and byte costs."""

    id: int
    tris: tuple[np.ndarray, ...]     # per level: (T, 3) int32 vertex indices
    bytes_per_level: np.ndarray      # (levels,) int64, cumulative, increasing

    def __post_init__(self):
        if len(self.tris) != len(self.bytes_per_level):
            raise AssetError(f"unit {self.id}: level count mismatch")
        sizes = np.asarray(self.bytes_per_level, dtype=np.int64)
        if not np.all(np.diff(sizes) > 0):
            raise AssetError(f"unit {self.id}: byte sizes must strictly increase")
        for level, tri in enumerate(self.tris):
            if tri.ndim != 2 or tri.shape[1] != 3:
                raise AssetError(f"unit {self.id} level {level}: bad triangle table")
            if tri.shape[0] == 0:
                raise AssetError(f"unit {self.id} level {level}: empty triangle table")

    @property
    def levels(self) -> int:
        return len(self.tris)

    def upgrade_bytes(self, from_level: int, to_level: int) -> int:
        """Payload bytes needed to move this unit from one level to a higher one."""
        if not 0 <= from_level < to_level <= self.levels - 1:
            raise DomainError(
                f"unit {self.id}: bad upgrade {from_level}->{to_level}")
        return int(self.bytes_per_level[to_level] - self.bytes_per_level[from_level])


@dataclass(frozen=True)
class SceneAsset:
    """A built scene: shared vertex table plus per-unit LoD ladders."""

    kind: str
    levels: int
    vertices: np.ndarray             # (V, 6) float64: x y z r g b
    units: tuple[Unit, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (MESH, HEIGHTFIELD):
            raise AssetError(f"unknown asset kind {self.kind!r}")
        if self.levels < 2:
            raise AssetError("an asset needs at least 2 LoD levels")
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 6:
            raise AssetError("vertex table must be (V, 6): position + color")
        if not np.all(np.isfinite(self.vertices)):
            raise AssetError("vertex table contains non-finite values")
        colors = self.vertices[:, 3:6]
        if colors.size and (colors.min() < 0.0 or colors.max() > 1.0):
            raise AssetError("vertex colors must lie in [0, 1]")
        nv = self.vertices.shape[0]
        for unit in self.units:
            if unit.levels != self.levels:
                raise AssetError(f"unit {unit.id}: expected {self.levels} levels")
            for tri in unit.tris:
                if tri.min() < 0 or tri.max() >= nv:
                    raise AssetError(f"unit {unit.id}: triangle index out of range")

    @property
    def unit_count(self) -> int:
        return len(self.units)

    @property
    def slot_count(self) -> int:
        return self.unit_count * self.levels

    def bbox(self) -> np.ndarray:
        pos = self.vertices[:, :3]
        if pos.shape[0] == 0:
            return np.zeros((2, 3))
        return np.stack([pos.min(axis=0), pos.max(axis=0)])

    def level_bytes(self) -> np.ndarray:
        """Total cumulative bytes per level, summed over units."""
        if not self.units:
            return np.zeros(self.levels, dtype=np.int64)
        return np.sum([u.bytes_per_level for u in self.units], axis=0)

    def scene_hash(self) -> str:
        """Content hash over geometry and byte tables; pins models to scenes."""
        digest = hashlib.sha256()
        digest.update(self.kind.encode())
        digest.update(np.int64([self.levels, self.unit_count]).tobytes())
        digest.update(np.ascontiguousarray(self.vertices).tobytes())
        for unit in self.units:
            for tri in unit.tris:
                digest.update(np.ascontiguousarray(tri, dtype=np.int32).tobytes())
            digest.update(np.ascontiguousarray(unit.bytes_per_level).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class LoDState:
    """Per-unit current LoD level."""

    levels: np.ndarray               # (units,) int32

    def __post_init__(self):
        arr = np.asarray(self.levels)
        if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
            raise DomainError("LoD state must be a 1-D integer array")
        if arr.min(initial=0) < 0:
            raise DomainError("LoD levels must be non-negative")

    @classmethod
    def uniform(cls, asset: SceneAsset, level: int = 0) -> "LoDState":
        if not 0 <= level < asset.levels:
            raise DomainError(f"level {level} outside [0, {asset.levels})")
        return cls(np.full(asset.unit_count, level, dtype=np.int32))

    def validate_for(self, asset: SceneAsset) -> None:
        if self.levels.shape[0] != asset.unit_count:
            raise DomainError("LoD state does not match asset unit count")
        if self.levels.size and self.levels.max() >= asset.levels:
            raise DomainError("LoD state exceeds asset level count")

    def with_unit(self, unit: int, level: int) -> "LoDState":
        out = self.levels.copy()
        out[unit] = level
        return LoDState(out)

    def copy(self) -> "LoDState":
        return LoDState(self.levels.copy())


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; forward/up must be unit length and orthogonal."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    forward: tuple[float, float, float] = (0.0, 0.0, 1.0)
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self):
        values = (*self.position, *self.forward, *self.up)
        if not np.all(np.isfinite(values)):
            raise DomainError("camera contains non-finite values")
        fwd = np.asarray(self.forward, dtype=float)
        up = np.asarray(self.up, dtype=float)
        if abs(np.linalg.norm(fwd) - 1.0) > 1e-6 or abs(np.linalg.norm(up) - 1.0) > 1e-6:
            raise DomainError("camera forward/up must be unit length")
        if abs(float(fwd @ up)) > 1e-6:
            raise DomainError("camera forward/up must be orthogonal")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right-handed (right, up, forward) orthonormal basis."""
        fwd = np.asarray(self.forward, dtype=float)
        up = np.asarray(self.up, dtype=float)
        right = np.cross(up, fwd)
        right /= np.linalg.norm(right)
        true_up = np.cross(fwd, right)
        return right, true_up, fwd

    def key(self) -> tuple:
        """Hashable identity for per-camera caches."""
        return (self.position, self.forward, self.up)


@dataclass(frozen=True)
class Frame:
    """Rendered output: luminance buffer plus exact per-pixel unit ids."""

    luminance: np.ndarray            # (H, W) float64, cd/m^2
    unit_ids: np.ndarray             # (H, W) int32, BACKGROUND_ID outside

    def __post_init__(self):
        if self.luminance.shape != self.unit_ids.shape:
            raise DomainError("frame buffers disagree on shape")

    def image(self) -> LuminanceImage:
        return LuminanceImage(self.luminance)

    def footprint(self, unit: int) -> np.ndarray:
        return self.unit_ids == unit
