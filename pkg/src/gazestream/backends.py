"""Sensitivity table sources for the streaming planner.

The session loop needs one operation from its planner input: a full slot
table for a camera pose and gaze state.  Four interchangeable sources
implement it:

* AnalyticBackend wraps the exact sweep and memoizes tables per camera
  and gaze cell, since neighboring gaze samples produce near-identical
  tables and saccade tables do not depend on gaze at all.
* NeuralBackend runs the trained surrogate; after a one-time footprint
  query per camera it renders nothing.
* UniformBackend is the gaze-blind baseline: every unit's next level is
  equally urgent and deeper levels matter progressively less.
* EccOnlyBackend plans from the eccentricity term alone, with no popping
  penalty and no saccade masking.
"""

from __future__ import annotations

import numpy as np

from .neural import MlpModel, check_scene, denormalize_targets, features_from, predict
from .perception import GazeState
from .scene import Camera, SceneAsset
from .scheduler import UnitSensitivity
from .sweep import SceneSweep


def _snap(gaze: tuple[float, float], step: float) -> tuple[float, float]:
    if step <= 0:
        return (float(gaze[0]), float(gaze[1]))
    return (round(gaze[0] / step) * step, round(gaze[1] / step) * step)


class AnalyticBackend:
    """Exact sweep tables, memoized per camera pose and gaze cell.

    gaze_snap is the fixation cache cell size in degrees: queries are
    evaluated at the snapped gaze, trading a sub-cell gaze error for
    cache hits along smooth gaze paths.  Zero disables snapping.
    """

    name = "analytic"

    def __init__(self, sweep: SceneSweep, gaze_snap: float = 0.25):
        self.sweep = sweep
        self.gaze_snap = gaze_snap
        self._tables: dict[tuple, UnitSensitivity] = {}

    def table(self, camera: Camera, gaze_state: GazeState) -> UnitSensitivity:
        if gaze_state.mode == "saccade":
            key = (camera.key(), "saccade")
            state = gaze_state
        else:
            g = _snap(gaze_state.gaze, self.gaze_snap)
            key = (camera.key(), "fixation", g)
            state = GazeState(gaze=g, mode="fixation",
                              speed=gaze_state.speed)
        if key not in self._tables:
            self._tables[key] = self.sweep.table(camera, state)
        return self._tables[key]


class NeuralBackend:
    """Surrogate tables: one forward pass per query.

    The sweep is consulted once per camera for slot footprint sizes,
    which the sigmoid outputs are scaled by; per-tick queries never
    render or filter anything.
    """

    name = "neural"

    def __init__(self, model: MlpModel, sweep: SceneSweep):
        check_scene(model, sweep.asset)
        self.model = model
        self.sweep = sweep
        self._pixels: dict[tuple, np.ndarray] = {}

    def table(self, camera: Camera, gaze_state: GazeState) -> UnitSensitivity:
        key = camera.key()
        if key not in self._pixels:
            self._pixels[key] = self.sweep.footprint_counts(camera)
        pixels = self._pixels[key]
        feats = features_from(camera, gaze_state, self.sweep.display)
        flat = predict(self.model, feats.astype(np.float32))
        values = denormalize_targets(flat.astype(np.float64), pixels,
                                     self.model.bounds)
        return UnitSensitivity(values=values, pixels=pixels,
                               mode=gaze_state.mode)


class UniformBackend:
    """Breadth-first baseline: slot (u, k) scores 1/k for every unit."""

    name = "uniform"

    def __init__(self, asset: SceneAsset):
        values = np.zeros((asset.unit_count, asset.levels))
        for k in range(1, asset.levels):
            values[:, k] = 1.0 / k
        self._values = values
        self._pixels = np.zeros_like(values, dtype=np.int64)

    def table(self, camera: Camera, gaze_state: GazeState) -> UnitSensitivity:
        return UnitSensitivity(values=self._values, pixels=self._pixels,
                               mode=gaze_state.mode)


class EccOnlyBackend:
    """Eccentricity-only baseline: static importance sums over slot
    footprints, identical during fixations and saccades."""

    name = "ecc-only"

    def __init__(self, sweep: SceneSweep, gaze_snap: float = 0.25):
        self.sweep = sweep
        self.gaze_snap = gaze_snap
        self._tables: dict[tuple, UnitSensitivity] = {}

    def table(self, camera: Camera, gaze_state: GazeState) -> UnitSensitivity:
        g = _snap(gaze_state.gaze, self.gaze_snap)
        key = (camera.key(), g)
        if key not in self._tables:
            self._tables[key] = self.sweep.static_table(camera, g)
        return self._tables[key]
