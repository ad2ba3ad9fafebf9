"""Gaze-dependent importance of screen content and of content changes.

Three per-pixel quantities drive the streaming scheduler:

  * static importance E = M(x - g) + pedestal: what spatial detail the
    retina resolves at pixel x while gazing at g, plus a floor so far
    periphery never becomes worthless;
  * popping intensity P: visibility of a frame change I -> I', summed
    over resolvable bands as csf * |c' - c| / (|c| + omega), a
    Weber-style ratio against the pre-change band contrast;
  * adaptive importance A: during fixation E - lambda * P (changes the
    viewer would notice are penalized), during a saccade the popping
    averaged over a uniform grid of hypothetical landing positions,
    because content can be swapped while vision is suppressed and what
    matters is where the eye might land.

Adaptive importance telescopes over a chain of LoD frames: the score of
a multi-level jump is the sum of its single-level steps.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass, field

import numpy as np

from .contrast import (
    BandSpec,
    LuminanceImage,
    bandpass_decompose,
    band_clamp_mask,
    contrast_field,
    require_display_shape,
)
from .errors import ConfigError, DomainError, TraceError
from .vision import DisplayParams, RetinaParams, acuity_importance, csf, pixel_grid


@dataclass(frozen=True)
class PerceptionParams:
    """Knobs of the perceptual model (defaults from the pilot tuning)."""

    lambda_popping: float = 3.0      # popping penalty weight during fixation
    omega: float = 10.0              # Weber denominator pedestal for popping
    pedestal: float = 2.0            # floor added to static importance
    saccade_threshold: float = 180.0  # deg/s
    saccade_grid: tuple[int, int] = (8, 8)  # hypothetical gaze grid (rows, cols)

    def __post_init__(self):
        if self.lambda_popping < 0 or self.omega <= 0 or self.pedestal < 0:
            raise ConfigError("lambda must be >= 0, omega > 0, pedestal >= 0")
        if self.saccade_threshold <= 0:
            raise ConfigError("saccade_threshold must be positive")
        rows, cols = self.saccade_grid
        if rows < 1 or cols < 1:
            raise ConfigError("saccade grid must be at least 1x1")


@dataclass(frozen=True)
class GazeSample:
    """One trace record: timestamp, gaze point and camera pose."""

    time: float                      # seconds
    gaze: tuple[float, float]        # degrees, screen coordinates
    cam_pos: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cam_forward: tuple[float, float, float] = (0.0, 0.0, 1.0)
    cam_up: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self):
        values = (self.time, *self.gaze, *self.cam_pos, *self.cam_forward, *self.cam_up)
        if not np.all(np.isfinite(values)):
            raise TraceError("gaze sample contains non-finite values")
        fwd = np.asarray(self.cam_forward)
        up = np.asarray(self.cam_up)
        if abs(np.linalg.norm(fwd) - 1.0) > 1e-6 or abs(np.linalg.norm(up) - 1.0) > 1e-6:
            raise TraceError("camera forward/up must be unit length")
        if abs(float(fwd @ up)) > 1e-6:
            raise TraceError("camera forward/up must be orthogonal")


@dataclass(frozen=True)
class GazeState:
    """Classified gaze at one instant."""

    gaze: tuple[float, float]
    mode: str            # "fixation" | "saccade"
    speed: float         # deg/s

    def __post_init__(self):
        if self.mode not in ("fixation", "saccade"):
            raise DomainError(f"unknown gaze mode {self.mode!r}")


@dataclass
class ImportanceField:
    """A per-pixel importance map tagged with the gaze mode it was
    computed under."""

    values: np.ndarray
    mode: str
    gaze: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)


def classify_gaze(trace: list[GazeSample], threshold: float = 180.0,
                  causal: bool = False) -> list[GazeState]:
    """Label each trace sample as fixation or saccade by gaze speed.

    Offline (default) speeds use central differences, which spread a
    one-frame jump over its two neighbors; causal=True uses backward
    differences only, the runtime-feasible estimator.  Speeds are the
    Euclidean norm of the gaze delta in screen degrees over elapsed
    time; a saccade is strictly faster than the threshold.
    """
    if not trace:
        raise TraceError("empty gaze trace")
    times = np.array([s.time for s in trace])
    if np.any(np.diff(times) <= 0):
        raise TraceError("trace timestamps must be strictly increasing")
    gaze = np.array([s.gaze for s in trace])

    n = len(trace)
    speeds = np.zeros(n)
    if n > 1:
        if causal:
            step = np.linalg.norm(np.diff(gaze, axis=0), axis=1) / np.diff(times)
            speeds[1:] = step
            speeds[0] = 0.0  # no history yet
        else:
            speeds[0] = np.linalg.norm(gaze[1] - gaze[0]) / (times[1] - times[0])
            speeds[-1] = np.linalg.norm(gaze[-1] - gaze[-2]) / (times[-1] - times[-2])
            if n > 2:
                span = times[2:] - times[:-2]
                speeds[1:-1] = np.linalg.norm(gaze[2:] - gaze[:-2], axis=1) / span
    return [
        GazeState(gaze=tuple(gaze[i]), speed=float(speeds[i]),
                  mode="saccade" if speeds[i] > threshold else "fixation")
        for i in range(n)
    ]


def static_importance(gaze: tuple[float, float], x, y,
                      retina: RetinaParams = RetinaParams(),
                      params: PerceptionParams = PerceptionParams()):
    """E = M(x - g) + pedestal at field point(s) (x, y) in degrees."""
    return acuity_importance(np.asarray(x) - gaze[0], np.asarray(y) - gaze[1],
                             retina) + params.pedestal


def static_importance_field(gaze: tuple[float, float], display: DisplayParams,
                            retina: RetinaParams = RetinaParams(),
                            params: PerceptionParams = PerceptionParams()) -> np.ndarray:
    """E evaluated at every pixel center, (H, W)."""
    x, y = pixel_grid(display)
    return static_importance(gaze, x, y, retina, params)


def _popping_terms(before: LuminanceImage, after: LuminanceImage,
                   display: DisplayParams, spec: BandSpec,
                   params: PerceptionParams) -> tuple[np.ndarray, BandSpec]:
    """Per-band popping contributions (N, H, W) before gaze clamping.

    The Weber denominator uses the pre-change frame's band contrast: a
    change standing on strong existing contrast is masked, one appearing
    on a clean region is conspicuous.
    """
    require_display_shape(before, display)
    if before.samples.shape != after.samples.shape:
        raise DomainError("popping needs frames of identical shape")
    set_before = bandpass_decompose(before, display, spec)
    set_after = bandpass_decompose(after, display, spec)
    c_before = contrast_field(set_before)
    c_after = contrast_field(set_after)
    weights = csf(np.asarray(set_before.spec.centers), display.luminance)
    terms = weights[:, None, None] * np.abs(c_after - c_before) / (np.abs(c_before) + params.omega)
    return terms, set_before.spec


def popping_field(gaze: tuple[float, float], before: LuminanceImage,
                  after: LuminanceImage, display: DisplayParams,
                  spec: BandSpec | None = None,
                  retina: RetinaParams = RetinaParams(),
                  params: PerceptionParams = PerceptionParams()) -> np.ndarray:
    """Popping intensity P at every pixel for the change before -> after."""
    if spec is None:
        spec = BandSpec.octaves(display)
    terms, spec = _popping_terms(before, after, display, spec, params)
    mask = band_clamp_mask(gaze, display, spec, retina)
    return np.einsum("nhw,nhw->hw", terms, mask.astype(float))


def popping_intensity(gaze: tuple[float, float], before: LuminanceImage,
                      after: LuminanceImage, pixel: tuple[int, int],
                      display: DisplayParams, spec: BandSpec | None = None,
                      retina: RetinaParams = RetinaParams(),
                      params: PerceptionParams = PerceptionParams()) -> float:
    """P at a single pixel (row, col)."""
    field_ = popping_field(gaze, before, after, display, spec, retina, params)
    row, col = pixel
    if not (0 <= row < field_.shape[0] and 0 <= col < field_.shape[1]):
        raise DomainError(f"pixel {pixel} out of range")
    return float(field_[row, col])


def saccade_gaze_grid(display: DisplayParams,
                      params: PerceptionParams = PerceptionParams()) -> np.ndarray:
    """Hypothetical landing positions: cell centers of a uniform grid
    over the viewport, (rows * cols, 2) in degrees."""
    rows, cols = params.saccade_grid
    gx = ((np.arange(cols) + 0.5) / cols - 0.5) * display.horizontal_fov
    gy = (0.5 - (np.arange(rows) + 0.5) / rows) * display.vertical_fov
    xx, yy = np.meshgrid(gx, gy)
    return np.column_stack([xx.ravel(), yy.ravel()])


def saccade_band_weights(display: DisplayParams, spec: BandSpec,
                         retina: RetinaParams = RetinaParams(),
                         params: PerceptionParams = PerceptionParams()) -> np.ndarray:
    """Fraction of hypothetical gaze positions that resolve each band at
    each pixel, (N, H, W).  Averaging the gaze-clamped popping over the
    grid equals weighting the per-band terms by these fractions."""
    positions = saccade_gaze_grid(display, params)
    total = np.zeros((len(spec.centers), display.height, display.width))
    for gx, gy in positions:
        total += band_clamp_mask((gx, gy), display, spec, retina)
    return total / len(positions)


def adaptive_field(gaze_state: GazeState, before: LuminanceImage,
                   after: LuminanceImage, display: DisplayParams,
                   spec: BandSpec | None = None,
                   retina: RetinaParams = RetinaParams(),
                   params: PerceptionParams = PerceptionParams()) -> ImportanceField:
    """Adaptive importance A of the change before -> after, (H, W).

    Fixation: E - lambda * P under the actual gaze.  Saccade: mean
    popping over the hypothetical landing grid; the actual gaze does
    not enter, so the result is gaze-invariant by construction.
    """
    if spec is None:
        spec = BandSpec.octaves(display)
    terms, spec = _popping_terms(before, after, display, spec, params)
    if gaze_state.mode == "saccade":
        weights = saccade_band_weights(display, spec, retina, params)
        values = np.einsum("nhw,nhw->hw", terms, weights)
    else:
        mask = band_clamp_mask(gaze_state.gaze, display, spec, retina)
        popping = np.einsum("nhw,nhw->hw", terms, mask.astype(float))
        values = static_importance_field(gaze_state.gaze, display, retina, params) \
            - params.lambda_popping * popping
    return ImportanceField(values=values, mode=gaze_state.mode, gaze=gaze_state.gaze)


def progressive_field(gaze_state: GazeState, frames: list[LuminanceImage],
                      display: DisplayParams, spec: BandSpec | None = None,
                      retina: RetinaParams = RetinaParams(),
                      params: PerceptionParams = PerceptionParams()) -> ImportanceField:
    """Adaptive importance of a multi-step LoD chain: the telescoping
    sum of per-step adaptive fields over consecutive frames."""
    if len(frames) < 2:
        raise DomainError("progressive importance needs at least two frames")
    total = np.zeros((display.height, display.width))
    for lo, hi in zip(frames[:-1], frames[1:]):
        total += adaptive_field(gaze_state, lo, hi, display, spec, retina, params).values
    return ImportanceField(values=total, mode=gaze_state.mode, gaze=gaze_state.gaze,
                           meta={"steps": len(frames) - 1})


def popping_bound(spec: BandSpec, display: DisplayParams,
                  params: PerceptionParams = PerceptionParams()) -> float:
    """Analytic upper bound on P: every band at the contrast cap swinging
    to the opposite cap on a zero-contrast base."""
    from .contrast import C_MAX

    weights = csf(np.asarray(spec.centers), display.luminance)
    return float(np.sum(weights) * 2.0 * C_MAX / params.omega)


def importance_bounds(spec: BandSpec, display: DisplayParams,
                      retina: RetinaParams = RetinaParams(),
                      params: PerceptionParams = PerceptionParams()) -> tuple[float, float]:
    """(lower, upper) bounds of per-pixel adaptive importance.

    Lower: fixation with maximal popping, -lambda * P_max.  Upper: the
    foveal static importance (saccade values live in [0, P_max], also
    covered).  Used to normalize surrogate training targets.
    """
    p_max = popping_bound(spec, display, params)
    e_max = acuity_importance(0.0, 0.0, retina) + params.pedestal
    return (-params.lambda_popping * p_max, max(e_max, p_max))


# -- gaze trace file I/O --------------------------------------------------

TRACE_COLUMNS = [
    "time_s", "gaze_x_deg", "gaze_y_deg",
    "cam_pos_x", "cam_pos_y", "cam_pos_z",
    "cam_fwd_x", "cam_fwd_y", "cam_fwd_z",
    "cam_up_x", "cam_up_y", "cam_up_z",
]


def save_trace(path: str, trace: list[GazeSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for s in trace:
            writer.writerow([repr(v) for v in
                             (s.time, *s.gaze, *s.cam_pos, *s.cam_forward, *s.cam_up)])


def load_trace(path: str) -> list[GazeSample]:
    """Read a trace CSV; validates header, numbers and camera vectors."""
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise TraceError(f"cannot open trace file: {path}") from exc
    with fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_COLUMNS:
            raise TraceError(f"{path}: unexpected trace header {header}")
        samples = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACE_COLUMNS):
                raise TraceError(f"{path}:{lineno}: expected {len(TRACE_COLUMNS)} fields")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: non-numeric field") from exc
            samples.append(GazeSample(
                time=vals[0], gaze=(vals[1], vals[2]),
                cam_pos=tuple(vals[3:6]), cam_forward=tuple(vals[6:9]),
                cam_up=tuple(vals[9:12])))
    if not samples:
        raise TraceError(f"{path}: empty trace")
    return samples
