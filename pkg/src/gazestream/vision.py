"""Retinal sampling and contrast sensitivity models.

The acuity side follows the midget retinal ganglion cell density model
fitted by Watson (2014, J. Vision).  Density along a visual-field
meridian at eccentricity r degrees is

    rho(r, m) = 2 * rho_cone * (1 + r/41.03)^-1
                * [ a_m * (1 + r/r2_m)^-2 + (1 - a_m) * exp(-r/re_m) ]

with rho_cone the foveal cone density and (a_m, r2_m, re_m) per-meridian
fit constants.  The factor 2 counts on/off midget pairs, so the foveal
value is exactly twice the cone density.  Nyquist-style receptor spacing
at field position (x, y) combines the horizontal and vertical meridian
densities:

    sigma(x, y) = (1/r) * sqrt( (2/sqrt(3)) * (x^2/rho_h(r) + y^2/rho_v(r)) )

which tends to sqrt((2/sqrt(3)) / (2 * rho_cone)) at the fovea.  The
acuity importance of a point is the highest resolvable frequency
M = 0.5 / sigma in cycles per degree.

Contrast sensitivity uses Barten's fitted approximation

    csf(nu, L) = a * nu * exp(-b*nu) * sqrt(1 + 0.06 * exp(b*nu))

with a and b functions of the adaptation luminance L (cd/m^2).  It is
zero at nu = 0 and unimodal in nu.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError
from . import configio

_SPACING_FACTOR = 2.0 / np.sqrt(3.0)  # hex-lattice packing factor

# Watson (2014) meridian order; index 1..4 in the density formula.
MERIDIANS = ("temporal", "superior", "nasal", "inferior")


@dataclass(frozen=True)
class RetinaParams:
    """Parameters of the retinal density model.

    Defaults are Watson's published fits.  meridian_mode selects how the
    2D spacing formula picks its horizontal/vertical densities:
    "symmetric" averages the opposing meridians (nasal/temporal for
    horizontal, superior/inferior for vertical), "quadrant" picks the
    meridian on the side of the field the point falls in.
    """

    cone_density: float = 14804.6      # foveal cone density, deg^-2
    eccentricity_scale: float = 41.03  # global falloff scale, deg
    temporal: tuple[float, float, float] = (0.9851, 1.058, 22.14)
    superior: tuple[float, float, float] = (0.9935, 1.035, 16.35)
    nasal: tuple[float, float, float] = (0.9729, 1.084, 7.633)
    inferior: tuple[float, float, float] = (0.996, 0.9932, 12.13)
    meridian_mode: str = "symmetric"

    def __post_init__(self):
        if self.cone_density <= 0:
            raise ConfigError(f"cone_density must be positive, got {self.cone_density}")
        if self.eccentricity_scale <= 0:
            raise ConfigError(f"eccentricity_scale must be positive, got {self.eccentricity_scale}")
        if self.meridian_mode not in ("symmetric", "quadrant"):
            raise ConfigError(f"unknown meridian_mode: {self.meridian_mode!r}")
        for name in MERIDIANS:
            a, r2, re = getattr(self, name)
            if not (0.0 <= a <= 1.0) or r2 <= 0 or re <= 0:
                raise ConfigError(f"bad meridian constants for {name}: {(a, r2, re)}")

    def meridian_constants(self, meridian) -> tuple[float, float, float]:
        """Constants for a meridian given by 1-based index or name."""
        if isinstance(meridian, str):
            if meridian not in MERIDIANS:
                raise DomainError(f"unknown meridian {meridian!r}")
            return getattr(self, meridian)
        if meridian not in (1, 2, 3, 4):
            raise DomainError(f"meridian index must be 1..4, got {meridian!r}")
        return getattr(self, MERIDIANS[meridian - 1])


@dataclass(frozen=True)
class DisplayParams:
    """Geometry and photometry of the simulated display.

    Pixel-to-degree conversion is linear through pixels_per_degree
    (small-angle approximation); the rasterizer's perspective projection
    derives its field of view from the same constant so the two stay
    consistent.  display_band is the highest displayable spatial
    frequency in cycles per pixel (0.5 = Nyquist).
    """

    width: int                   # pixels
    height: int                  # pixels
    pixels_per_degree: float
    luminance: float = 100.0     # peak/adaptation luminance, cd/m^2
    display_band: float = 0.5    # cycles per pixel

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"display resolution must be positive, got {self.width}x{self.height}")
        if self.pixels_per_degree <= 0:
            raise ConfigError(f"pixels_per_degree must be positive, got {self.pixels_per_degree}")
        if self.luminance <= 0:
            raise ConfigError(f"luminance must be positive, got {self.luminance}")
        if not (0.0 < self.display_band <= 0.5):
            raise ConfigError(f"display_band must be in (0, 0.5], got {self.display_band}")

    @property
    def vertical_fov(self) -> float:
        """Vertical field of view in degrees (height / pixels_per_degree)."""
        return self.height / self.pixels_per_degree

    @property
    def horizontal_fov(self) -> float:
        return self.width / self.pixels_per_degree

    @property
    def band_limit(self) -> float:
        """Highest displayable frequency in cycles per degree."""
        return self.display_band * self.pixels_per_degree


def ganglion_density(r, meridian, retina: RetinaParams = RetinaParams()):
    """Midget ganglion cell density (deg^-2) at eccentricity r on a meridian.

    Accepts scalar or array r in degrees; r must be non-negative.
    """
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise DomainError("eccentricity must be non-negative")
    a, r2, re = retina.meridian_constants(meridian)
    falloff = 1.0 / (1.0 + r / retina.eccentricity_scale)
    bracket = a * (1.0 + r / r2) ** -2.0 + (1.0 - a) * np.exp(-r / re)
    out = 2.0 * retina.cone_density * falloff * bracket
    return float(out) if out.ndim == 0 else out


def _paired_density(r, pos_constants, neg_constants, coord, retina, mode):
    """Density along one axis, averaging or selecting opposing meridians."""
    def dens(c):
        a, r2, re = c
        falloff = 1.0 / (1.0 + r / retina.eccentricity_scale)
        bracket = a * (1.0 + r / r2) ** -2.0 + (1.0 - a) * np.exp(-r / re)
        return 2.0 * retina.cone_density * falloff * bracket

    if mode == "symmetric":
        return 0.5 * (dens(pos_constants) + dens(neg_constants))
    return np.where(coord >= 0, dens(pos_constants), dens(neg_constants))


def receptor_spacing(x, y, retina: RetinaParams = RetinaParams()):
    """Local receptor spacing (degrees) at visual-field position (x, y).

    x is degrees along the horizontal meridian (positive toward the
    temporal field), y along the vertical (positive superior).  The
    spacing is finite and positive everywhere, with the foveal limit
    sqrt((2/sqrt(3)) / (2 * rho_cone)).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x, y = np.broadcast_arrays(x, y)
    r = np.hypot(x, y)
    safe_r = np.where(r > 0, r, 1.0)

    rho_h = _paired_density(r, retina.temporal, retina.nasal, x, retina, retina.meridian_mode)
    rho_v = _paired_density(r, retina.superior, retina.inferior, y, retina, retina.meridian_mode)

    spacing = np.sqrt(_SPACING_FACTOR * (x * x / rho_h + y * y / rho_v)) / safe_r
    foveal = np.sqrt(_SPACING_FACTOR / (2.0 * retina.cone_density))
    out = np.where(r > 0, spacing, foveal)
    return float(out) if out.ndim == 0 else out


def acuity_importance(x, y, retina: RetinaParams = RetinaParams()):
    """Highest resolvable frequency M = 0.5 / sigma, cycles per degree."""
    spacing = receptor_spacing(x, y, retina)
    out = 0.5 / np.asarray(spacing)
    return float(out) if out.ndim == 0 else out


def csf(freq, luminance):
    """Barten contrast sensitivity at frequency freq (cpd) and luminance L.

    Vectorized over freq.  freq must be >= 0 and luminance > 0.
    """
    freq = np.asarray(freq, dtype=np.float64)
    if np.any(freq < 0):
        raise DomainError("spatial frequency must be non-negative")
    if np.any(np.asarray(luminance) <= 0):
        raise DomainError("luminance must be positive")
    a = 540.0 * (1.0 + 0.7 / luminance) ** -0.2 / (1.0 + 1.0 / (1.0 + freq / 3.0))
    b = 0.3 * (1.0 + 100.0 / luminance) ** 0.15
    out = a * freq * np.exp(-b * freq) * np.sqrt(1.0 + 0.06 * np.exp(b * freq))
    return float(out) if out.ndim == 0 else out


def csf_peak(luminance: float, grid_points: int = 2048) -> float:
    """Maximum of the CSF over frequency at a given luminance.

    Evaluated on a dense log grid; used for analytic bounds, where a
    slight overestimate of the true peak is acceptable.
    """
    grid = np.logspace(-3, np.log10(120.0), grid_points)
    return float(np.max(csf(grid, luminance)))


def clamped_band(gaze_x, gaze_y, x, y, display: DisplayParams,
                 retina: RetinaParams = RetinaParams()):
    """Effective band limit at field point (x, y) under gaze (gaze_x, gaze_y).

    The displayable band and the retinal acuity limit at the point's
    gaze-relative eccentricity are both ceilings; the lower one wins.
    Result is in cycles per degree and strictly positive.
    """
    acuity = acuity_importance(np.asarray(x) - gaze_x, np.asarray(y) - gaze_y, retina)
    out = np.minimum(display.band_limit, acuity)
    return float(out) if np.ndim(out) == 0 else out


def pixel_grid(display: DisplayParams) -> tuple[np.ndarray, np.ndarray]:
    """Degree coordinates of every pixel center as (X, Y) arrays (H, W).

    Origin at the screen center, x right, y up; row 0 is the top row.
    """
    ppd = display.pixels_per_degree
    cols = (np.arange(display.width) + 0.5 - display.width / 2.0) / ppd
    rows = (display.height / 2.0 - (np.arange(display.height) + 0.5)) / ppd
    return np.broadcast_to(cols, (display.height, display.width)).copy(), \
        np.broadcast_to(rows[:, None], (display.height, display.width)).copy()


# -- config file loading -------------------------------------------------

def retina_from_config(path: str) -> RetinaParams:
    """Load RetinaParams from a key-value file; missing keys keep defaults.

    Recognized keys: cone_density, eccentricity_scale, meridian_mode, and
    per-meridian triples like ``temporal = a, r2, re``.
    """
    values = configio.read_config(path)
    params = RetinaParams()
    updates = {}
    for key, value in values.items():
        if key in ("cone_density", "eccentricity_scale"):
            updates[key] = float(value)
        elif key == "meridian_mode":
            updates[key] = str(value)
        elif key in MERIDIANS:
            if not isinstance(value, tuple) or len(value) != 3:
                raise ConfigError(f"{path}: {key} needs three comma-separated values")
            updates[key] = tuple(float(v) for v in value)
        else:
            raise ConfigError(f"{path}: unknown retina key {key!r}")
    return replace(params, **updates)


def display_from_config(path: str) -> DisplayParams:
    """Load DisplayParams from a key-value file.

    Requires width, height and pixels_per_degree; luminance and
    display_band are optional.
    """
    values = configio.read_config(path)
    allowed = {"width", "height", "pixels_per_degree", "luminance", "display_band"}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown display keys {sorted(unknown)}")
    for required in ("width", "height", "pixels_per_degree"):
        if required not in values:
            raise ConfigError(f"{path}: missing display key {required!r}")
    return DisplayParams(
        width=int(values["width"]),
        height=int(values["height"]),
        pixels_per_degree=float(values["pixels_per_degree"]),
        luminance=float(values.get("luminance", 100.0)),
        display_band=float(values.get("display_band", 0.5)),
    )
