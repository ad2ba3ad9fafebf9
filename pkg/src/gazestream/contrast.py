"""Band-limited point contrast and CSF-weighted local sensitivity.

An image is split into one-octave-wide frequency bands with cosine-log
filters in the DFT domain.  The filter for a band centered at nu (the
log-midpoint of its octave support) has radial response

    W(f) = 0.5 * (1 + cos(pi * log2(f / nu)))      for nu/2 < f < 2*nu

and zero elsewhere.  Adjacent octave filters tile the log-frequency axis
(they sum to one), the region below the lowest band becomes the lowpass
"local mean" response, and the residual above the highest band is folded
into that band so the whole bank still sums to one and the decomposition
reconstructs the image exactly.

Point contrast at a pixel is the band response over the local mean,

    c = G_band / max(G_lowpass, EPS_DC)

a band-limited relative contrast in the spirit of Peli's local contrast.
The denominator guard makes dark regions well defined, and the result is
clipped to +-C_MAX so downstream popping scores have an analytic bound.
Local sensitivity weights each band's contrast magnitude by the CSF at
the display's adaptation luminance and keeps only bands the viewer can
resolve at that pixel given the current gaze.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imaging
from .errors import ConfigError, DomainError
from .vision import DisplayParams, RetinaParams, clamped_band, csf, pixel_grid

# Denominator guard for point contrast, as a fraction of peak display
# luminance (images are stored normalized to peak = 1.0).
EPS_DC = 1e-4

# Hard cap on band contrast magnitude.  Keeps popping scores bounded so
# surrogate training targets and importance bounds can be derived in
# closed form; ordinary content sits far below the cap.
C_MAX = 4.0


@dataclass(frozen=True)
class LuminanceImage:
    """A luminance image normalized so 1.0 is peak display luminance."""

    samples: np.ndarray  # (H, W) float64

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 4 or arr.shape[1] < 4:
            raise DomainError(f"luminance image must be 2D and at least 4x4, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("luminance image contains non-finite samples")
        if np.any(arr < 0):
            raise DomainError("luminance image contains negative samples")
        object.__setattr__(self, "samples", arr)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class BandSpec:
    """Band center frequencies in cycles per degree, ascending."""

    centers: tuple[float, ...]

    def __post_init__(self):
        if len(self.centers) < 1:
            raise ConfigError("band spec needs at least one band")
        arr = np.asarray(self.centers, dtype=np.float64)
        if np.any(arr <= 0) or np.any(np.diff(arr) <= 0):
            raise ConfigError(f"band centers must be positive and ascending, got {self.centers}")

    @staticmethod
    def octaves(display: DisplayParams, count: int = 6) -> "BandSpec":
        """Octave-spaced centers whose top band support ends at the
        display band limit (top center = band_limit / 2)."""
        if count < 1:
            raise ConfigError("band count must be at least 1")
        top = display.band_limit / 2.0
        centers = tuple(top * 2.0 ** (i - count + 1) for i in range(count))
        return BandSpec(centers=centers)

    def validate_for(self, display: DisplayParams) -> None:
        nyquist = 0.5 * display.pixels_per_degree
        if self.centers[-1] > nyquist:
            raise ConfigError(
                f"top band center {self.centers[-1]:.4g} cpd exceeds display "
                f"Nyquist {nyquist:.4g} cpd")


@dataclass
class BandSet:
    """Decomposition of one image: lowpass plus per-band responses."""

    spec: BandSpec
    pixels_per_degree: float
    lowpass: np.ndarray   # (H, W)
    bands: np.ndarray     # (N, H, W)


def band_filters(shape: tuple[int, int], pixels_per_degree: float,
                 spec: BandSpec) -> tuple[np.ndarray, np.ndarray]:
    """DFT-domain filter bank: (lowpass (H, W), bands (N, H, W)).

    The bank sums to exactly one at every frequency bin: the residual
    above the top band's octave is folded into the top band.
    """
    height, width = shape
    fy = np.fft.fftfreq(height) * pixels_per_degree
    fx = np.fft.fftfreq(width) * pixels_per_degree
    freq = np.hypot(fy[:, None], fx[None, :])  # cycles per degree

    centers = np.asarray(spec.centers)
    bands = np.zeros((len(centers), height, width))
    positive = freq > 0
    logf = np.full_like(freq, -np.inf)
    logf[positive] = np.log2(freq[positive])
    for i, center in enumerate(centers):
        t = logf - np.log2(center)
        inside = np.abs(t) < 1.0
        bands[i, inside] = 0.5 * (1.0 + np.cos(np.pi * t[inside]))

    lowpass = np.zeros_like(freq)
    lowest = centers[0]
    lowpass[freq <= lowest / 2.0] = 1.0
    shoulder = (freq > lowest / 2.0) & (freq < lowest)
    lowpass[shoulder] = 1.0 - bands[0, shoulder]

    residual = 1.0 - lowpass - bands.sum(axis=0)
    bands[-1] += residual
    return lowpass, bands


def bandpass_decompose(image: LuminanceImage, display: DisplayParams,
                       spec: BandSpec | None = None) -> BandSet:
    """Split an image into lowpass and band responses (all spatial domain)."""
    if spec is None:
        spec = BandSpec.octaves(display)
    spec.validate_for(display)
    ppd = display.pixels_per_degree
    low_mask, band_masks = band_filters(image.samples.shape, ppd, spec)
    spectrum = np.fft.fft2(image.samples)
    lowpass = np.fft.ifft2(spectrum * low_mask).real
    bands = np.empty((len(spec.centers),) + image.samples.shape)
    for i in range(len(spec.centers)):
        bands[i] = np.fft.ifft2(spectrum * band_masks[i]).real
    return BandSet(spec=spec, pixels_per_degree=ppd, lowpass=lowpass, bands=bands)


def reconstruct(bandset: BandSet) -> np.ndarray:
    """Sum of lowpass and all band responses; equals the source image up
    to FFT round-off because the filter bank tiles to one."""
    return bandset.lowpass + bandset.bands.sum(axis=0)


def contrast_field(bandset: BandSet, eps_dc: float = EPS_DC,
                   c_max: float = C_MAX) -> np.ndarray:
    """Per-band point contrast (N, H, W), guarded and clipped.

    Scale-free: multiplying the source image by a constant leaves the
    field unchanged wherever the lowpass exceeds eps_dc.
    """
    denom = np.maximum(bandset.lowpass, eps_dc)
    return np.clip(bandset.bands / denom, -c_max, c_max)


def point_contrast(bandset: BandSet, row: int, col: int, band: int,
                   eps_dc: float = EPS_DC, c_max: float = C_MAX) -> float:
    """Contrast of one band at one pixel."""
    if not (0 <= band < bandset.bands.shape[0]):
        raise DomainError(f"band index {band} out of range")
    if not (0 <= row < bandset.lowpass.shape[0] and 0 <= col < bandset.lowpass.shape[1]):
        raise DomainError(f"pixel ({row}, {col}) out of range")
    denom = max(float(bandset.lowpass[row, col]), eps_dc)
    return float(np.clip(bandset.bands[band, row, col] / denom, -c_max, c_max))


def require_display_shape(image: LuminanceImage, display: DisplayParams) -> None:
    if image.samples.shape != (display.height, display.width):
        raise DomainError(
            f"image shape {image.samples.shape} does not match display "
            f"{display.height}x{display.width}")


def band_clamp_mask(gaze: tuple[float, float], display: DisplayParams,
                    spec: BandSpec, retina: RetinaParams = RetinaParams()) -> np.ndarray:
    """Boolean (N, H, W): band i is resolvable at pixel x under the gaze.

    A band counts only while its center frequency lies strictly below
    the pixel's clamped band limit; everything above is hard zero.
    """
    x, y = pixel_grid(display)
    limit = clamped_band(gaze[0], gaze[1], x, y, display, retina)
    centers = np.asarray(spec.centers)
    return centers[:, None, None] < limit[None, :, :]


def local_sensitivity(gaze: tuple[float, float], image: LuminanceImage,
                      display: DisplayParams, spec: BandSpec | None = None,
                      retina: RetinaParams = RetinaParams()) -> np.ndarray:
    """CSF-weighted sum of resolvable band contrast magnitudes, (H, W).

    Non-negative; zero for constant images and beyond the acuity limit.
    The image is a screen-space frame, so its shape must match the
    display resolution.
    """
    require_display_shape(image, display)
    bandset = bandpass_decompose(image, display, spec)
    contrast = np.abs(contrast_field(bandset))
    mask = band_clamp_mask(gaze, display, bandset.spec, retina)
    weights = csf(np.asarray(bandset.spec.centers), display.luminance)
    return np.einsum("n,nhw->hw", weights, contrast * mask)


def band_kernels(shape: tuple[int, int], pixels_per_degree: float,
                 spec: BandSpec) -> np.ndarray:
    """Spatial-domain kernels of the filter bank, (N + 1, H, W).

    Index 0 is the lowpass kernel, 1..N the bands.  Filtering an image
    with these by circular convolution reproduces bandpass_decompose
    exactly, which lets sparse image edits update band responses locally
    instead of re-running full FFTs.
    """
    low_mask, band_masks = band_filters(shape, pixels_per_degree, spec)
    kernels = np.empty((len(spec.centers) + 1,) + shape)
    kernels[0] = np.fft.ifft2(low_mask).real
    for i in range(len(spec.centers)):
        kernels[i + 1] = np.fft.ifft2(band_masks[i]).real
    return kernels


def export_band_debug(bandset: BandSet, directory: str, prefix: str = "band") -> list[str]:
    """Write lowpass, band responses and contrast fields as PGM files."""
    import os

    paths = []
    path = os.path.join(directory, f"{prefix}_lowpass.pgm")
    imaging.write_pgm(path, imaging.normalized(bandset.lowpass))
    paths.append(path)
    contrast = contrast_field(bandset)
    for i, center in enumerate(bandset.spec.centers):
        path = os.path.join(directory, f"{prefix}_{i}_{center:.3f}cpd.pgm")
        imaging.write_pgm(path, imaging.normalized(bandset.bands[i]))
        paths.append(path)
        path = os.path.join(directory, f"{prefix}_{i}_{center:.3f}cpd_contrast.pgm")
        imaging.write_pgm(path, imaging.normalized(contrast[i]))
        paths.append(path)
    return paths
