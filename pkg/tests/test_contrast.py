import numpy as np
import pytest

from gazestream import contrast, vision
from gazestream.errors import ConfigError, DomainError


DISPLAY = vision.DisplayParams(width=256, height=256, pixels_per_degree=16.0)


def noise_image(shape=(256, 256), lo=0.2, hi=0.8, seed=7):
    rng = np.random.default_rng(seed)
    return contrast.LuminanceImage(lo + (hi - lo) * rng.random(shape))


def grating(freq_cpd, shape=(256, 256), ppd=16.0, mean=0.5, amplitude=0.25):
    cycles = round(freq_cpd / ppd * shape[1])
    cols = np.arange(shape[1])
    wave = mean + amplitude * np.cos(2 * np.pi * cycles * cols / shape[1])
    return contrast.LuminanceImage(np.tile(wave, (shape[0], 1))), cycles


def test_default_band_layout():
    spec = contrast.BandSpec.octaves(DISPLAY, 6)
    # Top band support ends at the display band limit (8 cpd here), so
    # the top center sits one octave below it.
    assert spec.centers == (0.125, 0.25, 0.5, 1.0, 2.0, 4.0)
    ratios = np.diff(np.log2(spec.centers))
    assert np.allclose(ratios, 1.0)


def test_filter_bank_tiles_to_one():
    spec = contrast.BandSpec.octaves(DISPLAY, 6)
    low, bands = contrast.band_filters((256, 256), 16.0, spec)
    total = low + bands.sum(axis=0)
    assert np.abs(total - 1.0).max() < 1e-12


def test_reconstruction():
    img = noise_image()
    bandset = contrast.bandpass_decompose(img, DISPLAY)
    rec = contrast.reconstruct(bandset)
    assert np.abs(rec - img.samples).max() < 1e-6


def test_decompose_is_linear():
    img_a = noise_image(seed=1)
    img_b = noise_image(seed=2)
    combo = contrast.LuminanceImage(0.5 * img_a.samples + 0.25 * img_b.samples)
    spec = contrast.BandSpec.octaves(DISPLAY)
    bs_a = contrast.bandpass_decompose(img_a, DISPLAY, spec)
    bs_b = contrast.bandpass_decompose(img_b, DISPLAY, spec)
    bs_c = contrast.bandpass_decompose(combo, DISPLAY, spec)
    assert np.abs(bs_c.bands - (0.5 * bs_a.bands + 0.25 * bs_b.bands)).max() < 1e-6
    assert np.abs(bs_c.lowpass - (0.5 * bs_a.lowpass + 0.25 * bs_b.lowpass)).max() < 1e-6


def test_point_contrast_scale_invariant():
    base = noise_image(lo=0.02, hi=0.09)
    spec = contrast.BandSpec.octaves(DISPLAY)
    reference = contrast.contrast_field(contrast.bandpass_decompose(base, DISPLAY, spec))
    for scale in (0.5, 2.0, 10.0):
        scaled = contrast.LuminanceImage(base.samples * scale)
        field = contrast.contrast_field(contrast.bandpass_decompose(scaled, DISPLAY, spec))
        assert np.abs(field - reference).max() < 1e-9


def test_grating_energy_localizes_per_band():
    spec = contrast.BandSpec.octaves(DISPLAY, 6)
    for k, center in enumerate(spec.centers):
        img, cycles = grating(center)
        assert cycles >= 2  # representable on the 256 px grid
        bandset = contrast.bandpass_decompose(img, DISPLAY, spec)
        rms = np.sqrt((bandset.bands ** 2).mean(axis=(1, 2)))
        others = np.delete(rms, k)
        assert rms[k] >= 4.0 * others.max()


def test_michelson_half_contrast_grating():
    spec = contrast.BandSpec.octaves(DISPLAY, 6)
    img, cycles = grating(spec.centers[3])  # 1 cpd, comfortably in range
    bandset = contrast.bandpass_decompose(img, DISPLAY, spec)
    # Column 0 is a crest of the cosine.
    peak = contrast.point_contrast(bandset, 128, 0, 3)
    assert peak == pytest.approx(0.5, abs=1e-3)


def test_constant_image_zero_sensitivity():
    img = contrast.LuminanceImage(np.full((256, 256), 0.5))
    field = contrast.local_sensitivity((0.0, 0.0), img, DISPLAY)
    assert np.abs(field).max() == 0.0


def test_sensitivity_non_negative():
    img = noise_image()
    field = contrast.local_sensitivity((0.0, 0.0), img, DISPLAY)
    assert np.all(field >= 0.0)


def test_adding_a_band_never_decreases_sensitivity():
    # Shared lower bands stay identical; the added top band contributes
    # a non-negative term.  Content is band-limited below the smaller
    # set's top octave so the folded residual plays no role.
    small = contrast.BandSpec(centers=(0.25, 0.5, 1.0))
    large = contrast.BandSpec(centers=(0.25, 0.5, 1.0, 2.0))
    img, _ = grating(0.5)
    s_small = contrast.local_sensitivity((0.0, 0.0), img, DISPLAY, small)
    s_large = contrast.local_sensitivity((0.0, 0.0), img, DISPLAY, large)
    assert np.all(s_large >= s_small - 1e-9)


def test_band_clamp_reduces_peripheral_band_count():
    display = vision.DisplayParams(width=512, height=64, pixels_per_degree=14.0)
    spec = contrast.BandSpec.octaves(display, 6)
    gaze = (-17.0, 0.0)  # near the left edge
    mask = contrast.band_clamp_mask(gaze, display, spec)
    row = display.height // 2
    gaze_col = int(round(gaze[0] * display.pixels_per_degree + display.width / 2))
    foveal_bands = int(mask[:, row, gaze_col].sum())
    peripheral_bands = int(mask[:, row, display.width - 1].sum())
    assert foveal_bands == len(spec.centers)
    assert peripheral_bands < foveal_bands
    assert peripheral_bands > 0


def test_clamped_bands_contribute_zero():
    display = vision.DisplayParams(width=512, height=64, pixels_per_degree=14.0)
    spec = contrast.BandSpec.octaves(display, 6)
    gaze = (-17.0, 0.0)
    rng = np.random.default_rng(3)
    img = contrast.LuminanceImage(0.2 + 0.6 * rng.random((64, 512)))
    field = contrast.local_sensitivity(gaze, img, display, spec)
    # Rebuild by hand with the mask and compare: the masked-out bands
    # must not have leaked into the sum.
    bandset = contrast.bandpass_decompose(img, display, spec)
    cmag = np.abs(contrast.contrast_field(bandset))
    mask = contrast.band_clamp_mask(gaze, display, spec)
    weights = vision.csf(np.asarray(spec.centers), display.luminance)
    manual = np.einsum("n,nhw->hw", weights, cmag * mask)
    assert np.array_equal(field, manual)
    leak = np.einsum("n,nhw->hw", weights, cmag * ~mask)
    assert np.any(leak > 0)  # the construction actually clamps something


def test_sensitivity_equivariant_under_gaze_shift():
    # Periodic texture: shifting the gaze by a whole number of texture
    # periods shifts the sensitivity field by the same number of pixels.
    display = vision.DisplayParams(width=256, height=64, pixels_per_degree=8.0)
    spec = contrast.BandSpec.octaves(display, 4)
    period_px = 16
    cols = np.arange(256)
    wave = 0.5 + 0.2 * np.cos(2 * np.pi * cols / period_px)
    img = contrast.LuminanceImage(np.tile(wave, (64, 1)))
    shift_px = 2 * period_px
    shift_deg = shift_px / display.pixels_per_degree
    base = contrast.local_sensitivity((0.0, 0.0), img, display, spec)
    moved = contrast.local_sensitivity((shift_deg, 0.0), img, display, spec)
    assert np.abs(moved - np.roll(base, shift_px, axis=1)).max() < 1e-12


def test_dark_region_guard():
    # A half-black image stays finite everywhere thanks to the
    # denominator guard, and the cap bounds the contrast magnitude.
    img_arr = np.zeros((256, 256))
    img_arr[:, 128:] = 0.8
    bandset = contrast.bandpass_decompose(contrast.LuminanceImage(img_arr), DISPLAY)
    field = contrast.contrast_field(bandset)
    assert np.all(np.isfinite(field))
    assert np.abs(field).max() <= contrast.C_MAX


def test_band_center_above_nyquist_rejected():
    spec = contrast.BandSpec(centers=(1.0, 2.0, 9.0))  # Nyquist is 8 cpd
    img = noise_image()
    with pytest.raises(ConfigError):
        contrast.bandpass_decompose(img, DISPLAY, spec)


def test_band_spec_validation():
    with pytest.raises(ConfigError):
        contrast.BandSpec(centers=())
    with pytest.raises(ConfigError):
        contrast.BandSpec(centers=(2.0, 1.0))
    with pytest.raises(ConfigError):
        contrast.BandSpec(centers=(-1.0, 1.0))


def test_luminance_image_validation():
    with pytest.raises(DomainError):
        contrast.LuminanceImage(np.full((8, 8), -0.1))
    with pytest.raises(DomainError):
        contrast.LuminanceImage(np.full((8, 8), np.nan))
    with pytest.raises(DomainError):
        contrast.LuminanceImage(np.zeros(16))


def test_point_contrast_bounds_checked():
    bandset = contrast.bandpass_decompose(noise_image(), DISPLAY)
    with pytest.raises(DomainError):
        contrast.point_contrast(bandset, 0, 0, 99)
    with pytest.raises(DomainError):
        contrast.point_contrast(bandset, 999, 0, 0)


def test_kernels_match_fft_filtering():
    spec = contrast.BandSpec.octaves(DISPLAY, 4)
    img = noise_image(shape=(64, 64))
    display = vision.DisplayParams(width=64, height=64, pixels_per_degree=16.0)
    bandset = contrast.bandpass_decompose(img, display, spec)
    kernels = contrast.band_kernels((64, 64), 16.0, spec)
    spectrum = np.fft.fft2(img.samples)
    low = np.fft.ifft2(spectrum * np.fft.fft2(kernels[0])).real
    assert np.abs(low - bandset.lowpass).max() < 1e-10
    for i in range(4):
        band = np.fft.ifft2(spectrum * np.fft.fft2(kernels[i + 1])).real
        assert np.abs(band - bandset.bands[i]).max() < 1e-10


def test_debug_export_writes_pgms(tmp_path):
    bandset = contrast.bandpass_decompose(noise_image(shape=(64, 64), seed=5),
                                          vision.DisplayParams(width=64, height=64,
                                                               pixels_per_degree=16.0),
                                          contrast.BandSpec.octaves(DISPLAY, 3))
    paths = contrast.export_band_debug(bandset, str(tmp_path))
    assert len(paths) == 1 + 2 * 3
    from gazestream import imaging
    for path in paths:
        arr = imaging.read_pgm(path)
        assert arr.shape == (64, 64)
