import math

import numpy as np
import pytest

from vbmpipe.augment import (
    ALL_KINDS,
    AugmentSpec,
    apply_augment,
    apply_intensity,
    apply_spatial,
    bias_field,
    downsample_blur,
    kspace_artifact,
    polynomial_basis_size,
    rician_noise,
)
from vbmpipe.errors import MagnitudeOutOfRange
from vbmpipe.phantoms import checkerboard
from vbmpipe.volume import Volume3D


def smooth_volume(dims=(16, 16, 16), seed=0):
    rng = np.random.default_rng(seed)
    grid = np.indices(dims, dtype=np.float64)
    c = (np.asarray(dims) - 1) / 2.0
    r2 = ((grid - c[:, None, None, None]) ** 2).sum(axis=0)
    data = np.exp(-r2 / 30.0) + 0.1 * rng.random(dims)
    return Volume3D.from_data(data)


MAGNITUDES = {
    "flip": 0.0, "rotate": 8.0, "zoom": 0.07, "warp": 0.05,
    "brightness": 0.3, "contrast": -0.2, "bias_field": 0.4,
    "noise_rician": 0.1, "ghosting": 0.5, "spike": 0.3, "gibbs": 0.4,
    "motion": 0.8, "downsample": 2.0, "blur": 4.0,
}


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_deterministic_under_fixed_seed(kind):
    vol = smooth_volume()
    spec = AugmentSpec(kind=kind, magnitude=MAGNITUDES[kind], seed=1234)
    a = apply_augment(vol, spec)
    b = apply_augment(vol, spec)
    assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize("kind", [k for k in ALL_KINDS
                                  if k not in ("flip", "downsample")])
def test_zero_magnitude_is_identity(kind):
    vol = smooth_volume()  # strictly positive data, so |.| is harmless
    if kind == "noise_rician":
        spec = AugmentSpec(kind=kind, magnitude=0.0, seed=5)
        out = apply_augment(vol, spec)
        np.testing.assert_allclose(out.data, vol.data, atol=1e-9)
        return
    spec = AugmentSpec(kind=kind, magnitude=0.0, seed=5)
    out = apply_augment(vol, spec)
    np.testing.assert_allclose(out.data, vol.data, atol=1e-6 * max(1, vol.data.max()))


def test_geometry_preserved():
    vol = smooth_volume()
    for kind in ("bias_field", "noise_rician", "brightness", "contrast"):
        out = apply_augment(vol, AugmentSpec(kind=kind, magnitude=MAGNITUDES[kind], seed=0))
        assert out.dims == vol.dims
        assert out.spacing == vol.spacing
        np.testing.assert_array_equal(out.affine, vol.affine)


def test_flip_involution():
    vol = smooth_volume()
    spec = AugmentSpec(kind="flip", magnitude=0.0, seed=0)
    assert np.array_equal(apply_spatial(apply_spatial(vol, spec), spec).data, vol.data)


def test_rotate_zero_identity():
    vol = smooth_volume()
    out = apply_spatial(vol, AugmentSpec(kind="rotate", magnitude=0.0, seed=9))
    np.testing.assert_allclose(out.data, vol.data, atol=1e-12)


def test_zoom_near_inverse():
    vol = smooth_volume(dims=(24, 24, 24))
    z1 = apply_spatial(vol, AugmentSpec(kind="zoom", magnitude=0.1, seed=0))
    z2 = apply_spatial(z1, AugmentSpec(kind="zoom", magnitude=1 / 1.1 - 1.0, seed=0))
    mse = np.mean((z2.data - vol.data) ** 2)
    assert mse < 1e-3 * vol.data.max() ** 2


def test_brightness_additive():
    vol = Volume3D.from_data(np.zeros((4, 4, 4)))
    data = vol.data.copy()
    data[0, 0, 0] = 1.0  # range = 1
    vol = vol.like(data)
    out = apply_intensity(vol, AugmentSpec(kind="brightness", magnitude=0.5, seed=0))
    assert out.data[1, 1, 1] == pytest.approx(0.5)


def test_contrast_preserves_mean():
    vol = smooth_volume()
    out = apply_intensity(vol, AugmentSpec(kind="contrast", magnitude=0.4, seed=0))
    assert out.data.mean() == pytest.approx(vol.data.mean(), abs=1e-6)


def test_bias_field_mean_one_ratio():
    vol = smooth_volume()
    out = bias_field(vol, order=4, magnitude=0.5, seed=3)
    ratio = out.data / vol.data
    assert ratio.mean() == pytest.approx(1.0, abs=1e-6)
    assert np.all(ratio > 0)


def test_bias_field_zero_magnitude():
    vol = smooth_volume()
    out = bias_field(vol, order=4, magnitude=0.0, seed=3)
    np.testing.assert_allclose(out.data, vol.data, atol=1e-12)


def test_polynomial_basis_count():
    # brute-force enumeration of monomials x^a y^b z^c with a+b+c <= 4
    count = sum(1 for a in range(5) for b in range(5) for c in range(5)
                if a + b + c <= 4)
    assert count == 35
    assert polynomial_basis_size(4) == 35


def test_rician_zero_signal_mean():
    sigma = 0.7
    vol = Volume3D.from_data(np.zeros((100, 100, 100)))
    out = rician_noise(vol, sigma, seed=11)
    expected = sigma * math.sqrt(math.pi / 2.0)  # Rayleigh mean
    assert abs(out.data.mean() - expected) / expected < 0.02
    assert np.all(out.data >= 0)


def test_rician_vanishing_sigma():
    vol = smooth_volume()
    out = rician_noise(vol, sigma=1e-12, seed=0)
    np.testing.assert_allclose(out.data, vol.data, atol=1e-9)


def test_gibbs_zero_truncation_round_trip():
    vol = smooth_volume()
    out = kspace_artifact(vol, AugmentSpec(kind="gibbs", magnitude=0.0, seed=0))
    assert np.max(np.abs(out.data - vol.data)) < 1e-6 * np.max(np.abs(vol.data))


def test_spike_on_zero_volume_is_sinusoid():
    dims = (8, 8, 8)
    vol = Volume3D.from_data(np.zeros(dims))
    spec = AugmentSpec(kind="spike", magnitude=0.25, seed=7)
    out = kspace_artifact(vol, spec)
    # oracle: the same seeded location, single-coefficient inverse DFT
    rng = np.random.default_rng(7)
    loc = tuple(int(rng.integers(0, d)) for d in dims)
    n = np.prod(dims)
    amp = 0.25 * float(n)  # reference falls back to the voxel count
    grid = np.indices(dims, dtype=np.float64)
    phase = 2 * np.pi * sum(grid[a] * loc[a] / dims[a] for a in range(3))
    expected = amp * np.cos(phase) / n
    np.testing.assert_allclose(out.data, expected, atol=1e-10)


def test_ghosting_preserves_mean():
    vol = smooth_volume()
    out = kspace_artifact(vol, AugmentSpec(kind="ghosting", magnitude=0.7, seed=2))
    assert out.data.mean() == pytest.approx(vol.data.mean(), abs=1e-6)
    assert np.max(np.abs(out.data - vol.data)) > 1e-6  # it did something


def test_motion_changes_image_and_stays_finite():
    vol = smooth_volume()
    out = kspace_artifact(vol, AugmentSpec(kind="motion", magnitude=1.0, seed=4))
    assert np.all(np.isfinite(out.data))
    assert np.max(np.abs(out.data - vol.data)) > 1e-6


def test_downsample_constant_unchanged():
    vol = Volume3D.from_data(np.full((12, 12, 12), 3.3))
    out = downsample_blur(vol, AugmentSpec(kind="downsample", magnitude=2.0, seed=0))
    np.testing.assert_allclose(out.data, 3.3, atol=1e-12)


def test_downsample_reduces_checkerboard_variance():
    board = checkerboard((16, 16, 16), seed=0)
    out = downsample_blur(board, AugmentSpec(kind="downsample", magnitude=2.0, seed=0))
    assert out.data.var() < board.data.var()


def test_blur_delegates_to_gaussian():
    from vbmpipe.volume import gaussian_smooth

    vol = smooth_volume()
    out = downsample_blur(vol, AugmentSpec(kind="blur", magnitude=4.0, seed=0))
    np.testing.assert_array_equal(out.data, gaussian_smooth(vol, 4.0).data)


def test_magnitude_out_of_range():
    with pytest.raises(MagnitudeOutOfRange):
        AugmentSpec(kind="rotate", magnitude=20.0, seed=0)
    with pytest.raises(MagnitudeOutOfRange):
        AugmentSpec(kind="zoom", magnitude=0.3, seed=0)
    with pytest.raises(MagnitudeOutOfRange):
        AugmentSpec(kind="brightness", magnitude=0.7, seed=0)
    with pytest.raises(MagnitudeOutOfRange):
        downsample_blur(smooth_volume(),
                        AugmentSpec(kind="downsample", magnitude=2.5, seed=0))
