"""Seeded MRI augmentations: spatial/intensity transforms, bias fields,
Rician noise, k-space artifacts and resolution degradation.

Every transform is a pure function of (volume, kind, magnitude, seed), so
repeated application is bit-identical. Magnitude 0 is the identity for every
kind that has a magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import MagnitudeOutOfRange
from .phantoms import smooth_random_field
from .volume import Volume3D, gaussian_smooth, sample_array_trilinear

SPATIAL_KINDS = ("flip", "rotate", "zoom", "warp")
INTENSITY_KINDS = ("brightness", "contrast")
KSPACE_KINDS = ("ghosting", "spike", "gibbs", "motion")
RESOLUTION_KINDS = ("downsample", "blur")
ALL_KINDS = SPATIAL_KINDS + INTENSITY_KINDS + ("bias_field", "noise_rician") \
    + KSPACE_KINDS + RESOLUTION_KINDS

# documented magnitude ranges per kind (inclusive)
MAGNITUDE_RANGES = {
    "flip": (0.0, 0.0),          # no magnitude; involution
    "rotate": (-15.0, 15.0),     # degrees
    "zoom": (-0.1, 0.1),         # factor = 1 + magnitude, i.e. [0.9, 1.1]
    "warp": (0.0, 0.1),          # displacement as fraction of extent
    "brightness": (-0.5, 0.5),   # shift in units of the intensity range
    "contrast": (-0.5, 0.5),     # scale about the mean by 1 + magnitude
    "bias_field": (0.0, 1.0),    # polynomial coefficient range
    "noise_rician": (0.0, np.inf),
    "ghosting": (0.0, 1.0),      # attenuation of every k-th plane
    "spike": (0.0, 2.0),         # spike amplitude relative to max |k-space|
    "gibbs": (0.0, 0.9),         # fraction of high frequencies removed
    "motion": (0.0, 1.0),        # shift scale, up to 2 voxels per copy
    "downsample": (2.0, 4.0),    # integer factor
    "blur": (0.0, 8.0),          # FWHM in mm
}

GHOST_SPACING = 4  # every k-th k-space plane is modulated
MOTION_COPIES = 3


@dataclass(frozen=True)
class AugmentSpec:
    kind: str
    magnitude: float
    seed: int

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        lo, hi = MAGNITUDE_RANGES[self.kind]
        if not (lo <= self.magnitude <= hi):
            raise MagnitudeOutOfRange(
                f"{self.kind} magnitude {self.magnitude} outside [{lo}, {hi}]"
            )


def _resample_at(vol: Volume3D, coords: np.ndarray) -> Volume3D:
    data = sample_array_trilinear(vol.data, coords.reshape(3, -1)).reshape(vol.dims)
    return vol.like(data)


def _center(dims) -> np.ndarray:
    return (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0


def apply_spatial(vol: Volume3D, spec: AugmentSpec) -> Volume3D:
    """flip / rotate / zoom / warp with trilinear resampling."""
    if spec.kind not in SPATIAL_KINDS:
        raise ValueError(f"{spec.kind} is not a spatial augmentation")
    if spec.kind == "flip":
        return vol.like(vol.data[::-1, :, :].copy())
    if spec.magnitude == 0.0:
        return vol.like(vol.data.copy())

    grid = np.indices(vol.dims, dtype=np.float64)
    c = _center(vol.dims).reshape(3, 1, 1, 1)
    if spec.kind == "rotate":
        rng = np.random.default_rng(spec.seed)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = math.radians(spec.magnitude)
        k = np.array([[0, -axis[2], axis[1]],
                      [axis[2], 0, -axis[0]],
                      [-axis[1], axis[0], 0]])
        rot = np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)
        # sample the source at inversely rotated positions
        coords = np.tensordot(rot.T, grid - c, axes=1) + c
        return _resample_at(vol, coords)
    if spec.kind == "zoom":
        factor = 1.0 + spec.magnitude
        coords = (grid - c) / factor + c
        return _resample_at(vol, coords)
    # warp: seeded smooth displacement scaled by magnitude * extent
    max_disp = spec.magnitude * min(vol.dims)
    fld = smooth_random_field(vol.dims, spec.seed, max_disp)
    return _resample_at(vol, grid + fld.u)


def apply_intensity(vol: Volume3D, spec: AugmentSpec) -> Volume3D:
    """brightness (additive, in units of the range) / contrast (about the mean)."""
    if spec.kind not in INTENSITY_KINDS:
        raise ValueError(f"{spec.kind} is not an intensity augmentation")
    if spec.kind == "brightness":
        rng_span = float(vol.data.max() - vol.data.min())
        return vol.like(vol.data + spec.magnitude * rng_span)
    mean = float(vol.data.mean())
    return vol.like(mean + (vol.data - mean) * (1.0 + spec.magnitude))


def bias_field(vol: Volume3D, order: int = 4, magnitude: float = 0.3,
               seed: int = 0) -> Volume3D:
    """Multiplicative smooth field exp(polynomial), mean-normalized to 1.

    Coefficients for all monomials of total degree <= order (on coordinates
    scaled to [-1, 1]) are drawn uniformly from [-magnitude, magnitude]; the
    exponential guarantees positivity.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    rng = np.random.default_rng(seed)
    axes = [np.linspace(-1.0, 1.0, d) if d > 1 else np.zeros(d) for d in vol.dims]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    log_field = np.zeros(vol.dims)
    for degree in range(order + 1):
        for powers in combinations_with_replacement(range(3), degree):
            coef = rng.uniform(-magnitude, magnitude)
            term = np.ones(vol.dims)
            for p in powers:
                term = term * (x, y, z)[p]
            log_field += coef * term
    field = np.exp(log_field)
    field /= field.mean()
    return vol.like(vol.data * field)


def polynomial_basis_size(order: int, n_coords: int = 3) -> int:
    """Number of monomials of total degree <= order in n_coords variables."""
    return math.comb(order + n_coords, n_coords)


def rician_noise(vol: Volume3D, sigma: float, seed: int = 0) -> Volume3D:
    """Magnitude-image noise: sqrt((v + n1)^2 + n2^2), n1/n2 ~ N(0, sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    n1 = rng.normal(0.0, sigma, vol.dims)
    n2 = rng.normal(0.0, sigma, vol.dims)
    return vol.like(np.sqrt((vol.data + n1) ** 2 + n2 ** 2))


def kspace_artifact(vol: Volume3D, spec: AugmentSpec) -> Volume3D:
    """ghosting / spike / gibbs / motion, simulated in the 3-D Fourier domain."""
    if spec.kind not in KSPACE_KINDS:
        raise ValueError(f"{spec.kind} is not a k-space augmentation")
    rng = np.random.default_rng(spec.seed)
    ks = np.fft.fftn(vol.data)

    if spec.kind == "ghosting":
        axis = int(rng.integers(0, 3))
        idx = [slice(None)] * 3
        # every GHOST_SPACING-th plane, never the DC plane (j = 0)
        planes = np.arange(GHOST_SPACING, vol.dims[axis], GHOST_SPACING)
        idx[axis] = planes
        ks[tuple(idx)] *= (1.0 - spec.magnitude)
        out = np.real(np.fft.ifftn(ks))
    elif spec.kind == "spike":
        ref = float(np.max(np.abs(ks)))
        if ref == 0.0:
            ref = float(vol.data.size)  # DC magnitude of a unit-intensity volume
        loc = tuple(int(rng.integers(0, d)) for d in vol.dims)
        ks[loc] += spec.magnitude * ref
        out = np.real(np.fft.ifftn(ks))
    elif spec.kind == "gibbs":
        shifted = np.fft.fftshift(ks)
        keep = 1.0 - spec.magnitude
        mask = np.ones(vol.dims, dtype=bool)
        for a, d in enumerate(vol.dims):
            freq = np.abs(np.arange(d) - d // 2) / (d / 2.0)
            shape = [1, 1, 1]
            shape[a] = d
            mask &= freq.reshape(shape) <= keep + 1e-12
        shifted[~mask] = 0.0
        out = np.real(np.fft.ifftn(np.fft.ifftshift(shifted)))
    else:  # motion: average k-space of rigidly shifted copies via phase ramps
        shifts = [np.zeros(3)]
        for _ in range(MOTION_COPIES - 1):
            shifts.append(rng.uniform(-2.0, 2.0, 3) * spec.magnitude)
        freqs = [np.fft.fftfreq(d).reshape([-1 if a == i else 1 for i in range(3)])
                 for a, d in enumerate(vol.dims)]
        acc = np.zeros_like(ks)
        for sh in shifts:
            phase = sum(f * s for f, s in zip(freqs, sh))
            acc += ks * np.exp(-2j * np.pi * phase)
        acc /= len(shifts)
        out = np.abs(np.fft.ifftn(acc))
    return vol.like(out)


def downsample_blur(vol: Volume3D, spec: AugmentSpec) -> Volume3D:
    """downsample (trilinear down, then back up) / blur (Gaussian FWHM in mm)."""
    if spec.kind not in RESOLUTION_KINDS:
        raise ValueError(f"{spec.kind} is not a resolution augmentation")
    if spec.kind == "blur":
        if spec.magnitude == 0.0:
            return vol.like(vol.data.copy())
        return gaussian_smooth(vol, spec.magnitude)
    factor = int(spec.magnitude)
    if factor != spec.magnitude or factor not in (2, 3, 4):
        raise MagnitudeOutOfRange("downsample factor must be 2, 3 or 4")
    small_dims = tuple(max(2, d // factor) for d in vol.dims)
    # endpoint-aligned sampling keeps constants constant at the borders
    down_axes = [np.linspace(0.0, vol.dims[a] - 1.0, small_dims[a]) for a in range(3)]
    coords = np.stack(np.meshgrid(*down_axes, indexing="ij")).reshape(3, -1)
    small = sample_array_trilinear(vol.data, coords).reshape(small_dims)
    up_axes = [np.linspace(0.0, small_dims[a] - 1.0, vol.dims[a]) for a in range(3)]
    coords = np.stack(np.meshgrid(*up_axes, indexing="ij")).reshape(3, -1)
    return vol.like(sample_array_trilinear(small, coords).reshape(vol.dims))


def apply_augment(vol: Volume3D, spec: AugmentSpec) -> Volume3D:
    """Dispatch a single augmentation by kind."""
    if spec.kind in SPATIAL_KINDS:
        return apply_spatial(vol, spec)
    if spec.kind in INTENSITY_KINDS:
        return apply_intensity(vol, spec)
    if spec.kind == "bias_field":
        return bias_field(vol, magnitude=spec.magnitude, seed=spec.seed)
    if spec.kind == "noise_rician":
        if spec.magnitude == 0.0:
            return vol.like(vol.data.copy())
        return rician_noise(vol, spec.magnitude, spec.seed)
    if spec.kind in KSPACE_KINDS:
        return kspace_artifact(vol, spec)
    return downsample_blur(vol, spec)
