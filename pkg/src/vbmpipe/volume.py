"""3-D scalar volumes on regular voxel grids: sampling, normalization, smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .errors import DegenerateIntensity, GeometryMismatch

# FWHM = sigma * sqrt(8 ln 2) for a Gaussian profile
FWHM_PER_SIGMA = math.sqrt(8.0 * math.log(2.0))


@dataclass(frozen=True)
class Volume3D:
    """Scalar field on a regular voxel grid.

    ``data`` is indexed ``[x, y, z]`` and stored as float64. ``affine`` maps
    homogeneous voxel indices to world millimetres. Instances are treated as
    immutable: every operation returns a new volume.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    affine: np.ndarray
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {dims}")
        if any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")
        if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise ValueError("affine upper-left 3x3 is singular")
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.shape != dims:
            if data.size == dims[0] * dims[1] * dims[2]:
                data = data.reshape(dims)
            else:
                raise ValueError(f"data size {data.size} does not match dims {dims}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data contains NaN/Inf")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_data(cls, data, spacing=(1.0, 1.0, 1.0), affine=None) -> "Volume3D":
        data = np.asarray(data, dtype=np.float64)
        if affine is None:
            affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        return cls(dims=data.shape, spacing=tuple(spacing), affine=affine, data=data)

    def like(self, data) -> "Volume3D":
        """New volume with this geometry and different data."""
        return Volume3D(dims=self.dims, spacing=self.spacing, affine=self.affine, data=data)

    def same_geometry(self, other) -> bool:
        return self.dims == other.dims and np.allclose(self.spacing, other.spacing)

    def voxel_to_world(self, coords: np.ndarray) -> np.ndarray:
        """Map voxel coordinates (3, ...) to world mm via the affine."""
        coords = np.asarray(coords, dtype=np.float64)
        flat = coords.reshape(3, -1)
        out = self.affine[:3, :3] @ flat + self.affine[:3, 3:4]
        return out.reshape(coords.shape)

    def world_to_voxel(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        flat = coords.reshape(3, -1)
        inv = np.linalg.inv(self.affine)
        out = inv[:3, :3] @ flat + inv[:3, 3:4]
        return out.reshape(coords.shape)


@dataclass(frozen=True)
class AffineTransform:
    """4x4 homogeneous world-to-world transform, last row (0, 0, 0, 1)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4) or not np.allclose(m[3], [0, 0, 0, 1]):
            raise ValueError("matrix must be 4x4 with last row (0,0,0,1)")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(4))

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.matrix))


def require_same_geometry(a, b) -> None:
    if a.dims != b.dims or not np.allclose(a.spacing, b.spacing):
        raise GeometryMismatch(
            f"geometry mismatch: {a.dims}@{a.spacing} vs {b.dims}@{b.spacing}"
        )


def sample_trilinear(vol: Volume3D, coords) -> np.ndarray | float:
    """Trilinear interpolation of ``vol`` at continuous voxel coordinates.

    ``coords`` is a length-3 sequence or an array of shape (3, ...).
    Coordinates outside the grid interpolate against zero padding.
    """
    scalar = np.ndim(coords) == 1
    out = sample_array_trilinear(vol.data, np.asarray(coords, dtype=np.float64).reshape(3, -1))
    return float(out[0]) if scalar else out.reshape(np.shape(coords)[1:])


def sample_array_trilinear(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Vectorized zero-padded trilinear sampling of a raw (nx,ny,nz) array."""
    nx, ny, nz = data.shape
    x, y, z = coords[0], coords[1], coords[2]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    z0 = np.floor(z).astype(np.int64)
    fx = x - x0
    fy = y - y0
    fz = z - z0
    out = np.zeros(x.shape, dtype=np.float64)
    for dx in (0, 1):
        xi = x0 + dx
        wx = fx if dx else 1.0 - fx
        okx = (xi >= 0) & (xi < nx)
        xic = np.clip(xi, 0, nx - 1)
        for dy in (0, 1):
            yi = y0 + dy
            wy = fy if dy else 1.0 - fy
            oky = (yi >= 0) & (yi < ny)
            yic = np.clip(yi, 0, ny - 1)
            for dz in (0, 1):
                zi = z0 + dz
                wz = fz if dz else 1.0 - fz
                okz = (zi >= 0) & (zi < nz)
                zic = np.clip(zi, 0, nz - 1)
                w = wx * wy * wz * (okx & oky & okz)
                out += w * data[xic, yic, zic]
    return out


def normalize_intensity(vol: Volume3D) -> Volume3D:
    """Percentile min-max scaling with a logarithmic tail above 1.

    The 0.5th/99.5th percentiles map to 0/1; values scaling above 1 are
    compressed to ``1 + log10(y)`` so extreme intensities stay ordered
    instead of clipping.
    """
    lo, hi = np.percentile(vol.data, [0.5, 99.5])
    if hi <= lo:
        raise DegenerateIntensity(f"percentiles collapsed: lo={lo} hi={hi}")
    y = (vol.data - lo) / (hi - lo)
    out = np.clip(y, 0.0, 1.0)
    tail = y > 1.0
    if np.any(tail):
        out[tail] = 1.0 + np.log10(y[tail])
    return vol.like(out)


def gaussian_kernel_1d(sigma_vox: float) -> np.ndarray:
    """Sampled Gaussian, truncated at 4 sigma, renormalized to unit sum."""
    radius = int(math.floor(4.0 * sigma_vox))
    if radius < 1:
        return np.array([1.0])
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (offsets / sigma_vox) ** 2)
    return k / k.sum()


def gaussian_smooth(vol: Volume3D, fwhm_mm: float) -> Volume3D:
    """Separable Gaussian smoothing with the kernel width given as FWHM in mm.

    Per-axis sigma is ``fwhm / (spacing * sqrt(8 ln 2))`` voxels; borders are
    zero-padded.
    """
    if fwhm_mm <= 0:
        raise ValueError("fwhm_mm must be positive")
    out = vol.data
    for axis in range(3):
        sigma = fwhm_mm / (vol.spacing[axis] * FWHM_PER_SIGMA)
        kernel = gaussian_kernel_1d(sigma)
        if kernel.size > 1:
            out = convolve1d(out, kernel, axis=axis, mode="constant", cval=0.0)
    return vol.like(out)


def resample_to_spacing(vol: Volume3D, new_spacing: tuple[float, float, float]) -> Volume3D:
    """Resample onto a coarser/finer grid covering the same world extent."""
    new_dims = tuple(
        max(2, int(round(vol.dims[a] * vol.spacing[a] / new_spacing[a]))) for a in range(3)
    )
    # voxel centres of the new grid expressed in old voxel coordinates
    scale = [new_spacing[a] / vol.spacing[a] for a in range(3)]
    axes = [
        (np.arange(new_dims[a]) + 0.5) * scale[a] - 0.5
        for a in range(3)
    ]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    data = sample_array_trilinear(vol.data, coords.reshape(3, -1)).reshape(new_dims)
    affine = vol.affine.copy()
    affine[:3, :3] = affine[:3, :3] @ np.diag(scale)
    # keep the centre of the first new voxel consistent with the old grid
    shift = vol.affine[:3, :3] @ np.array([(scale[a] - 1.0) / 2.0 for a in range(3)])
    affine[:3, 3] += shift
    return Volume3D(dims=new_dims, spacing=tuple(new_spacing), affine=affine, data=data)


def apply_affine(vol: Volume3D, transform: AffineTransform, reference: Volume3D | None = None) -> Volume3D:
    """Resample ``vol`` through a world-space affine onto ``reference``'s grid.

    Output voxel p takes the value of ``vol`` at world point ``M @ world(p)``.
    """
    ref = reference if reference is not None else vol
    grid = np.indices(ref.dims, dtype=np.float64).reshape(3, -1)
    world = ref.affine[:3, :3] @ grid + ref.affine[:3, 3:4]
    moved = transform.matrix[:3, :3] @ world + transform.matrix[:3, 3:4]
    inv = np.linalg.inv(vol.affine)
    voxel = inv[:3, :3] @ moved + inv[:3, 3:4]
    data = sample_array_trilinear(vol.data, voxel).reshape(ref.dims)
    return Volume3D(dims=ref.dims, spacing=ref.spacing, affine=ref.affine, data=data)
