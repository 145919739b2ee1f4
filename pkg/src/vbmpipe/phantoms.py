"""Deterministic synthetic volumes for desk-scale verification.

Real templates and cohort data are not redistributable, so every pipeline
stage is exercised on seeded phantoms instead.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fields import DisplacementField3D, warp
from .nifti import write_nifti
from .volume import Volume3D, sample_array_trilinear

PHANTOM_KINDS = ("blob_pair", "tissue_shells", "checkerboard")


def smooth_random_field(dims, seed, max_voxels: float, control_points: int = 4,
                        taper: bool = True) -> DisplacementField3D:
    """Smooth random displacement: a seeded coarse control grid upsampled
    trilinearly, scaled so the max-norm equals ``max_voxels``.

    With ``taper`` the field decays smoothly to zero at the grid boundary,
    matching the zero-padded displacement convention of the field algebra
    (flows stay invertible instead of being clipped mid-flight).
    """
    rng = np.random.default_rng(seed)
    ctrl = rng.uniform(-1.0, 1.0, (3, control_points, control_points, control_points))
    axes = [np.linspace(0.0, control_points - 1.0, d) for d in dims]
    coords = np.stack(np.meshgrid(*axes, indexing="ij")).reshape(3, -1)
    u = np.empty((3,) + tuple(dims))
    for c in range(3):
        u[c] = sample_array_trilinear(ctrl[c], coords).reshape(dims)
    if taper:
        for a, d in enumerate(dims):
            t = np.linspace(0.0, 1.0, d)
            envelope = (4.0 * t * (1.0 - t)) ** 0.75
            shape = [1, 1, 1]
            shape[a] = d
            u *= envelope.reshape(shape)
    peak = np.max(np.abs(u))
    if peak > 0:
        u *= max_voxels / peak
    return DisplacementField3D(dims=tuple(dims), spacing=(1.0, 1.0, 1.0), u=u)


def _radius_grid(dims) -> np.ndarray:
    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    grid = np.indices(dims, dtype=np.float64)
    return np.sqrt(((grid - center[:, None, None, None]) ** 2).sum(axis=0))


def shells_at(coords_vox: np.ndarray, dims, seed: int) -> np.ndarray:
    """Analytic ellipsoidal-shell tissue values at arbitrary voxel coordinates.

    Enables tests to build exactly transformed instances (no resampling
    blur): evaluate at affinely mapped coordinates instead of warping a
    sampled grid. ``coords_vox`` has shape (3, ...).
    """
    dims = np.asarray(dims, dtype=np.float64)
    rng = np.random.default_rng(seed)
    center = (dims - 1.0) / 2.0
    base = float(dims.min()) / 2.0
    # unequal semi-axes make orientation observable for registration tests
    semi = np.array([1.0, 0.85, 0.7]) * (1.0 + 0.03 * rng.uniform(-1, 1, 3))
    r_wm = 0.30 + 0.02 * rng.uniform(-1, 1)
    r_gm = 0.55 + 0.02 * rng.uniform(-1, 1)
    r_csf = 0.75 + 0.02 * rng.uniform(-1, 1)
    c = coords_vox.reshape(3, -1)
    rho = np.sqrt((((c - center[:, None]) / (semi[:, None] * base)) ** 2).sum(axis=0))
    ramp = 1.5 / base  # ~1.5 voxels in normalized radius units

    def edge(radius):
        return np.clip((radius - rho) / ramp + 0.5, 0.0, 1.0)

    t = edge(r_csf) + edge(r_gm) + edge(r_wm)
    # quadric level sets alone leave the affine orientation ambiguous (any
    # shear preserving the quadric matches), so pin orientation with
    # asymmetric structure: off-centre bumps plus smooth interior texture
    for k, amp in enumerate((1.2, -1.0, 0.9, -0.8, 1.1, -0.9)):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        radial = 0.2 + 0.06 * k
        pos = center + direction * semi * base * radial
        width = base * (0.10 + 0.015 * k)
        d2 = ((c - pos[:, None]) ** 2).sum(axis=0)
        t += amp * np.exp(-0.5 * d2 / width ** 2)
    envelope = edge(r_csf * 0.9)
    texture = np.zeros(c.shape[1])
    for _ in range(24):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        wavelength = base * rng.uniform(0.25, 0.6)  # survives coarse-stage blur
        phase = rng.uniform(0.0, 2.0 * np.pi)
        proj = direction @ (c - center[:, None])
        texture += rng.uniform(0.6, 1.0) * np.cos(2.0 * np.pi * proj / wavelength + phase)
    texture *= 0.65 / max(np.std(texture), 1e-9)
    t += envelope * texture
    t = np.clip(t, 0.0, 3.0)
    return t.reshape(coords_vox.shape[1:])


def blob_pair(dims, seed, offset_voxels: float = 4.0, spacing=(1.0, 1.0, 1.0)):
    """A Gaussian blob and the same blob displaced by a seeded smooth field."""
    dims = tuple(dims)
    r = _radius_grid(dims)
    sigma = min(dims) / 6.0
    blob = np.exp(-0.5 * (r / sigma) ** 2)
    a = Volume3D.from_data(blob, spacing=spacing)
    if offset_voxels == 0:
        return a, a.like(blob.copy())
    fld = smooth_random_field(dims, seed, offset_voxels)
    fld = DisplacementField3D(dims=dims, spacing=spacing, u=fld.u)
    return a, warp(a, fld)


def tissue_shells(dims, seed, spacing=(1.0, 1.0, 1.0)) -> Volume3D:
    """Concentric ellipsoidal WM/GM/CSF shells as a continuous 0-3 tissue map.

    Semi-axes and radii are jittered by the seed; class boundaries ramp
    linearly over ~1.5 voxels so intermediate mixture values occur, like
    real maps.
    """
    dims = tuple(dims)
    coords = np.indices(dims, dtype=np.float64)
    return Volume3D.from_data(shells_at(coords, dims, seed), spacing=spacing)


def checkerboard(dims, seed, spacing=(1.0, 1.0, 1.0)) -> Volume3D:
    """Voxel-level checkerboard (Nyquist frequency); seed flips the phase."""
    dims = tuple(dims)
    grid = np.indices(dims).sum(axis=0)
    phase = int(seed) % 2
    return Volume3D.from_data(((grid + phase) % 2).astype(np.float64), spacing=spacing)


def make_phantom(kind: str, dims, seed: int, out_dir) -> dict[str, str]:
    """Write the requested phantom family as NIfTI files; returns name->path."""
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS}")
    dims = tuple(int(d) for d in dims)
    if any(d < 16 for d in dims):
        raise ValueError("phantom dims must be at least 16 per axis")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}

    def emit(name, vol):
        path = out / f"{name}.nii"
        write_nifti(vol, path)
        files[name] = str(path)

    if kind == "blob_pair":
        a, b = blob_pair(dims, seed)
        emit("image", b)
        emit("template", a)
        emit("image_mask", b.like((b.data > 0.05).astype(np.float64)))
        emit("template_mask", a.like((a.data > 0.05).astype(np.float64)))
    elif kind == "tissue_shells":
        t = tissue_shells(dims, seed)
        emit("tissue_map", t)
        emit("brain_mask", t.like((t.data > 0.5).astype(np.float64)))
        # ring just inside the WM core, standing in for ventricle/brain-stem voxels
        r = _radius_grid(dims)
        base = min(dims) / 2.0
        ring = (r > base * 0.25) & (r < base * 0.33)
        emit("gm_mask", t.like(ring.astype(np.float64)))
    else:
        emit("checkerboard", checkerboard(dims, seed))
    return files
