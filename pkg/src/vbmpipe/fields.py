"""Stationary-velocity-field machinery: shooting, composition, warping, Jacobians.

Deformations are stored as per-voxel displacements in voxel units, so the
zero field is the identity mapping and composition stays cheap. Velocities
and full/half deformations all share the DisplacementField3D container.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _interp, nifti
from .diffops import central_diff
from .errors import GeometryMismatch
from .volume import Volume3D


@dataclass(frozen=True)
class DisplacementField3D:
    """Per-voxel 3-vector field, component-first array of shape (3, nx, ny, nz)."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    u: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        u = np.ascontiguousarray(self.u, dtype=np.float64)
        if u.shape != (3,) + dims:
            raise ValueError(f"u shape {u.shape} does not match dims {dims}")
        if not np.all(np.isfinite(u)):
            raise ValueError("displacement field contains NaN/Inf")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "u", u)

    @classmethod
    def zero(cls, dims, spacing=(1.0, 1.0, 1.0)) -> "DisplacementField3D":
        dims = tuple(int(d) for d in dims)
        return cls(dims=dims, spacing=tuple(spacing), u=np.zeros((3,) + dims))

    def like(self, u: np.ndarray) -> "DisplacementField3D":
        return DisplacementField3D(dims=self.dims, spacing=self.spacing, u=u)

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.u)))


@dataclass(frozen=True)
class ShootingConfig:
    """Scaling-and-squaring step count for velocity integration."""

    tau: int = 7

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")


def _check_fields(*fields):
    first = fields[0]
    for f in fields[1:]:
        if f.dims != first.dims or not np.allclose(f.spacing, first.spacing):
            raise GeometryMismatch(f"field geometry mismatch: {f.dims} vs {first.dims}")


def compose(a: DisplacementField3D, b: DisplacementField3D) -> DisplacementField3D:
    """Composition (a o b) as displacements: out(x) = u_a(x + u_b(x)) + u_b(x)."""
    _check_fields(a, b)
    out = np.empty_like(a.u)
    _interp.compose_kernel(a.u[0], a.u[1], a.u[2], b.u[0], b.u[1], b.u[2],
                           out[0], out[1], out[2])
    return a.like(out)


def _compose_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    _interp.compose_kernel(a[0], a[1], a[2], b[0], b[1], b[2], out[0], out[1], out[2])
    return out


def shoot(v: DisplacementField3D, cfg: ShootingConfig = ShootingConfig()) -> DisplacementField3D:
    """Integrate a stationary velocity field by scaling and squaring.

    The flow starts from identity plus ``v / 2**tau`` and is self-composed
    ``tau`` times, which keeps the result smooth and invertible for bounded
    velocities.
    """
    u, _ = _shoot_tape(v.u, cfg.tau, keep_tape=False)
    return v.like(u)


def _shoot_tape(v: np.ndarray, tau: int, keep_tape: bool = True):
    u = v / float(2 ** tau)
    tape = []
    for _ in range(tau):
        if keep_tape:
            tape.append(u)
        u = _compose_raw(u, u)
    return u, tape


def _jacobian_min_raw(u: np.ndarray) -> float:
    return float(_interp.jacobian_min_kernel(u[0], u[1], u[2]))


def full_deformations(v_half_fwd: DisplacementField3D, v_half_bwd: DisplacementField3D,
                      cfg: ShootingConfig = ShootingConfig()):
    """Full forward/backward deformations from the two half-velocity fields.

    forward  = shoot(v_half_fwd) o shoot(-v_half_bwd)
    backward = shoot(v_half_bwd) o shoot(-v_half_fwd)
    """
    _check_fields(v_half_fwd, v_half_bwd)
    fwd = compose(shoot(v_half_fwd, cfg), shoot(v_half_bwd.like(-v_half_bwd.u), cfg))
    bwd = compose(shoot(v_half_bwd, cfg), shoot(v_half_fwd.like(-v_half_fwd.u), cfg))
    return fwd, bwd


def warp(vol: Volume3D, phi: DisplacementField3D) -> Volume3D:
    """Pull-back of a volume through a deformation: out(x) = vol(x + u(x))."""
    if vol.dims != phi.dims or not np.allclose(vol.spacing, phi.spacing):
        raise GeometryMismatch(f"volume {vol.dims} vs field {phi.dims}")
    out = np.empty_like(vol.data)
    _interp.warp_kernel(vol.data, phi.u[0], phi.u[1], phi.u[2], out)
    return vol.like(out)


def jacobian_determinant(phi: DisplacementField3D) -> Volume3D:
    """Per-voxel determinant of the mapping x -> x + u(x).

    Derivatives use central differences with one-sided borders, in voxel
    units, so a pure translation yields exactly 1 everywhere.
    """
    u = phi.u
    grad = np.empty((3, 3) + phi.dims)
    for i in range(3):
        for j in range(3):
            grad[i, j] = central_diff(u[i], axis=j)
        grad[i, i] += 1.0
    det = (grad[0, 0] * (grad[1, 1] * grad[2, 2] - grad[1, 2] * grad[2, 1])
           - grad[0, 1] * (grad[1, 0] * grad[2, 2] - grad[1, 2] * grad[2, 0])
           + grad[0, 2] * (grad[1, 0] * grad[2, 1] - grad[1, 1] * grad[2, 0]))
    return Volume3D(dims=phi.dims, spacing=phi.spacing,
                    affine=np.diag(list(phi.spacing) + [1.0]), data=det)


def write_field(f: DisplacementField3D, path) -> None:
    """Store a field as 4-D NIfTI with the 3 components along the 4th dim."""
    data = np.moveaxis(f.u, 0, -1)
    affine = np.diag(list(f.spacing) + [1.0])
    nifti.save_array(data, f.spacing, affine, path)


def read_field(path) -> DisplacementField3D:
    data, spacing, _affine = nifti.load_array(path)
    if data.ndim != 4 or data.shape[3] != 3:
        raise GeometryMismatch(f"expected (nx,ny,nz,3) field payload, got {data.shape}")
    return DisplacementField3D(dims=data.shape[:3], spacing=spacing,
                               u=np.moveaxis(data, -1, 0))
