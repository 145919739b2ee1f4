"""Minimal NIfTI-1 reader/writer for the datatype subset this toolkit needs.

Supports single-file ``.nii`` / ``.nii.gz`` volumes with uint8, int16,
float32 or float64 payloads in either byte order. Output is always
float32 little-endian with the orientation stored in the sform.
"""

from __future__ import annotations

import gzip
import math
from pathlib import Path

import numpy as np

from .errors import IoFailure, MalformedHeader, TruncatedData, UnsupportedDatatype
from .volume import Volume3D

HEADER_SIZE = 348

HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])

assert HEADER_DTYPE.itemsize == HEADER_SIZE

# NIfTI datatype code -> numpy dtype (unswapped)
DATATYPES = {
    2: np.dtype("u1"),
    4: np.dtype("i2"),
    16: np.dtype("f4"),
    64: np.dtype("f8"),
}


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def _parse_header(raw: bytes):
    """Return (header record, byte order char), trying both byte orders."""
    for order in ("<", ">"):
        hdr = np.frombuffer(raw, dtype=HEADER_DTYPE.newbyteorder(order), count=1)[0]
        if int(hdr["sizeof_hdr"]) == HEADER_SIZE:
            return hdr, order
    raise MalformedHeader("sizeof_hdr is not 348 under either byte order")


def _quaternion_affine(hdr) -> np.ndarray:
    b = float(hdr["quatern_b"])
    c = float(hdr["quatern_c"])
    d = float(hdr["quatern_d"])
    w2 = 1.0 - (b * b + c * c + d * d)
    a = math.sqrt(w2) if w2 > 0 else 0.0
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ])
    pixdim = np.abs(np.asarray(hdr["pixdim"][1:4], dtype=np.float64))
    qfac = -1.0 if float(hdr["pixdim"][0]) == -1.0 else 1.0
    affine = np.eye(4)
    affine[:3, :3] = rot * pixdim
    affine[:3, 2] *= qfac
    affine[:3, 3] = [float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"])]
    return affine


def load_array(path):
    """Read raw voxel array plus geometry: (data, spacing, affine).

    ``data`` keeps the on-disk dimensionality (3-D or 4-D) as float64 with
    any scl_slope/scl_inter scaling already applied.
    """
    with _open(path, "rb") as f:
        raw = f.read(HEADER_SIZE)
        if len(raw) < HEADER_SIZE:
            raise MalformedHeader(f"file shorter than the {HEADER_SIZE}-byte header")
        hdr, order = _parse_header(raw)

        code = int(hdr["datatype"])
        if code not in DATATYPES:
            raise UnsupportedDatatype(f"datatype code {code} not supported")
        dtype = DATATYPES[code].newbyteorder(order)

        ndim = int(hdr["dim"][0])
        if ndim < 3 or ndim > 4:
            raise MalformedHeader(f"expected 3-D or 4-D payload, dim[0]={ndim}")
        shape = tuple(int(hdr["dim"][i + 1]) for i in range(ndim))
        if any(s <= 0 for s in shape):
            raise MalformedHeader(f"non-positive dimension in {shape}")

        offset = int(float(hdr["vox_offset"]))
        f.seek(offset)
        count = int(np.prod(shape))
        payload = f.read(count * dtype.itemsize)
        if len(payload) < count * dtype.itemsize:
            raise TruncatedData(
                f"expected {count * dtype.itemsize} data bytes, found {len(payload)}"
            )
        data = np.frombuffer(payload, dtype=dtype, count=count)
        data = data.reshape(shape, order="F").astype(np.float64)

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope != 0.0 and not math.isnan(slope):
        data = data * slope + (0.0 if math.isnan(inter) else inter)

    pixdim = np.abs(np.asarray(hdr["pixdim"][1:4], dtype=np.float64))
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim)

    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0] = hdr["srow_x"]
        affine[1] = hdr["srow_y"]
        affine[2] = hdr["srow_z"]
    elif int(hdr["qform_code"]) > 0:
        affine = _quaternion_affine(hdr)
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    return data, spacing, affine


def save_array(data: np.ndarray, spacing, affine, path) -> None:
    """Write a 3-D or 4-D float array as float32 little-endian NIfTI-1."""
    data = np.asarray(data)
    if data.ndim not in (3, 4):
        raise ValueError("only 3-D or 4-D arrays can be written")

    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    dim = np.ones(8, dtype=np.int16)
    dim[0] = data.ndim
    dim[1:1 + data.ndim] = data.shape
    hdr["dim"] = dim
    hdr["datatype"] = 16
    hdr["bitpix"] = 32
    pixdim = np.zeros(8, dtype=np.float64)
    pixdim[0] = 1.0
    pixdim[1:4] = spacing
    if data.ndim == 4:
        pixdim[4] = 1.0
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["descrip"] = b"vbmpipe"
    affine = np.asarray(affine, dtype=np.float64)
    hdr["sform_code"] = 1
    hdr["srow_x"] = affine[0]
    hdr["srow_y"] = affine[1]
    hdr["srow_z"] = affine[2]
    hdr["qform_code"] = 0
    hdr["magic"] = b"n+1"

    try:
        with _open(path, "wb") as f:
            f.write(hdr.tobytes())
            f.write(b"\x00\x00\x00\x00")  # pad to vox_offset 352, no extensions
            f.write(np.asfortranarray(data.astype("<f4")).tobytes(order="F"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_nifti(path) -> Volume3D:
    """Read a 3-D NIfTI-1 file into a Volume3D."""
    try:
        data, spacing, affine = load_array(path)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if data.ndim == 4:
        if data.shape[3] != 1:
            raise MalformedHeader("expected a scalar volume, got 4-D data")
        data = data[..., 0]
    return Volume3D(dims=data.shape, spacing=spacing, affine=affine, data=data)


def write_nifti(vol: Volume3D, path) -> None:
    """Write a Volume3D as single-file float32 NIfTI-1."""
    save_array(vol.data, vol.spacing, vol.affine, path)
