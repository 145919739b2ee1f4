"""Patch-grid layout optimization and Gaussian-weighted patch accumulation.

A regular grid of overlapping boxes is shrunk toward the image centre one
voxel at a time while keeping every tissue voxel of a mask corpus covered.
Sagittally mirrored box pairs move in lockstep so left/right hemisphere
patches stay exact mirror images.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CoverageImpossible, EmptyCoverageWarning, GeometryMismatch
from .volume import Volume3D


@dataclass(frozen=True)
class PatchBox:
    corner: tuple[int, int, int]
    size: tuple[int, int, int]

    def slices(self):
        return tuple(slice(c, c + s) for c, s in zip(self.corner, self.size))

    def center(self) -> np.ndarray:
        return np.asarray(self.corner, dtype=np.float64) + (np.asarray(self.size) - 1) / 2.0


@dataclass
class PatchLayout:
    boxes: list[PatchBox]
    mirror_pairs: list[tuple[int, int]]
    center_indices: list[int]
    dims: tuple[int, int, int]

    def mirrored_corner_x(self, box: PatchBox) -> int:
        return self.dims[0] - box.size[0] - box.corner[0]


def _initial_grid(dims, grid, patch_size):
    """Regular covering grid, exactly mirror-symmetric about the x midplane."""
    corners_per_axis = []
    for a in range(3):
        d, g, s = dims[a], grid[a], patch_size[a]
        if g * s < d:
            raise CoverageImpossible(
                f"axis {a}: {g} patches of {s} voxels cannot cover {d}"
            )
        if g == 1:
            positions = [(d - s) // 2]
        else:
            positions = [round(i * (d - s) / (g - 1)) for i in range(g)]
            if a == 0:
                # enforce exact sagittal mirror symmetry of the initial grid
                for i in range(g // 2):
                    positions[g - 1 - i] = d - s - positions[i]
                if g % 2 == 1:
                    positions[g // 2] = (d - s) // 2
        corners_per_axis.append(positions)
    boxes = []
    index_of = {}
    for i, cx in enumerate(corners_per_axis[0]):
        for j, cy in enumerate(corners_per_axis[1]):
            for k, cz in enumerate(corners_per_axis[2]):
                index_of[(i, j, k)] = len(boxes)
                boxes.append(PatchBox(corner=(cx, cy, cz), size=tuple(patch_size)))
    gx = grid[0]
    mirror_pairs = []
    center_indices = []
    for (i, j, k), idx in index_of.items():
        mi = gx - 1 - i
        if i < mi:
            mirror_pairs.append((idx, index_of[(mi, j, k)]))
        elif i == mi:
            center_indices.append(idx)
    return boxes, mirror_pairs, center_indices


def optimize_layout(masks: list[Volume3D], grid=(3, 3, 3), patch_size=None) -> PatchLayout:
    """Greedy centring of a covering patch grid over a corpus of tissue masks.

    Starting from a regular grid, each patch repeatedly attempts a one-voxel
    move toward the image centre (per axis, x then y then z, patches visited
    in index order); a move is kept only when the union of all patches still
    covers every tissue voxel of every mask. Mirror pairs move in lockstep.
    Deterministic; terminates because every accepted move strictly shrinks
    a patch-centre distance.
    """
    if not masks:
        raise ValueError("at least one mask is required")
    dims = masks[0].dims
    for m in masks[1:]:
        if m.dims != dims:
            raise GeometryMismatch("all corpus masks must share geometry")
    if patch_size is None:
        patch_size = tuple(-(-d * 2 // (g + 1)) for d, g in zip(dims, grid))
    patch_size = tuple(int(s) for s in patch_size)
    if any(s > d for s, d in zip(patch_size, dims)):
        raise CoverageImpossible(f"patch size {patch_size} exceeds dims {dims}")

    boxes, mirror_pairs, center_indices = _initial_grid(dims, grid, patch_size)
    layout = PatchLayout(boxes=boxes, mirror_pairs=mirror_pairs,
                         center_indices=center_indices, dims=dims)

    tissue = np.zeros(dims, dtype=bool)
    for m in masks:
        tissue |= m.data > 0

    cover = np.zeros(dims, dtype=np.int32)
    for b in boxes:
        cover[b.slices()] += 1
    if np.any(tissue & (cover == 0)):
        raise CoverageImpossible("initial regular grid does not cover all tissue")

    partner = {}
    for left, right in mirror_pairs:
        partner[left] = right
        partner[right] = left
    img_center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0

    def axis_step(idx: int, axis: int) -> int:
        """+1/-1 toward the centre, 0 if a move cannot strictly improve."""
        b = boxes[idx]
        c = b.center()[axis]
        target = img_center[axis]
        if abs(c + 1 - target) < abs(c - target) - 1e-12:
            return 1
        if abs(c - 1 - target) < abs(c - target) - 1e-12:
            return -1
        return 0

    def apply_move(idx: int, axis: int, step: int):
        b = boxes[idx]
        corner = list(b.corner)
        # vacated face slab loses coverage, gained face slab wins it
        lo = corner[axis] if step > 0 else corner[axis] + b.size[axis] - 1
        hi = corner[axis] + b.size[axis] if step > 0 else corner[axis] - 1
        sl_out = [slice(c, c + s) for c, s in zip(corner, b.size)]
        sl_out[axis] = slice(lo, lo + 1)
        sl_in = list(sl_out)
        sl_in[axis] = slice(hi, hi + 1)
        cover[tuple(sl_out)] -= 1
        cover[tuple(sl_in)] += 1
        corner[axis] += step
        boxes[idx] = PatchBox(corner=tuple(corner), size=b.size)
        return tuple(sl_out)

    def undo_move(idx: int, axis: int, step: int):
        apply_move(idx, axis, -step)

    changed = True
    while changed:
        changed = False
        for idx in range(len(boxes)):
            # right-hemisphere partners move only in lockstep with their left
            if idx in partner and partner[idx] < idx:
                continue
            for axis in range(3):
                step = axis_step(idx, axis)
                if step == 0:
                    continue
                vacated = [apply_move(idx, axis, step)]
                moved = [(idx, axis, step)]
                if idx in partner:
                    mate = partner[idx]
                    mstep = -step if axis == 0 else step
                    vacated.append(apply_move(mate, axis, mstep))
                    moved.append((mate, axis, mstep))
                ok = all(not np.any(tissue[sl] & (cover[sl] == 0)) for sl in vacated)
                if ok:
                    changed = True
                else:
                    for midx, maxis, mstep in reversed(moved):
                        undo_move(midx, maxis, mstep)
    return layout


def flip_sagittal(vol: Volume3D) -> Volume3D:
    """Reverse the x (sagittal) axis; applying twice restores the input."""
    return vol.like(vol.data[::-1, :, :].copy())


def gaussian_importance_weights(size, sigma_scale: float = 0.125) -> Volume3D:
    """Separable Gaussian weights peaking at 1 in the patch centre.

    Border predictions are less reliable, so accumulation down-weights them;
    sigma per axis is ``sigma_scale * size``.
    """
    size = tuple(int(s) for s in size)
    if any(s <= 0 for s in size) or sigma_scale <= 0:
        raise ValueError("size and sigma_scale must be positive")
    w = np.ones(size)
    for a in range(3):
        n = size[a]
        center = (n - 1) / 2.0
        sigma = sigma_scale * n
        prof = np.exp(-0.5 * ((np.arange(n) - center) / sigma) ** 2)
        shape = [1, 1, 1]
        shape[a] = n
        w = w * prof.reshape(shape)
    return Volume3D.from_data(w)


def accumulate_patches(patches: list[tuple[PatchBox, Volume3D]],
                       weights: Volume3D, out_dims) -> Volume3D:
    """Weighted-average fusion of overlapping patch predictions.

    out(p) = sum_k w_k(p) pred_k(p) / sum_k w_k(p); voxels no patch covers
    stay 0 and trigger EmptyCoverageWarning.
    """
    out_dims = tuple(int(d) for d in out_dims)
    num = np.zeros(out_dims)
    den = np.zeros(out_dims)
    for box, pred in patches:
        if tuple(pred.dims) != tuple(box.size):
            raise GeometryMismatch(f"prediction {pred.dims} does not fit box {box.size}")
        sl = box.slices()
        num[sl] += weights.data * pred.data
        den[sl] += weights.data
    uncovered = den == 0
    if np.any(uncovered):
        warnings.warn(f"{int(uncovered.sum())} voxels covered by no patch",
                      EmptyCoverageWarning)
    out = np.zeros(out_dims)
    covered = ~uncovered
    out[covered] = num[covered] / den[covered]
    return Volume3D.from_data(out)


def save_layout(layout: PatchLayout, path) -> None:
    """Plain-text layout: dims, one corner/size line per patch, pairing lines."""
    lines = [f"dims {layout.dims[0]} {layout.dims[1]} {layout.dims[2]}"]
    for i, b in enumerate(layout.boxes):
        lines.append(f"patch {i} corner {b.corner[0]} {b.corner[1]} {b.corner[2]} "
                     f"size {b.size[0]} {b.size[1]} {b.size[2]}")
    for left, right in layout.mirror_pairs:
        lines.append(f"mirror {left} {right}")
    for idx in layout.center_indices:
        lines.append(f"center {idx}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_layout(path) -> PatchLayout:
    boxes = {}
    pairs = []
    centers = []
    dims = None
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "dims":
            dims = tuple(int(v) for v in parts[1:4])
        elif parts[0] == "patch":
            idx = int(parts[1])
            corner = tuple(int(v) for v in parts[3:6])
            size = tuple(int(v) for v in parts[7:10])
            boxes[idx] = PatchBox(corner=corner, size=size)
        elif parts[0] == "mirror":
            pairs.append((int(parts[1]), int(parts[2])))
        elif parts[0] == "center":
            centers.append(int(parts[1]))
    if dims is None:
        raise ValueError(f"{path} is not a layout file (missing dims line)")
    ordered = [boxes[i] for i in sorted(boxes)]
    return PatchLayout(boxes=ordered, mirror_pairs=pairs, center_indices=centers,
                       dims=dims)
