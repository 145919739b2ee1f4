"""Tissue-map algebra on the continuous 0-3 encoding.

0 = background, 1 = CSF, 2 = GM, 3 = WM; fractional values encode mixtures
of the two neighbouring classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import GeometryMismatch, NonAdjacentMixture, ValueOutOfRange
from .volume import Volume3D, require_same_geometry

MIXTURE_TOL = 1e-6


@dataclass(frozen=True)
class TissueMap:
    """Continuous segmentation volume with values in [0, 3]."""

    vol: Volume3D

    def __post_init__(self):
        lo = float(self.vol.data.min())
        hi = float(self.vol.data.max())
        if lo < -MIXTURE_TOL or hi > 3.0 + MIXTURE_TOL:
            raise ValueOutOfRange(f"tissue values must lie in [0, 3], got [{lo}, {hi}]")


@dataclass(frozen=True)
class ProbabilityMaps:
    """Per-voxel CSF/GM/WM probabilities; background absorbs the remainder."""

    csf: Volume3D
    gm: Volume3D
    wm: Volume3D

    def __post_init__(self):
        require_same_geometry(self.csf, self.gm)
        require_same_geometry(self.csf, self.wm)
        for name, v in (("csf", self.csf), ("gm", self.gm), ("wm", self.wm)):
            if v.data.min() < -MIXTURE_TOL or v.data.max() > 1.0 + MIXTURE_TOL:
                raise ValueOutOfRange(f"{name} probabilities must lie in [0, 1]")
        total = self.csf.data + self.gm.data + self.wm.data
        if total.max() > 1.0 + 1e-9:
            raise ValueOutOfRange("per-voxel probability sum exceeds 1")


@dataclass(frozen=True)
class ActivationParams:
    """Sharpness of the multi-level activation staircase."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def multilevel_activation(x, params: ActivationParams):
    """Staircase squashing of logits onto tissue values.

    Sum of six sigmoids: S(a*x) + sum_{i in [1.5, 2, 2.5, 3]} S(a*(x-i))/2.
    Strictly increasing, range (0, 3); for large sharpness it plateaus at
    the class and mixture levels 0, 1, 1.5, 2, 2.5, 3.
    """
    a = params.alpha
    x = np.asarray(x, dtype=np.float64)
    out = expit(a * x)
    for level in (1.5, 2.0, 2.5, 3.0):
        out = out + 0.5 * expit(a * (x - level))
    return float(out) if out.ndim == 0 else out


def tissue_to_probabilities(tmap: TissueMap) -> ProbabilityMaps:
    """Split the continuous map into class probabilities by linear mixture.

    A value t in [k, k+1] assigns fraction t-k to class k+1 and the rest to
    class k (class 0 is background and not stored). Exact inverse of
    probabilities_to_tissue on its range.
    """
    t = tmap.vol.data
    if t.min() < -MIXTURE_TOL or t.max() > 3.0 + MIXTURE_TOL:
        raise ValueOutOfRange("tissue values outside [0, 3]")
    t = np.clip(t, 0.0, 3.0)
    k = np.clip(np.floor(t), 0, 2)
    frac = t - k
    maps = []
    for cls in (1.0, 2.0, 3.0):
        p = np.where(k == cls, 1.0 - frac, 0.0) + np.where(k == cls - 1.0, frac, 0.0)
        maps.append(tmap.vol.like(p))
    return ProbabilityMaps(csf=maps[0], gm=maps[1], wm=maps[2])


def probabilities_to_tissue(p: ProbabilityMaps) -> TissueMap:
    """Recombine class probabilities into the 0-3 encoding: t = csf + 2 gm + 3 wm.

    Valid only for voxels mixing at most two adjacent classes (background
    counts as class 0); anything else cannot come from a tissue map.
    """
    csf, gm, wm = p.csf.data, p.gm.data, p.wm.data
    bg = 1.0 - csf - gm - wm
    present = [np.abs(arr) > MIXTURE_TOL for arr in (bg, csf, gm, wm)]
    for lo in range(4):
        for hi in range(lo + 2, 4):
            if np.any(present[lo] & present[hi]):
                raise NonAdjacentMixture(
                    f"classes {lo} and {hi} mixed in the same voxel"
                )
    return TissueMap(p.csf.like(csf + 2.0 * gm + 3.0 * wm))


def gm_mask_redistribute(p: ProbabilityMaps, mask: Volume3D) -> ProbabilityMaps:
    """Zero the GM probability under the mask, splitting it evenly onto CSF and WM.

    The per-voxel probability sum is preserved bitwise: WM takes the float
    remainder of the original sum after the CSF update, with one repair step
    so csf' + wm' reproduces csf + gm + wm exactly.
    """
    if mask.dims != p.csf.dims:
        raise GeometryMismatch("mask geometry differs from probability maps")
    values = np.unique(mask.data)
    if not np.all(np.isin(values, (0.0, 1.0))):
        raise ValueOutOfRange("mask must be binary (0/1)")
    csf, gm, wm = p.csf.data, p.gm.data, p.wm.data
    active = (mask.data > 0) & (gm != 0)
    total = csf + gm + wm

    new_csf = csf.copy()
    new_gm = gm.copy()
    new_wm = wm.copy()
    new_csf[active] = csf[active] + 0.5 * gm[active]
    new_gm[active] = 0.0
    new_wm[active] = total[active] - new_csf[active]
    new_csf[active] = total[active] - new_wm[active]
    return ProbabilityMaps(csf=p.csf.like(new_csf), gm=p.gm.like(new_gm),
                           wm=p.wm.like(new_wm))


def dice_score(a: Volume3D, b: Volume3D, label: int) -> float:
    """Set overlap 2|A&B| / (|A| + |B|) of the voxels equal to ``label``.

    Defined as 1.0 when both sets are empty (perfect agreement on absence).
    """
    require_same_geometry(a, b)
    in_a = a.data == label
    in_b = b.data == label
    denom = int(in_a.sum()) + int(in_b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((in_a & in_b).sum()) / denom


@dataclass(frozen=True)
class DiceScores:
    csf: float
    gm: float
    wm: float
    foreground: float  # mean of the three tissue classes
    gwm_mean: float    # mean of GM and WM only


def hard_labels(tmap: TissueMap) -> Volume3D:
    """Round the continuous map to integer classes; ties at .5 round up."""
    return tmap.vol.like(np.floor(tmap.vol.data + 0.5))


def dice_foreground(a: TissueMap, b: TissueMap) -> DiceScores:
    """Per-class and aggregate Dice of two tissue maps after hard labelling."""
    la = hard_labels(a)
    lb = hard_labels(b)
    csf = dice_score(la, lb, 1)
    gm = dice_score(la, lb, 2)
    wm = dice_score(la, lb, 3)
    return DiceScores(csf=csf, gm=gm, wm=wm,
                      foreground=(csf + gm + wm) / 3.0,
                      gwm_mean=(gm + wm) / 2.0)
