"""Voxel-wise GLM statistics: t-maps, resampled medians, correlations,
thresholding."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import (
    DegenerateVariance,
    GeometryMismatch,
    RankDeficientDesign,
    SubjectCountMismatch,
)
from .volume import Volume3D, require_same_geometry


@dataclass(frozen=True)
class DesignMatrix:
    """Subjects x covariates design with named columns.

    ``target`` names the column whose t-statistic is of interest; the other
    columns (typically an intercept plus nuisance covariates) are adjusted
    for.
    """

    names: list[str]
    values: np.ndarray
    target: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise ValueError("values must be (subjects, columns) matching names")
        if self.target not in self.names:
            raise ValueError(f"target column {self.target!r} not among {self.names}")
        object.__setattr__(self, "values", values)

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    @property
    def target_index(self) -> int:
        return self.names.index(self.target)

    @classmethod
    def from_csv(cls, path, target: str, add_intercept: bool = True) -> "DesignMatrix":
        """CSV with a header row; the first column is the subject id."""
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = [r for r in reader if r]
        names = header[1:]
        values = np.array([[float(v) for v in r[1:]] for r in rows])
        if add_intercept and "intercept" not in names:
            names = ["intercept"] + names
            values = np.hstack([np.ones((values.shape[0], 1)), values])
        return cls(names=names, values=values, target=target)


@dataclass(frozen=True)
class TMap:
    vol: Volume3D
    dof: int

    def __post_init__(self):
        if self.dof <= 0:
            raise ValueError("degrees of freedom must be positive")


def _stack_data(maps) -> np.ndarray:
    first = maps[0]
    for m in maps[1:]:
        require_same_geometry(first, m)
    return np.stack([m.data.ravel() for m in maps])


def glm_tmap(maps: list[Volume3D], design: DesignMatrix) -> TMap:
    """Ordinary least squares per voxel; t-statistic of the target column.

    Solves via QR for numerical stability. Voxels with zero residual
    variance get t = 0 (counted in a warning) so downstream correlations
    stay finite.
    """
    n, k = design.values.shape
    if len(maps) != n:
        raise SubjectCountMismatch(f"{len(maps)} maps vs {n} design rows")
    if n < k + 1:
        raise SubjectCountMismatch(f"need at least {k + 1} subjects for {k} columns")
    x = design.values
    if np.linalg.matrix_rank(x) < k:
        raise RankDeficientDesign("design matrix columns are linearly dependent")

    y = _stack_data(maps)  # (n, voxels)
    q, r = np.linalg.qr(x)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta
    dof = n - k
    sigma2 = np.sum(resid ** 2, axis=0) / dof
    xtx_inv = np.linalg.inv(r.T @ r)
    j = design.target_index
    se = np.sqrt(sigma2 * xtx_inv[j, j])
    t = np.zeros(y.shape[1])
    ok = se > 0
    t[ok] = beta[j, ok] / se[ok]
    n_degenerate = int(np.sum(~ok))
    if n_degenerate:
        warnings.warn(f"{n_degenerate} voxels had zero residual variance; t set to 0")
    first = maps[0]
    return TMap(vol=first.like(t.reshape(first.dims)), dof=dof)


def resampled_median_tmap(maps: list[Volume3D], design: DesignMatrix,
                          fraction: float = 0.8, repeats: int = 100,
                          seed: int = 0) -> TMap:
    """Voxel-wise median t-map over seeded subject subsamples.

    Each repeat draws ``ceil(fraction * n)`` subjects without replacement
    (indices sorted, so fraction 1.0 with one repeat reproduces the plain
    t-map bit for bit).
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n = design.n_subjects
    m = int(np.ceil(fraction * n))
    if m <= design.n_columns:
        raise SubjectCountMismatch(
            f"subset of {m} subjects cannot fit {design.n_columns} columns"
        )
    rng = np.random.default_rng(seed)
    stacks = []
    dof = None
    for _ in range(repeats):
        idx = np.sort(rng.choice(n, size=m, replace=False))
        sub_maps = [maps[i] for i in idx]
        sub_design = DesignMatrix(names=design.names, values=design.values[idx],
                                  target=design.target)
        tm = glm_tmap(sub_maps, sub_design)
        stacks.append(tm.vol.data)
        dof = tm.dof
    median = np.median(np.stack(stacks), axis=0)
    return TMap(vol=maps[0].like(median), dof=dof)


def tmap_correlation(a: TMap, b: TMap, mask: Volume3D | None = None) -> float:
    """Pearson correlation of absolute t-values over the (optional) mask."""
    require_same_geometry(a.vol, b.vol)
    va = np.abs(a.vol.data).ravel()
    vb = np.abs(b.vol.data).ravel()
    if mask is not None:
        if mask.dims != a.vol.dims:
            raise GeometryMismatch("mask geometry differs from t-maps")
        keep = mask.data.ravel() > 0
        va = va[keep]
        vb = vb[keep]
    if va.size < 2 or np.std(va) == 0 or np.std(vb) == 0:
        raise DegenerateVariance("correlation undefined for constant |t| values")
    va = va - va.mean()
    vb = vb - vb.mean()
    return float(np.sum(va * vb) / np.sqrt(np.sum(va ** 2) * np.sum(vb ** 2)))


def t_critical(p: float, dof: int) -> float:
    """Two-sided Student-t critical value at significance level p."""
    if not (0.0 < p < 1.0):
        raise ValueError("p must be in (0, 1)")
    return float(stats.t.ppf(1.0 - p / 2.0, dof))


def threshold_tmap(t: TMap, p: float) -> Volume3D:
    """Binary mask of voxels with |t| above the two-sided critical value."""
    crit = t_critical(p, t.dof)
    return t.vol.like((np.abs(t.vol.data) > crit).astype(np.float64))


def summarize_tmap(t: TMap, p: float = 0.001) -> dict:
    """Reported quantities: max |t|, supra-threshold voxel count, dof."""
    supra = threshold_tmap(t, p)
    return {
        "max_abs_t": float(np.max(np.abs(t.vol.data))),
        "suprathreshold_voxels": int(supra.data.sum()),
        "dof": t.dof,
        "p_threshold": p,
    }


def write_tmap_summary_csv(rows: list[dict], path) -> None:
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
