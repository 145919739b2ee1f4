"""Central finite differences with one-sided borders, plus the exact adjoint."""

import numpy as np


def central_diff(arr: np.ndarray, axis: int) -> np.ndarray:
    """d arr / d index along ``axis``: central interior, one-sided at borders."""
    n = arr.shape[axis]
    out = np.empty_like(arr)
    if n == 1:
        out[...] = 0.0
        return out
    a = np.moveaxis(arr, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[0] = a[1] - a[0]
    o[-1] = a[-1] - a[-2]
    if n > 2:
        o[1:-1] = 0.5 * (a[2:] - a[:-2])
    return out


def central_diff_adjoint(cot: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of the central_diff linear operator applied to ``cot``."""
    n = cot.shape[axis]
    out = np.zeros_like(cot)
    if n == 1:
        return out
    c = np.moveaxis(cot, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[0] -= c[0]
    o[1] += c[0]
    o[-2] -= c[-1]
    o[-1] += c[-1]
    if n > 2:
        o[:-2] -= 0.5 * c[1:-1]
        o[2:] += 0.5 * c[1:-1]
    return out
