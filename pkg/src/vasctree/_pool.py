"""Shared stencil helpers for min/max pooling over the axis cross."""
from __future__ import annotations

import numpy as np


def cross_offsets(ndim: int) -> list[tuple[int, ...]]:
    """Center plus axis neighbors, in raster order of the offsets."""
    offs = []
    for axis in range(ndim):
        off = [0] * ndim
        off[axis] = -1
        offs.append(tuple(off))
    offs.append((0,) * ndim)
    for axis in reversed(range(ndim)):
        off = [0] * ndim
        off[axis] = 1
        offs.append(tuple(off))
    # raster order means sorting source offsets lexicographically
    return sorted(offs)


def shifted(a: np.ndarray, off: tuple[int, ...], fill: float = 0.0) -> np.ndarray:
    """Array whose cell u holds a[u + off], with out-of-grid cells = fill."""
    out = np.full_like(a, fill)
    src = []
    dst = []
    for d, o in enumerate(off):
        n = a.shape[d]
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = a[tuple(src)]
    return out


def shift_stack(a: np.ndarray, offsets, fill: float = 0.0) -> np.ndarray:
    """Stack of shifted views, shape (len(offsets),) + a.shape."""
    return np.stack([shifted(a, off, fill) for off in offsets])
