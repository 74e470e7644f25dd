"""Grid containers and low-level raster primitives.

MaskGrid holds a small-integer label field (0=background, 1=artery, 2=vein,
3=crossing) with per-axis physical spacing; ScalarField holds a real-valued
field on the same lattice.  On top of these sit the exact Euclidean distance
transform, ball-structuring-element morphology, and connected-component
labeling used by every downstream stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError

BACKGROUND = 0
ARTERY = 1
VEIN = 2
BOTH = 3

_LABELS = (BACKGROUND, ARTERY, VEIN, BOTH)


@dataclass(frozen=True)
class MaskGrid:
    """Label field on a 2D or 3D lattice with physical per-axis spacing."""

    labels: np.ndarray
    spacing: tuple[float, ...] = ()

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if labels.ndim not in (2, 3):
            raise DataError(f"mask must be 2D or 3D, got {labels.ndim}D")
        spacing = self.spacing or (1.0,) * labels.ndim
        spacing = tuple(float(s) for s in spacing)
        if len(spacing) != labels.ndim:
            raise DataError("spacing length must match number of axes")
        if any(s <= 0 for s in spacing):
            raise DataError("spacing must be strictly positive")
        if labels.max(initial=0) > BOTH:
            raise DataError("labels must be in {0, 1, 2, 3}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.labels.shape

    @property
    def ndim(self) -> int:
        return self.labels.ndim


@dataclass(frozen=True)
class ScalarField:
    """Real-valued field (probability map, soft skeleton, EDT, radius map)."""

    values: np.ndarray
    spacing: tuple[float, ...] = ()

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim not in (2, 3):
            raise DataError(f"field must be 2D or 3D, got {values.ndim}D")
        spacing = self.spacing or (1.0,) * values.ndim
        spacing = tuple(float(s) for s in spacing)
        if len(spacing) != values.ndim:
            raise DataError("spacing length must match number of axes")
        if any(s <= 0 for s in spacing):
            raise DataError("spacing must be strictly positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape


def class_mask(mask: MaskGrid, cls: int = ARTERY) -> np.ndarray:
    """Binary view of one vessel class; crossings (label 3) belong to both."""
    if cls not in _LABELS:
        raise DataError(f"unknown class label {cls}")
    if cls == BACKGROUND:
        return mask.labels == BACKGROUND
    if cls in (ARTERY, VEIN):
        return (mask.labels == cls) | (mask.labels == BOTH)
    return mask.labels == BOTH


def edt(mask: MaskGrid, cls: int = ARTERY, physical: bool = False) -> ScalarField:
    """Exact Euclidean distance transform of one class.

    Foreground cells hold the distance to the nearest background cell
    center; background cells hold 0.  Distances are in pixels unless
    ``physical`` is set, in which case each axis is scaled by its spacing
    (anisotropic grids).
    """
    fg = class_mask(mask, cls)
    if fg.all():
        raise DataError("all-foreground grid has no background reference")
    sampling = mask.spacing if physical else None
    values = ndimage.distance_transform_edt(fg, sampling=sampling)
    return ScalarField(values, mask.spacing)


def ball_footprint(radius: int, ndim: int) -> np.ndarray:
    """Discrete Euclidean ball: cells with ||offset|| <= radius."""
    if radius < 1:
        raise DataError("structuring-element radius must be >= 1")
    grids = np.ogrid[tuple(slice(-radius, radius + 1) for _ in range(ndim))]
    dist2 = sum(g.astype(np.int64) ** 2 for g in grids)
    return dist2 <= radius * radius


def _binary(mask: MaskGrid) -> np.ndarray:
    if mask.labels.max(initial=0) > 1:
        raise DataError("operation requires a binary (0/1) mask")
    return mask.labels.astype(bool)


def morph(mask: MaskGrid, op: str, radius: int = 1) -> MaskGrid:
    """Binary morphology with a Euclidean-ball structuring element.

    Outside the grid counts as background, except for the erosion step of
    closing which is evaluated on a padded domain so that closing stays
    extensive (close(X) >= X) for shapes touching the border.
    """
    fg = _binary(mask)
    se = ball_footprint(radius, mask.ndim)
    if op == "dilate":
        out = ndimage.binary_dilation(fg, structure=se)
    elif op == "erode":
        out = ndimage.binary_erosion(fg, structure=se, border_value=0)
    elif op == "open":
        er = ndimage.binary_erosion(fg, structure=se, border_value=0)
        out = ndimage.binary_dilation(er, structure=se)
    elif op == "close":
        pad = np.pad(fg, radius)
        di = ndimage.binary_dilation(pad, structure=se)
        er = ndimage.binary_erosion(di, structure=se, border_value=1)
        out = er[tuple(slice(radius, -radius) for _ in range(mask.ndim))]
    else:
        raise DataError(f"unknown morphology op {op!r}")
    return MaskGrid(out.astype(np.uint8), mask.spacing)


def default_connectivity(ndim: int, foreground: bool = True) -> int:
    """Digital-topology duality: fg 8/26, bg 4/6."""
    if ndim == 2:
        return 8 if foreground else 4
    return 26 if foreground else 6


def _structure(ndim: int, connectivity: int) -> np.ndarray:
    full = {2: (4, 8), 3: (6, 26)}[ndim]
    if connectivity == full[0]:
        return ndimage.generate_binary_structure(ndim, 1)
    if connectivity == full[1]:
        return ndimage.generate_binary_structure(ndim, ndim)
    raise DataError(f"connectivity {connectivity} invalid for {ndim}D")


def components(mask, connectivity: int | None = None) -> tuple[np.ndarray, int]:
    """Connected components of the foreground.

    Returns an int32 label field (labels 1..count assigned by raster-scan
    order of first appearance) and the component count.
    """
    fg = mask.labels.astype(bool) if isinstance(mask, MaskGrid) else np.asarray(mask, bool)
    if connectivity is None:
        connectivity = default_connectivity(fg.ndim)
    lab, n = ndimage.label(fg, structure=_structure(fg.ndim, connectivity))
    if n > 1:
        # renumber so label order follows raster-scan discovery order
        flat = lab.ravel()
        first = np.full(n + 1, flat.size, dtype=np.int64)
        nz = np.flatnonzero(flat)
        # reversed so earlier indices win
        first[flat[nz[::-1]]] = nz[::-1]
        order = np.argsort(first[1:], kind="stable")
        remap = np.zeros(n + 1, dtype=np.int32)
        remap[1 + order] = np.arange(1, n + 1, dtype=np.int32)
        lab = remap[lab]
    return lab.astype(np.int32), int(n)


def remove_small_regions(mask: MaskGrid, min_size: int,
                         connectivity: int | None = None) -> MaskGrid:
    """Drop foreground components with fewer than ``min_size`` cells."""
    fg = _binary(mask)
    lab, n = components(fg, connectivity)
    if n == 0:
        return mask
    counts = np.bincount(lab.ravel(), minlength=n + 1)
    keep = counts >= min_size
    keep[0] = False
    return MaskGrid(keep[lab].astype(np.uint8), mask.spacing)
