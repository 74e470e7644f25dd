"""Segmentation and topology metrics: Acc, Dice, clDice, CAL, Betti, Hausdorff."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DataError
from .raster import MaskGrid, class_mask, components, default_connectivity
from .skeleton import thin
from .vessgraph import pixel_cycle_rank


def _check_dims(pred: MaskGrid, gt: MaskGrid):
    if pred.dims != gt.dims:
        raise DataError("prediction and reference dimensions differ")


def accuracy(pred: MaskGrid, gt: MaskGrid) -> float:
    """Fraction of cells with identical labels over the full alphabet."""
    _check_dims(pred, gt)
    return float((pred.labels == gt.labels).mean())


def dice(pred: MaskGrid, gt: MaskGrid, cls: int = 1) -> float:
    _check_dims(pred, gt)
    p = class_mask(pred, cls)
    g = class_mask(gt, cls)
    denom = p.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * (p & g).sum() / denom)


def _thin_mask(fg: np.ndarray, spacing) -> np.ndarray:
    return thin(MaskGrid(fg.astype(np.uint8), spacing)).labels.astype(bool)


def cldice(pred: MaskGrid, gt: MaskGrid, cls: int = 1) -> float:
    """Harmonic mean of skeleton precision and sensitivity (hard thinning)."""
    _check_dims(pred, gt)
    p = class_mask(pred, cls)
    g = class_mask(gt, cls)
    if not p.any() and not g.any():
        return 1.0
    if not p.any() or not g.any():
        return 0.0
    sp = _thin_mask(p, pred.spacing)
    sg = _thin_mask(g, gt.spacing)
    tprec = (sp & g).sum() / sp.sum()
    tsens = (sg & p).sum() / sg.sum()
    if tprec + tsens == 0:
        return 0.0
    return float(2.0 * tprec * tsens / (tprec + tsens))


@dataclass(frozen=True)
class CalResult:
    connectivity: float
    area: float
    length: float

    @property
    def product(self) -> float:
        return self.connectivity * self.area * self.length


def _dilate(fg: np.ndarray, radius: int) -> np.ndarray:
    from .raster import ball_footprint

    return ndimage.binary_dilation(fg, structure=ball_footprint(radius, fg.ndim))


def cal(pred: MaskGrid, gt: MaskGrid, radius: int = 2) -> CalResult:
    """Connectivity-Area-Length agreement for vascular masks."""
    _check_dims(pred, gt)
    p = class_mask(pred, 1) | class_mask(pred, 2)
    g = class_mask(gt, 1) | class_mask(gt, 2)
    if not g.any():
        raise DataError("CAL requires a non-empty reference mask")
    n_p = components(p)[1]
    n_g = components(g)[1]
    c = 1.0 - min(1.0, abs(n_p - n_g) / g.sum())
    dp = _dilate(p, radius)
    dg = _dilate(g, radius)
    union = (p | g).sum()
    a = ((dp & g) | (p & dg)).sum() / union if union else 1.0
    sp = _thin_mask(p, pred.spacing)
    sg = _thin_mask(g, gt.spacing)
    sunion = (sp | sg).sum()
    l = ((sp & dg) | (dp & sg)).sum() / sunion if sunion else 1.0
    return CalResult(float(c), float(a), float(l))


def betti(mask: MaskGrid, cls: int = 1) -> tuple[int, int]:
    """(components, independent cycles).

    2D: holes are background components (4-connected, counted against a
    1-pixel background border) minus one.  3D: the cycle count is the cycle
    rank of the thinned skeleton's adjacency graph, an approximation that
    matches vascular loop counting.
    """
    fg = class_mask(mask, cls)
    b0 = components(fg, default_connectivity(fg.ndim, True))[1]
    if fg.ndim == 2:
        padded = np.pad(fg, 1)
        holes = components(~padded, 4)[1] - 1
        return b0, int(holes)
    skel = _thin_mask(fg, mask.spacing)
    return b0, pixel_cycle_rank(skel)


def betti_error(pred: MaskGrid, gt: MaskGrid, cls: int = 1) -> tuple[int, int]:
    _check_dims(pred, gt)
    bp = betti(pred, cls)
    bg = betti(gt, cls)
    return abs(bp[0] - bg[0]), abs(bp[1] - bg[1])


def boundary_cells(fg: np.ndarray) -> np.ndarray:
    """Foreground cells with a background axis-neighbor (outside counts)."""
    eroded = ndimage.binary_erosion(
        fg, structure=ndimage.generate_binary_structure(fg.ndim, 1),
        border_value=0)
    return fg & ~eroded


def hausdorff(pred: MaskGrid, gt: MaskGrid, cls: int = 1,
              spacing: tuple[float, ...] | None = None) -> float:
    """Symmetric Hausdorff distance between boundary cells, physical units."""
    _check_dims(pred, gt)
    p = class_mask(pred, cls)
    g = class_mask(gt, cls)
    if not p.any() or not g.any():
        raise DataError("Hausdorff distance requires two non-empty masks")
    sp = spacing or pred.spacing
    bp = np.argwhere(boundary_cells(p)) * np.asarray(sp)
    bg = np.argwhere(boundary_cells(g)) * np.asarray(sp)
    d_pg = cKDTree(bg).query(bp)[0].max()
    d_gp = cKDTree(bp).query(bg)[0].max()
    return float(max(d_pg, d_gp))
