"""Vascular-tree analysis toolkit.

Mask -> skeleton -> calibrated graph -> bifurcation-exponent table;
differentiable skeleton/junction/exponent losses with exact gradients;
topology metrics; graph-based hemodynamic simulation.
"""
from .errors import DataError, NumericalError
from .raster import BACKGROUND, ARTERY, VEIN, BOTH, MaskGrid, ScalarField

__all__ = [
    "DataError", "NumericalError",
    "BACKGROUND", "ARTERY", "VEIN", "BOTH", "MaskGrid", "ScalarField",
]

__version__ = "0.1.0"
