import numpy as np
import pytest

from vasctree.raster import MaskGrid, ScalarField


def random_mask(seed: int, shape=(24, 24), density: float = 0.35) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random(shape) < density


def blob_mask(seed: int, shape=(32, 32)) -> np.ndarray:
    """Structured random mask: thresholded smoothed noise."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.standard_normal(shape), 2.0)
    return field > np.quantile(field, 0.72)


def y_junction(n: int = 11, arm: int | None = None) -> np.ndarray:
    """Unit-width Y: north arm plus two diagonal arms from the center."""
    c = n // 2
    arm = arm if arm is not None else c - 1
    fg = np.zeros((n, n), dtype=np.uint8)
    fg[c - arm:c + 1, c] = 1
    for k in range(1, arm + 1):
        fg[c + k, c - k] = 1
        fg[c + k, c + k] = 1
    return fg


@pytest.fixture
def mask_grid():
    return lambda a, spacing=(): MaskGrid(np.asarray(a, dtype=np.uint8), spacing)


@pytest.fixture
def field():
    return lambda a, spacing=(): ScalarField(np.asarray(a, dtype=np.float64), spacing)
