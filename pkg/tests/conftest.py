import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def brute_force_nn(query: np.ndarray, target: np.ndarray):
    """O(N*M) nearest neighbor, ties to the lowest target index."""
    d2 = ((query[:, None, :] - target[None, :, :]) ** 2).sum(axis=2)
    idx = d2.argmin(axis=1)  # argmin returns the first (lowest) index on ties
    return idx, d2[np.arange(len(query)), idx]


def brute_force_edt2(fg: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """All-pairs squared distance to the nearest opposite-class voxel."""
    coords = np.argwhere(np.ones_like(fg, dtype=bool)).astype(np.float64)
    coords *= np.asarray(spacing)
    flat_fg = fg.ravel()
    fg_pts = coords[flat_fg]
    bg_pts = coords[~flat_fg]
    out = np.empty(flat_fg.shape, dtype=np.float64)
    d2_to_bg = ((fg_pts[:, None, :] - bg_pts[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    d2_to_fg = ((bg_pts[:, None, :] - fg_pts[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    out[flat_fg] = d2_to_bg
    out[~flat_fg] = d2_to_fg
    return out.reshape(fg.shape)
