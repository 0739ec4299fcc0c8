"""8-bit PNG rendering of real grids."""

from __future__ import annotations

import numpy as np
from matplotlib import colormaps
from PIL import Image


def _limits(ref: np.ndarray):
    return float(ref.min()), float(ref.max())


def to_rgb(grid, cmap: str = "viridis", reference=None) -> np.ndarray:
    """Map ``grid`` to uint8 RGB using the value range of ``reference``
    (the grid itself when None). Values outside the range are clipped."""
    g = np.asarray(grid, dtype=float)
    ref = g if reference is None else np.asarray(reference, dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(ref))):
        raise ValueError("cannot render non-finite values")
    lo, hi = _limits(ref)
    if hi > lo:
        u = np.clip((g - lo) / (hi - lo), 0.0, 1.0)
    else:
        u = np.full(g.shape, 0.5)
    rgba = colormaps[cmap](u, bytes=True)
    return rgba[..., :3]


def render_png(grid, path, cmap: str = "viridis", reference=None) -> None:
    """Write ``grid`` as a PNG; ``reference`` selects shared normalization."""
    Image.fromarray(to_rgb(grid, cmap, reference), mode="RGB").save(path)
