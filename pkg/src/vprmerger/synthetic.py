"""Procedural traversals for tests, smoke runs and the bundled sample set.

A traversal is a window sliding along one wide strip of smoothed noise, so
neighbouring frames overlap the way consecutive frames of a real route do.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, shift as nd_shift

from .baseline import INPUT_HEIGHT, INPUT_WIDTH
from .dataio import save_traversal
from .nn_core import make_rng


def make_traversal(n_places: int, seed: int = 0, stride: int = 16, sigma: float = 1.5) -> np.ndarray:
    """Return ``(n_places, 32, 64)`` frames in [0, 1]."""
    rng = make_rng(seed)
    width = INPUT_WIDTH + stride * (n_places - 1)
    strip = gaussian_filter(rng.standard_normal((INPUT_HEIGHT, width)), sigma, mode="wrap")
    strip = (strip - strip.min()) / (strip.max() - strip.min())
    frames = np.stack([strip[:, i * stride: i * stride + INPUT_WIDTH] for i in range(n_places)])
    return np.ascontiguousarray(frames)


def corrupt(frames: np.ndarray, seed: int = 0, noise: float = 0.08, max_shift: float = 3.0,
            brightness: float = 0.15) -> np.ndarray:
    """A 'second traversal': per-frame brightness change, sub-pixel shift and noise."""
    rng = make_rng(seed)
    out = np.empty_like(frames, dtype=np.float64)
    for k, frame in enumerate(np.asarray(frames, dtype=np.float64)):
        dy, dx = rng.uniform(-max_shift, max_shift, size=2) * np.array([0.5, 1.0])
        moved = nd_shift(frame, (dy, dx), order=1, mode="nearest")
        moved = moved * (1.0 + rng.uniform(-brightness, brightness)) + rng.normal(0.0, noise, frame.shape)
        out[k] = np.clip(moved, 0.0, 1.0)
    return out


def write_sample_dataset(root: str | Path, n_places: int = 20, seed: int = 0) -> tuple[Path, Path]:
    """Write ``root/ref`` and a corrupted ``root/query`` as PGM traversals."""
    root = Path(root)
    frames = make_traversal(n_places, seed=seed)
    save_traversal(frames, root / "ref")
    save_traversal(corrupt(frames, seed=seed + 1), root / "query")
    return root / "ref", root / "query"
