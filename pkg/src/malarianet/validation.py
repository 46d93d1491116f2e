"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError
from .model import INPUT_HW


def check_image_batch(x) -> np.ndarray:
    """Coerce to a float32 (N, 3, 224, 224) batch of [0, 1] pixel values.

    A single (3, 224, 224) image is promoted to a batch of one.
    """
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None, ...]
    if arr.ndim != 4 or arr.shape[1:] != (3, INPUT_HW, INPUT_HW):
        raise ShapeError(
            f"expected images shaped (N, 3, {INPUT_HW}, {INPUT_HW}), got {np.asarray(x).shape}"
        )
    if arr.size == 0:
        raise ShapeError("empty image batch")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("image batch contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < -1e-6 or hi > 1.0 + 1e-6:
        raise ShapeError(
            f"pixel values must lie in [0, 1] (scale by 1/255 first); got range [{lo:g}, {hi:g}]"
        )
    return np.clip(arr, 0.0, 1.0)


def check_labels(y, n_samples: int) -> np.ndarray:
    """Coerce to int64 binary labels matching the batch length."""
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.shape[0] != n_samples:
        raise ShapeError(f"labels must be 1-d of length {n_samples}, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == arr.astype(np.int64)):
            arr = arr.astype(np.int64)
        else:
            raise ShapeError(f"labels must be integers, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ShapeError(f"labels must be 0 or 1, got range [{arr.min()}, {arr.max()}]")
    return arr
