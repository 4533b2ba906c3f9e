"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


def check_images(X, input_shape=None, dtype=np.float32) -> np.ndarray:
    """Coerce X to a finite (N, C, H, W) float array.

    Accepts 4-D arrays directly, 3-D (N, H, W) single-channel stacks, or
    2-D (N, features) matrices when `input_shape` gives (C, H, W).
    """
    X = np.asarray(X)
    if X.ndim == 2:
        if input_shape is None:
            raise ShapeError("2-D input needs input_shape=(C, H, W) to be reshaped")
        c, h, w = input_shape
        if X.shape[1] != c * h * w:
            raise ShapeError(f"cannot reshape {X.shape[1]} features into {input_shape}")
        X = X.reshape(X.shape[0], c, h, w)
    elif X.ndim == 3:
        X = X[:, None, :, :]
    elif X.ndim != 4:
        raise ShapeError(f"expected 2-D, 3-D or 4-D input, got shape {X.shape}")
    X = X.astype(dtype, copy=False)
    if not np.all(np.isfinite(X)):
        raise ShapeError("input contains NaN or Inf")
    return np.ascontiguousarray(X)


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ShapeError(f"labels must be 1-D with {n_samples} entries, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == y.astype(np.int64)):
            raise ShapeError("labels must be integers")
    return y.astype(np.int64)
