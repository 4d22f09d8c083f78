"""Input validation for patch batches passed to the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import DimensionError


def check_patches(X, *, square: bool = False, n_channels: int | None = None, value_range=(-1.0, 1.0)) -> np.ndarray:
    """Validate a batch of images and return it as float32 ``[n, C, H, W]``.

    ``[n, H, W]`` input is treated as single-channel.
    """
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_min_samples=1, ensure_all_finite=True)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise DimensionError(f"expected [n, C, H, W] patches, got shape {X.shape}")
    if square and X.shape[2] != X.shape[3]:
        raise DimensionError(f"patches must be square, got {X.shape[2]}x{X.shape[3]}")
    if n_channels is not None and X.shape[1] != n_channels:
        raise DimensionError(f"expected {n_channels} channels, got {X.shape[1]}")
    if value_range is not None:
        lo, hi = value_range
        if X.min() < lo or X.max() > hi:
            raise ValueError(f"patch values must lie in [{lo}, {hi}]")
    return np.ascontiguousarray(X)
