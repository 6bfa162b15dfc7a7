"""Input-validation helpers for the estimator and public entry points."""

from __future__ import annotations

import numpy as np

from .config import SystemConfig
from .errors import DimensionError


def check_pilot_tensor(X, cfg: SystemConfig) -> np.ndarray:
    """Coerce to float32 (n, P, 2, K, G) and verify shape and finiteness."""
    X = np.asarray(X, dtype=np.float32)
    expected = (cfg.context_frames, 2, cfg.num_subcarriers, cfg.widebeam_count)
    if X.ndim != 5 or X.shape[1:] != expected:
        raise DimensionError(
            f"expected pilot tensor of shape (n, {', '.join(map(str, expected))}), "
            f"got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise DimensionError("pilot tensor contains non-finite values")
    return X


def check_labels(y, cfg: SystemConfig, n_samples: int) -> np.ndarray:
    """Coerce labels to int32 (n,) or (n, P+1) within the codebook range."""
    y = np.asarray(y)
    if y.ndim not in (1, 2) or y.shape[0] != n_samples:
        raise DimensionError(f"labels must be (n,) or (n, P+1) with n={n_samples}")
    if y.ndim == 2 and y.shape[1] != cfg.context_frames + 1:
        raise DimensionError(
            f"per-frame labels must have {cfg.context_frames + 1} columns, got {y.shape[1]}"
        )
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.allclose(rounded, y):
            raise DimensionError("labels must be integers")
        y = rounded
    y = y.astype(np.int32)
    if y.size and (y.min() < 0 or y.max() >= cfg.codebook_size):
        raise DimensionError(f"labels outside [0, {cfg.codebook_size})")
    return y
