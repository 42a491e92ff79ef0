"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .data import DataError, MultiViewDataset


def _check_array(a, min_samples: int, name: str) -> np.ndarray:
    """sklearn's array checks, re-raised as :class:`DataError`."""
    try:
        return check_array(a, dtype=np.float64, ensure_min_samples=min_samples, input_name=name)
    except DataError:
        raise
    except (ValueError, TypeError) as exc:
        raise DataError(str(exc).split("\n")[0]) from exc


def check_views(X, min_views: int = 2, min_samples: int = 2) -> list:
    """Validate a multi-view input and return a list of float64 arrays.

    ``X`` may be a :class:`MultiViewDataset` or any sequence of 2-D array-likes
    sharing their row count.
    """
    if isinstance(X, MultiViewDataset):
        X = X.views
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise DataError("expected a sequence of views, got a single 2-D array")
    views = [_check_array(v, min_samples, f"view {i}") for i, v in enumerate(X)]
    if len(views) < min_views:
        raise DataError(f"need at least {min_views} views, got {len(views)}")
    n = views[0].shape[0]
    for i, v in enumerate(views[1:], start=1):
        if v.shape[0] != n:
            raise DataError(f"row-count mismatch: view 0 has {n} rows, view {i} has {v.shape[0]}")
    return views


def check_similarity_matrix(W) -> np.ndarray:
    W = _check_array(W, 3, "similarity matrix")
    if W.shape[0] != W.shape[1]:
        raise DataError(f"similarity matrix must be square, got {W.shape}")
    if not np.allclose(W, W.T, rtol=0, atol=1e-12):
        raise DataError("similarity matrix must be symmetric")
    if np.any(W < 0):
        raise DataError("similarities must be non-negative")
    W = W.copy()
    np.fill_diagonal(W, 0.0)
    return W
