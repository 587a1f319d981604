"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .exceptions import DataError, DomainError


def check_late_data(data, allow_empty=False):
    """Validate ``(y, d, z)`` records and return them as an ``(n, 3)`` float array.

    Raises
    ------
    DataError
        On a wrong shape, non-finite outcome, or non-binary ``d`` / ``z``.
    """
    arr = np.asarray(data, dtype=float) if not hasattr(data, "shape") else data
    if allow_empty and np.size(arr) == 0:
        return np.zeros((0, 3))
    try:
        X = check_array(arr, dtype=float, ensure_all_finite=True)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if X.shape[1] != 3:
        raise DataError(f"expected 3 columns (y, d, z), got {X.shape[1]}")
    for j, name in ((1, "d"), (2, "z")):
        bad = np.flatnonzero((X[:, j] != 0) & (X[:, j] != 1))
        if bad.size:
            raise DataError(f"{name} must be 0 or 1 (row {int(bad[0])})", line=int(bad[0]), code="non_binary")
    return X


def check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def check_grid_function(h, name="h"):
    h = np.asarray(h, dtype=float)
    if h.ndim != 1 or h.size == 0:
        raise DomainError(f"{name} must be a nonempty 1-d array")
    if not np.all(np.isfinite(h)):
        raise DomainError(f"{name} must be finite")
    return h
