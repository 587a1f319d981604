"""Intersection bounds when the instrument exclusion may fail by ``m``.

With bound variables ``Y_lower <= Y <= Y_upper`` and an instrument on a
finite grid, the identified set of ``E[Y]`` is the intersection of the
conditional intervals. Allowing each conditional mean of ``Y`` to move by up
to ``m`` widens both ends by ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .late import BoundPair


@dataclass(frozen=True, eq=False)
class IntersectionData:
    """Conditional means of the bound variables on an instrument grid.

    Parameters
    ----------
    z_grid : array of shape (J,)
    mean_upper : array of shape (J,)
        ``E[Y_upper | Z=z]``.
    mean_lower : array of shape (J,)
        ``E[Y_lower | Z=z]``.
    """

    z_grid: np.ndarray
    mean_upper: np.ndarray
    mean_lower: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z_grid, dtype=float)
        up = np.asarray(self.mean_upper, dtype=float)
        lo = np.asarray(self.mean_lower, dtype=float)
        if z.ndim != 1 or z.size == 0 or up.shape != z.shape or lo.shape != z.shape:
            raise DomainError("z_grid, mean_upper and mean_lower must be 1-d of equal nonzero length")
        if np.any(np.diff(z) <= 0):
            raise DomainError("z_grid must be strictly increasing")
        if not (np.all(np.isfinite(up)) and np.all(np.isfinite(lo))):
            raise DomainError("conditional means must be finite")
        bad = np.flatnonzero(lo > up)
        if bad.size:
            raise DomainError(f"mean_lower exceeds mean_upper at z={z[bad[0]]!r}")
        for name, val in (("z_grid", z), ("mean_upper", up), ("mean_lower", lo)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)


def min_deviation(data):
    """Smallest ``m`` at which the conditional intervals can be reconciled."""
    return max(float(np.max(data.mean_lower) - np.min(data.mean_upper)), 0.0)


def bounds(data, m):
    """Bounds on ``E[Y]`` at deviation ``m``.

    Raises
    ------
    DomainError
        If ``m`` is below :func:`min_deviation`.
    """
    m_min = min_deviation(data)
    if m < m_min - 1e-12:
        raise DomainError(f"m={m!r} is below the minimal deviation {m_min!r}")
    lower = float(np.max(data.mean_lower)) - m
    upper = float(np.min(data.mean_upper)) + m
    if lower > upper:
        # only reachable through rounding when m equals the minimal deviation
        lower = upper = 0.5 * (lower + upper)
    return BoundPair(lower, upper)
