"""Monotone-instrument bounds on a finite instrument grid.

Non-monotonicity of a grid function ``h`` is measured by the summed gap to
its running maximum from the left (or, mirrored, to its running minimum from
the right). The data restrict ``h(z) = E[Y(1) | Z=z]`` to a band
``[h_lower, h_upper]``; the bounds on ``h(z0)`` at a deviation budget follow
in closed form up to a one-dimensional monotone root search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .late import BoundPair
from .validation import check_grid_function

METRICS = ("left", "right", "union")
_BISECT_TOL = 1e-12


def left_envelope(h):
    """Running maximum from the left."""
    return np.maximum.accumulate(check_grid_function(h))


def right_envelope(h):
    """Running minimum from the right, ``inf over z' >= z of h(z')``."""
    h = check_grid_function(h)
    return np.minimum.accumulate(h[::-1])[::-1]


def deviation_left(h, spacing=1.0):
    """Summed gap between ``h`` and its left envelope.

    Parameters
    ----------
    h : array-like
    spacing : float or array-like
        Cell width, scalar or one per grid point.
    """
    h = check_grid_function(h)
    return float(np.sum((left_envelope(h) - h) * np.asarray(spacing, dtype=float)))


def deviation_right(h, spacing=1.0):
    """Summed gap between ``h`` and its right envelope."""
    h = check_grid_function(h)
    return float(np.sum((h - right_envelope(h)) * np.asarray(spacing, dtype=float)))


def cell_widths(z_grid):
    """Integration weights for a grid: the spacing if uniform, else Voronoi widths."""
    z = np.asarray(z_grid, dtype=float)
    if z.size == 1:
        return np.ones(1)
    d = np.diff(z)
    if np.allclose(d, d[0], rtol=1e-9, atol=0.0):
        return np.full(z.size, d[0])
    edges = np.concatenate([[z[0] - d[0] / 2], (z[:-1] + z[1:]) / 2, [z[-1] + d[-1] / 2]])
    return np.diff(edges)


@dataclass(frozen=True, eq=False)
class MIVData:
    """Band ``h_lower <= h <= h_upper`` for ``E[Y(d) | Z=z]`` on a grid.

    Parameters
    ----------
    z_grid : array of shape (J,)
    h_upper, h_lower : array of shape (J,)
    z0_index : int
        Grid position of the target instrument value.
    """

    z_grid: np.ndarray
    h_upper: np.ndarray
    h_lower: np.ndarray
    z0_index: int

    def __post_init__(self):
        z = check_grid_function(self.z_grid, "z_grid")
        up = check_grid_function(self.h_upper, "h_upper")
        lo = check_grid_function(self.h_lower, "h_lower")
        if up.shape != z.shape or lo.shape != z.shape:
            raise DomainError("z_grid, h_upper and h_lower must have equal length")
        if np.any(np.diff(z) <= 0):
            raise DomainError("z_grid must be strictly increasing")
        bad = np.flatnonzero(lo > up + 1e-12)
        if bad.size:
            raise DomainError(f"h_lower exceeds h_upper at z={z[bad[0]]!r}")
        if not 0 <= int(self.z0_index) < z.size:
            raise DomainError("z0_index outside the grid")
        object.__setattr__(self, "z_grid", z)
        object.__setattr__(self, "h_upper", up)
        object.__setattr__(self, "h_lower", lo)
        object.__setattr__(self, "z0_index", int(self.z0_index))

    @property
    def weights(self):
        return cell_widths(self.z_grid)

    @classmethod
    def from_conditional_moments(cls, z_grid, pr_d1, mean_treated, mean_untreated, y_bounds, z0_index, arm=1):
        """Build the band from ``Pr(D=1|Z)``, ``E[Y|D=d,Z]`` and outcome bounds.

        ``arm=1`` bounds ``E[Y(1)|Z]``: the unobserved untreated share is
        filled with ``y_l`` or ``y_u``. ``arm=0`` mirrors this with the
        untreated conditional mean in both band edges.
        """
        y_l, y_u = map(float, y_bounds)
        if y_l > y_u:
            raise DomainError("y_bounds must be ordered")
        pr1 = np.asarray(pr_d1, dtype=float)
        if np.any((pr1 < 0) | (pr1 > 1)):
            raise DomainError("pr_d1 must lie in [0, 1]")
        if arm == 1:
            seen, share = np.asarray(mean_treated, dtype=float), pr1
        elif arm == 0:
            seen, share = np.asarray(mean_untreated, dtype=float), 1.0 - pr1
        else:
            raise DomainError("arm must be 0 or 1")
        up = (1 - share) * y_u + share * seen
        lo = (1 - share) * y_l + share * seen
        return cls(z_grid, up, lo, z0_index)

    def mirrored(self):
        """Reflect the grid and negate outcomes; swaps left and right metrics."""
        return MIVData(-self.z_grid[::-1], -self.h_lower[::-1], -self.h_upper[::-1], self.z_grid.size - 1 - self.z0_index)


def h_tilde(data):
    """``min(left_envelope(h_lower), h_upper)``."""
    return np.minimum(left_envelope(data.h_lower), data.h_upper)


def min_deviation(data, metric="left"):
    """Smallest deviation compatible with the band."""
    if metric == "left":
        return deviation_left(h_tilde(data), data.weights)
    if metric == "right":
        return min_deviation(data.mirrored(), "left")
    raise DomainError(f"metric must be 'left' or 'right', got {metric!r}")


def max_deviation(data):
    """Largest left deviation of any grid function inside the band.

    The deviation is convex in ``h``, so the maximum sits at a vertex of the
    band; a dynamic program over the running maximum enumerates them.
    """
    lo, up, w = data.h_lower, data.h_upper, data.weights
    best = {}  # running max -> best deviation so far
    for k in range(lo.size):
        nxt = {}
        choices = (lo[k], up[k]) if up[k] > lo[k] else (lo[k],)
        if k == 0:
            for v in choices:
                nxt[v] = max(nxt.get(v, -np.inf), 0.0)
        else:
            for env, dev in best.items():
                for v in choices:
                    e = max(env, v)
                    val = dev + (e - v) * w[k]
                    if val > nxt.get(e, -np.inf):
                        nxt[e] = val
        best = nxt
    return float(max(best.values()))


def h_star(data, t):
    """Extremal grid function raising ``h(z0)`` to ``t``.

    Left of ``z0`` it equals :func:`h_tilde`; from ``z0`` on it is
    ``max(t, h_tilde)`` capped by ``h_upper`` so that it stays in the band.
    """
    ht = h_tilde(data)
    out = ht.copy()
    k = data.z0_index
    out[k:] = np.minimum(np.maximum(t, ht[k:]), data.h_upper[k:])
    return out


def _deviation_at(data, t):
    return deviation_left(h_star(data, t), data.weights)


def _left_bounds(data, delta_m):
    base = min_deviation(data, "left")
    budget = base + delta_m
    top = max_deviation(data)
    if budget > top + 1e-12:
        raise DomainError(f"budget {budget!r} exceeds the largest attainable deviation {top!r}")
    k = data.z0_index
    lo_t, hi_t = h_tilde(data)[k], data.h_upper[k]
    if _deviation_at(data, hi_t) <= budget:
        upper = hi_t
    else:
        # deviation is nondecreasing and continuous in t
        while hi_t - lo_t > _BISECT_TOL * max(1.0, abs(hi_t)):
            mid = 0.5 * (lo_t + hi_t)
            if _deviation_at(data, mid) <= budget:
                lo_t = mid
            else:
                hi_t = mid
        upper = lo_t
    return BoundPair(float(data.h_lower[k]), float(upper))


def theta_bounds(data, delta_m, metric="left"):
    """Bounds on ``h(z0)`` when the deviation may exceed its minimum by ``delta_m``.

    Parameters
    ----------
    data : MIVData
    delta_m : float
        Positive slack above the minimal deviation.
    metric : {"left", "right", "union"}

    Returns
    -------
    BoundPair

    Raises
    ------
    DomainError
        If ``delta_m`` is not positive or the budget is unattainable.
    """
    if not delta_m > 0:
        raise DomainError("delta_m must be positive")
    if metric == "left":
        return _left_bounds(data, delta_m)
    if metric == "right":
        bp = _left_bounds(data.mirrored(), delta_m)
        return BoundPair(-bp.upper, -bp.lower)
    if metric == "union":
        a = theta_bounds(data, delta_m, "left")
        b = theta_bounds(data, delta_m, "right")
        return BoundPair(min(a.lower, b.lower), max(a.upper, b.upper))
    raise DomainError(f"metric must be one of {METRICS}")
