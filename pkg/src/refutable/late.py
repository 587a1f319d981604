"""LATE bounds at a fixed data distribution and defier mass.

Given complier masses ``a`` (treated arm, ``Z=1``) and ``b`` (untreated arm,
``Z=0``), the extremal complier outcome densities are greedy fills of the
"room" ``min(p, q)`` on top of a mandatory floor. The remaining problem is
one-dimensional: ``(a, b)`` lies on the segment cut out of the admissible box
by the defier-mass constraint.

On a grid the fill at the threshold bin is fractional, so the first moment
of each allocation is piecewise linear in its mass. The objective
``M1(a)/a - M0(b)/b`` is then of the form ``alpha1/a - alpha0/b + const`` on
every piece, and is optimized piece by piece in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .exceptions import DomainError

#: complier masses below this make the ratio undefined
MASS_FLOOR = 1e-12
_TOL = 1e-10

TREATED, UNTREATED = "treated", "untreated"
MAX, MIN = "max", "min"


@dataclass(frozen=True, eq=False)
class AllocationResult:
    h: np.ndarray
    threshold: float
    mean_component: float
    mass: float


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper + 1e-9:
            raise DomainError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def width(self):
        return self.upper - self.lower


def _arm_parts(F, arm):
    if arm == TREATED:
        own, other = F.p[:, 1], F.q[:, 1]
    elif arm == UNTREATED:
        own, other = F.q[:, 0], F.p[:, 0]
    else:
        raise DomainError(f"arm must be {TREATED!r} or {UNTREATED!r}")
    floor = np.maximum(own - other, 0.0)
    room = np.minimum(own, other)
    return floor, room


def _fill_from_top(arm, direction):
    """Whether residual mass goes to the highest outcomes first."""
    if direction not in (MAX, MIN):
        raise DomainError(f"direction must be {MAX!r} or {MIN!r}")
    # the LATE upper bound wants a high treated mean and a low untreated mean
    return (arm == TREATED) == (direction == MAX)


def allocate(F, arm, direction, mass):
    """Extremal complier density with a given total mass.

    Parameters
    ----------
    F : DiscretizedObservables
    arm : {"treated", "untreated"}
    direction : {"max", "min"}
        Direction of the LATE bound being computed, not of the arm's mean:
        ``("untreated", "max")`` places mass on the lowest outcomes.
    mass : float

    Returns
    -------
    AllocationResult
    """
    floor, room = _arm_parts(F, arm)
    top = _fill_from_top(arm, direction)
    w = F.bin_width
    lo = float(floor.sum() * w)
    hi = lo + float(room.sum() * w)
    if mass < lo - _TOL or mass > hi + _TOL:
        raise DomainError(f"mass {mass!r} outside admissible range [{lo!r}, {hi!r}] for the {arm} arm")
    residual = min(max(mass - lo, 0.0), hi - lo)

    order = np.arange(F.K)[::-1] if top else np.arange(F.K)
    room_mass = room[order] * w
    cum = np.cumsum(room_mass)
    fill = np.zeros(F.K)
    k = int(np.searchsorted(cum, residual, side="left"))
    k = min(k, F.K - 1)
    before = cum[k - 1] if k > 0 else 0.0
    fill[order[:k]] = room[order[:k]]
    part = residual - before
    frac = part / room_mass[k] if room_mass[k] > 0 else 0.0
    fill[order[k]] = room[order[k]] * min(max(frac, 0.0), 1.0)

    h = floor + fill
    # threshold: position where the continuous analogue of the fill stops
    edge_lo = F.y_grid[order[k]] - w / 2
    if residual <= 0:
        threshold = F.y_grid[-1] + w / 2 if top else F.y_grid[0] - w / 2
    elif top:
        threshold = edge_lo + w * (1 - frac)
    else:
        threshold = edge_lo + w * frac
    return AllocationResult(h, float(threshold), F.first_moment(h), float(h.sum() * w))


def _moment_curve(F, arm, direction):
    """Breakpoints of the first moment as a function of allocated mass.

    Returns ``(masses, moments, slopes)``: between ``masses[i]`` and
    ``masses[i+1]`` the first moment is ``moments[i] + slopes[i] * (t - masses[i])``.
    """
    floor, room = _arm_parts(F, arm)
    top = _fill_from_top(arm, direction)
    w = F.bin_width
    order = np.arange(F.K)[::-1] if top else np.arange(F.K)
    room_mass = room[order] * w
    keep = room_mass > 0
    order, room_mass = order[keep], room_mass[keep]
    base_mass = float(floor.sum() * w)
    base_moment = float(np.sum(F.y_grid * floor) * w)
    masses = base_mass + np.concatenate([[0.0], np.cumsum(room_mass)])
    moments = base_moment + np.concatenate([[0.0], np.cumsum(room_mass * F.y_grid[order])])
    slopes = F.y_grid[order]
    return masses, moments, slopes


def _eval_curve(curve, t):
    masses, moments, slopes = curve
    if slopes.size == 0:
        return moments[0]
    i = np.clip(np.searchsorted(masses, t, side="right") - 1, 0, slopes.size - 1)
    return moments[i] + slopes[i] * (t - masses[i])


@dataclass(frozen=True)
class Segment:
    """Feasible ``(a, b)`` pairs: ``a`` in ``[a_lo, a_hi]``, ``b = b0 - c * a``."""

    a_lo: float
    a_hi: float
    b0: float
    c: float

    def b(self, a):
        return self.b0 - self.c * a

    @property
    def degenerate(self):
        return self.a_hi - self.a_lo <= 1e-14


def feasible_segment(F, m, convention="own_arm"):
    """Intersect the defier-mass line with the admissible box.

    Raises
    ------
    DomainError
        If ``m`` is outside the defier support or no admissible point keeps
        both complier masses above :data:`MASS_FLOOR`.
    """
    sup = core.defier_support(F, convention)
    span = max(sup.width, 1.0)
    if m < sup.m_min - 1e-10 * span or m > sup.m_max + 1e-10 * span:
        raise DomainError(f"m={m!r} outside defier support [{sup.m_min!r}, {sup.m_max!r}]")
    a_lo, a_hi, b_lo, b_hi = core.complier_mass_bounds(F)
    c0, ca, cb = core.defier_coefficients(F, convention)
    b_lo_eff = max(b_lo, MASS_FLOOR)
    a_lo_eff = max(a_lo, MASS_FLOOR)
    if cb <= 0:
        raise DomainError("defier mass does not depend on b; both instrument arms must be observed")
    b0, c = (m - c0) / cb, ca / cb
    if c > 0:
        lo = max(a_lo_eff, (b0 - b_hi) / c)
        hi = min(a_hi, (b0 - b_lo_eff) / c)
    else:
        # b fixed by m alone
        lo, hi = a_lo_eff, a_hi
        if not b_lo_eff - 1e-10 <= b0 <= b_hi + 1e-10:
            raise DomainError(f"no admissible (a, b) at m={m!r}")
    if hi < lo:
        if lo - hi <= 1e-10 * max(1.0, abs(hi)):
            mid = 0.5 * (lo + hi)
            lo = hi = mid
        else:
            raise DomainError(f"no admissible (a, b) with positive complier masses at m={m!r}")
    return Segment(float(lo), float(hi), float(b0), float(c))


class _Objective:
    """``sign * (M1(a)/a - M0(b(a))/b(a))`` along a segment."""

    def __init__(self, F, segment, direction):
        self.seg = segment
        self.curve1 = _moment_curve(F, TREATED, direction)
        self.curve0 = _moment_curve(F, UNTREATED, direction)

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        b = self.seg.b(a)
        return _eval_curve(self.curve1, a) / a - _eval_curve(self.curve0, b) / b

    def candidates(self):
        seg = self.seg
        pts = [seg.a_lo, seg.a_hi]
        if seg.degenerate:
            return np.array([seg.a_lo])
        # treated-arm kinks
        m1 = self.curve1[0]
        pts.extend(m1[(m1 > seg.a_lo) & (m1 < seg.a_hi)])
        # untreated-arm kinks mapped into a
        if seg.c > 0:
            m0 = self.curve0[0]
            a_of_b = (seg.b0 - m0) / seg.c
            pts.extend(a_of_b[(a_of_b > seg.a_lo) & (a_of_b < seg.a_hi)])
        pts = np.unique(np.asarray(pts, dtype=float))
        # interior stationary points of alpha1/a - alpha0/b on each piece
        if seg.c > 0 and pts.size > 1:
            left, right = pts[:-1], pts[1:]
            mid = 0.5 * (left + right)
            alpha1 = _intercept(self.curve1, mid)
            alpha0 = _intercept(self.curve0, seg.b(mid))
            # d/da: -alpha1/a^2 - c * alpha0 / b^2 = 0
            ok = alpha1 * alpha0 < 0
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.sqrt(np.where(ok, -seg.c * alpha0 / alpha1, 0.0))
                a_star = seg.b0 / (seg.c + r)
            ok &= (a_star > left) & (a_star < right)
            pts = np.concatenate([pts, a_star[ok]])
        return pts


def _intercept(curve, t):
    masses, moments, slopes = curve
    if slopes.size == 0:
        return moments[0]
    i = np.clip(np.searchsorted(masses, t, side="right") - 1, 0, slopes.size - 1)
    return moments[i] - slopes[i] * masses[i]


@dataclass(frozen=True)
class BoundSolution:
    bounds: BoundPair
    a_upper: float
    a_lower: float
    segment: Segment


def solve_bounds(F, m, convention="own_arm"):
    """Bounds together with the optimizing complier masses."""
    seg = feasible_segment(F, m, convention)
    up = _Objective(F, seg, MAX)
    cand = up.candidates()
    vals = up(cand)
    iu = int(np.argmax(vals))
    lo = _Objective(F, seg, MIN)
    cand_l = lo.candidates()
    vals_l = lo(cand_l)
    il = int(np.argmin(vals_l))
    upper, lower = float(vals[iu]), float(vals_l[il])
    if lower > upper:
        # only possible through rounding when the segment is a point
        lower = upper = 0.5 * (lower + upper)
    return BoundSolution(BoundPair(lower, upper), float(cand[iu]), float(cand_l[il]), seg)


def conditional_bounds(F, m, convention="own_arm"):
    """Sharp LATE bounds given ``F`` and a defier mass ``m``.

    Parameters
    ----------
    F : DiscretizedObservables
    m : float
        Defier probability, inside ``defier_support(F)``.
    convention : str
        Arm weighting of the defier-mass constraint, see
        :func:`refutable.core.defier_coefficients`.

    Returns
    -------
    BoundPair
    """
    return solve_bounds(F, m, convention).bounds


def minimal_deviation_late(F):
    """LATE at the minimal defier mass: ratio of the floor allocations."""
    floor1, _ = _arm_parts(F, TREATED)
    floor0, _ = _arm_parts(F, UNTREATED)
    a, b = F.mass(floor1), F.mass(floor0)
    if a < MASS_FLOOR or b < MASS_FLOOR:
        raise DomainError("minimal complier mass is zero in one arm")
    return F.first_moment(floor1) / a - F.first_moment(floor0) / b


def wald_ratio(F):
    """``(E[Y|Z=1] - E[Y|Z=0]) / (E[D|Z=1] - E[D|Z=0])`` on the grid."""
    num = F.first_moment(F.p.sum(axis=1)) - F.first_moment(F.q.sum(axis=1))
    den = F.pr_d1_given_z1 - F.pr_d1_given_z0
    if abs(den) < 1e-12:
        raise DomainError("first stage is zero; the Wald ratio is undefined")
    return num / den


class LATEModel:
    """Bound solver handle used by the pipeline.

    Parameters
    ----------
    convention : str
        Defier-mass weighting; see :func:`refutable.core.defier_coefficients`.
    """

    name = "late"

    def __init__(self, convention="own_arm"):
        if convention not in core.CONVENTIONS:
            raise DomainError(f"unknown convention {convention!r}")
        self.convention = convention

    def defier_support(self, F):
        return core.defier_support(F, self.convention)

    def conditional_bounds(self, F, m):
        return conditional_bounds(F, m, self.convention)

    def __repr__(self):
        return f"LATEModel(convention={self.convention!r})"
