"""Observed-data distributions on an outcome grid, testable implications and
defier-mass accounting for the binary-instrument potential-outcome model.

Arm convention: column ``d`` of ``p`` (``q``) holds the joint density of
``(Y=y, D=d)`` given ``Z=1`` (``Z=0``), per outcome unit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import DomainError

#: slack for "integrates to one" and related mass identities
MASS_TOL = 1e-10
#: slack for the uniform-spacing check on ``y_grid``
SPACING_TOL = 1e-12
#: tolerance for deciding that the testable implication holds
IMPLICATION_TOL = 1e-10

CONVENTIONS = ("own_arm", "structural", "pooled")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscretizedObservables:
    """Piecewise-constant representation of the data distribution.

    Parameters
    ----------
    y_grid : array of shape (K,)
        Bin midpoints, strictly increasing and uniformly spaced.
    bin_width : float
    p : array of shape (K, 2)
        ``p[k, d]`` is the density of ``(Y=y_k, D=d)`` given ``Z=1``.
    q : array of shape (K, 2)
        Same, given ``Z=0``.
    pr_z1 : float
        ``Pr(Z=1)``.
    """

    y_grid: np.ndarray
    bin_width: float
    p: np.ndarray
    q: np.ndarray
    pr_z1: float

    def __post_init__(self):
        y = _frozen(self.y_grid)
        p = _frozen(self.p)
        q = _frozen(self.q)
        object.__setattr__(self, "y_grid", y)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "bin_width", float(self.bin_width))
        object.__setattr__(self, "pr_z1", float(self.pr_z1))

        K = y.shape[0]
        if y.ndim != 1 or K < 1:
            raise DomainError("y_grid must be a non-empty 1-d array")
        if p.shape != (K, 2) or q.shape != (K, 2):
            raise DomainError(f"p and q must have shape ({K}, 2)")
        if not self.bin_width > 0:
            raise DomainError("bin_width must be positive")
        if K > 1:
            steps = np.diff(y)
            if np.any(steps <= 0):
                raise DomainError("y_grid must be strictly increasing")
            if np.max(np.abs(steps - self.bin_width)) > SPACING_TOL * max(1.0, np.max(np.abs(y))):
                raise DomainError("y_grid spacing must equal bin_width")
        if np.any(p < 0) or np.any(q < 0):
            raise DomainError("densities must be nonnegative")
        for name, dens in (("p", p), ("q", q)):
            total = dens.sum() * self.bin_width
            if abs(total - 1.0) > MASS_TOL:
                raise DomainError(f"{name} integrates to {total!r}, not 1")
        if not 0.0 <= self.pr_z1 <= 1.0:
            raise DomainError("pr_z1 must lie in [0, 1]")

    @classmethod
    def from_bin_masses(cls, y_grid, p_mass, q_mass, pr_z1, normalize=False):
        """Build from per-bin probabilities instead of densities.

        ``p_mass[k, d] = Pr(Y in bin k, D=d | Z=1)``. With ``normalize=True``
        each of ``p_mass`` and ``q_mass`` is rescaled to total one first.
        """
        y = np.asarray(y_grid, dtype=float)
        w = float(y[1] - y[0]) if y.size > 1 else 1.0
        p_mass = np.asarray(p_mass, dtype=float)
        q_mass = np.asarray(q_mass, dtype=float)
        if normalize:
            p_mass = p_mass / p_mass.sum()
            q_mass = q_mass / q_mass.sum()
        return cls(y, w, p_mass / w, q_mass / w, pr_z1)

    @property
    def K(self):
        return self.y_grid.shape[0]

    @property
    def pr_z0(self):
        return 1.0 - self.pr_z1

    def mass(self, dens):
        """Integral of a grid density."""
        return float(np.sum(dens) * self.bin_width)

    def first_moment(self, dens):
        return float(np.sum(self.y_grid * dens) * self.bin_width)

    @property
    def pr_d1_given_z1(self):
        return self.mass(self.p[:, 1])

    @property
    def pr_d1_given_z0(self):
        return self.mass(self.q[:, 1])

    def with_outcomes(self, scale, shift):
        """Same distribution after the map ``y -> scale * y + shift``."""
        if not scale > 0:
            raise DomainError("scale must be positive")
        return DiscretizedObservables(
            self.y_grid * scale + shift, self.bin_width * scale,
            self.p / scale, self.q / scale, self.pr_z1)


@dataclass(frozen=True)
class ImplicationReport:
    satisfied: bool
    violation_mass_d1: float
    violation_mass_d0: float


@dataclass(frozen=True)
class DefierSupport:
    m_min: float
    m_max: float

    def __post_init__(self):
        if not (0.0 <= self.m_min <= self.m_max <= 1.0 + MASS_TOL):
            raise DomainError(f"invalid defier support [{self.m_min}, {self.m_max}]")

    @property
    def width(self):
        return self.m_max - self.m_min


def check_testable_implication(F):
    """Integrated violation of the dominance inequalities.

    The instrument-monotonicity model requires ``p(., 1) >= q(., 1)`` and
    ``q(., 0) >= p(., 0)`` pointwise.
    """
    w = F.bin_width
    v1 = float(np.sum(np.maximum(F.q[:, 1] - F.p[:, 1], 0.0)) * w)
    v0 = float(np.sum(np.maximum(F.p[:, 0] - F.q[:, 0], 0.0)) * w)
    return ImplicationReport(v1 <= IMPLICATION_TOL and v0 <= IMPLICATION_TOL, v1, v0)


def complier_mass_bounds(F):
    """Admissible complier masses ``(a_lo, a_hi, b_lo, b_hi)``.

    ``a`` is the complier mass in the treated arm given ``Z=1`` and ``b`` the
    complier mass in the untreated arm given ``Z=0``.
    """
    w = F.bin_width
    a_lo = float(np.sum(np.maximum(F.p[:, 1] - F.q[:, 1], 0.0)) * w)
    a_hi = F.mass(F.p[:, 1])
    b_lo = float(np.sum(np.maximum(F.q[:, 0] - F.p[:, 0], 0.0)) * w)
    b_hi = F.mass(F.q[:, 0])
    return a_lo, a_hi, b_lo, b_hi


def defier_coefficients(F, convention="own_arm"):
    """Return ``(c0, ca, cb)`` with ``defier_mass = c0 + ca * a + cb * b``.

    ``convention`` selects the weighting of the two arms:

    ``"own_arm"``
        ``Pr(Z=1) * (Q1 - P1 + a) + Pr(Z=0) * (P0 - Q0 + b)``; the default.
    ``"structural"``
        ``Pr(Z=0) * (Q1 - P1 + a) + Pr(Z=1) * (P0 - Q0 + b)``, the total
        obtained by counting defiers type by type in an explicit structure
        (see :mod:`refutable.oracles`).
    ``"pooled"``
        Constant term built from the pooled ``Pr(D=1)`` with the crossed
        weights of ``"structural"``; kept for comparison only.
    """
    P1, Q1 = F.pr_d1_given_z1, F.pr_d1_given_z0
    P0, Q0 = 1.0 - P1, 1.0 - Q1
    z1, z0 = F.pr_z1, F.pr_z0
    if convention == "own_arm":
        return z1 * (Q1 - P1) + z0 * (P0 - Q0), z1, z0
    if convention == "structural":
        return z0 * (Q1 - P1) + z1 * (P0 - Q0), z0, z1
    if convention == "pooled":
        pr_d1 = z1 * P1 + z0 * Q1
        const = pr_d1 - P1 * z0 + (1.0 - pr_d1) - Q0 * z1
        return const, z0, z1
    raise DomainError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")


def defier_mass(F, a, b, convention="own_arm"):
    """Population defier probability implied by complier masses ``(a, b)``.

    Raises
    ------
    DomainError
        If ``a`` or ``b`` lies outside its admissible interval.
    """
    a_lo, a_hi, b_lo, b_hi = complier_mass_bounds(F)
    slack = MASS_TOL
    if a < a_lo - slack:
        raise DomainError(f"a={a!r} is below its lower bound {a_lo!r}")
    if a > a_hi + slack:
        raise DomainError(f"a={a!r} exceeds its upper bound {a_hi!r}")
    if b < b_lo - slack:
        raise DomainError(f"b={b!r} is below its lower bound {b_lo!r}")
    if b > b_hi + slack:
        raise DomainError(f"b={b!r} exceeds its upper bound {b_hi!r}")
    c0, ca, cb = defier_coefficients(F, convention)
    return float(c0 + ca * a + cb * b)


def defier_support(F, convention="own_arm"):
    """Minimal and maximal defier mass compatible with ``F``."""
    a_lo, a_hi, b_lo, b_hi = complier_mass_bounds(F)
    lo = defier_mass(F, a_lo, b_lo, convention)
    hi = defier_mass(F, a_hi, b_hi, convention)
    # rounding leaves the floor a hair off zero on non-refuted data
    lo = 0.0 if abs(lo) <= MASS_TOL else lo
    return DefierSupport(lo, max(hi, lo))


class PriorFamily(str, enum.Enum):
    POINT_MASS_AT_MIN = "point_mass_at_min"
    UNIFORM = "uniform"
    GAUSSIAN_DECAY = "gaussian_decay"
    GIVE_UP = "give_up"


@dataclass(frozen=True)
class DeviationPrior:
    """Conditional belief over the deviation magnitude given ``F``.

    The density is only defined once a support ``[m_min, m_max]`` is known;
    every method takes that support as an argument.

    Parameters
    ----------
    family : PriorFamily or str
    upper_fraction : float
        Uniform only: the density is flat on
        ``[m_min, m_min + upper_fraction * (m_max - m_min)]``. The default 1
        is the plain uniform; smaller values give the step-function extreme
        points of the decreasing-density set.
    """

    family: PriorFamily
    upper_fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", PriorFamily(self.family))
        if not 0.0 < self.upper_fraction <= 1.0:
            raise DomainError("upper_fraction must lie in (0, 1]")

    @property
    def is_set(self):
        return self.family is PriorFamily.GIVE_UP

    @staticmethod
    def gaussian_scale(support):
        """Decay scale ``(m_max - m_min) / 1.96``."""
        return (support.m_max - support.m_min) / 1.96

    def _degenerate(self, support):
        return support.width <= 1e-14

    def normalizing_constant(self, support):
        """Constant ``C`` in ``C / (sqrt(2 pi) s) exp(-(m - m_min)^2 / s^2)``."""
        if self.family is not PriorFamily.GAUSSIAN_DECAY:
            raise DomainError("normalizing constant is specific to the Gaussian-decay prior")
        s = self.gaussian_scale(support)
        if s <= 0:
            return 1.0
        # integral of exp(-x^2/s^2) over [0, L] is s*sqrt(pi)/2*erf(L/s)
        mass = s * np.sqrt(np.pi) / 2.0 * special.erf(support.width / s)
        return float(np.sqrt(2.0 * np.pi) * s / mass)

    def pdf(self, m, support):
        if self.is_set:
            raise DomainError("the give-up prior is a set of distributions and has no density")
        if self._degenerate(support) or self.family is PriorFamily.POINT_MASS_AT_MIN:
            raise DomainError("point-mass prior has no density")
        m = np.asarray(m, dtype=float)
        inside = (m >= support.m_min) & (m <= support.m_max)
        if self.family is PriorFamily.UNIFORM:
            top = support.m_min + self.upper_fraction * support.width
            inside &= m <= top
            return np.where(inside, 1.0 / (top - support.m_min), 0.0)
        s = self.gaussian_scale(support)
        C = self.normalizing_constant(support)
        dens = C / (np.sqrt(2.0 * np.pi) * s) * np.exp(-((m - support.m_min) / s) ** 2)
        return np.where(inside, dens, 0.0)

    def sample(self, support, rng, size=None):
        """Draw deviation values given the support."""
        if self.is_set:
            raise DomainError("cannot sample from the give-up prior set")
        shape = () if size is None else size
        if self.family is PriorFamily.POINT_MASS_AT_MIN or self._degenerate(support):
            out = np.full(shape, support.m_min)
            return float(out) if size is None else out
        u = rng.random(shape)
        if self.family is PriorFamily.UNIFORM:
            out = support.m_min + u * self.upper_fraction * support.width
        else:
            s = self.gaussian_scale(support)
            # inverse of F(x) = erf(x/s) / erf(L/s) on [0, L]
            out = support.m_min + s * special.erfinv(u * special.erf(support.width / s))
            out = np.minimum(out, support.m_max)
        return float(out) if size is None else out


@dataclass(frozen=True)
class MixturePrior:
    """Two-component mixture ``weight * first + (1 - weight) * second``."""

    first: DeviationPrior
    second: DeviationPrior
    weight: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise DomainError("mixture weight must lie in [0, 1]")
        if self.first.is_set or self.second.is_set:
            raise DomainError("mixture components must be single priors")

    is_set = False

    def sample(self, support, rng, size=None):
        # both components are drawn so the random stream does not depend on the weight
        u = rng.random(() if size is None else size)
        x1 = self.first.sample(support, rng, size)
        x2 = self.second.sample(support, rng, size)
        out = np.where(u < self.weight, x1, x2)
        return float(out) if size is None else out


POINT_MASS_AT_MIN = DeviationPrior(PriorFamily.POINT_MASS_AT_MIN)
UNIFORM = DeviationPrior(PriorFamily.UNIFORM)
GAUSSIAN_DECAY = DeviationPrior(PriorFamily.GAUSSIAN_DECAY)
GIVE_UP = DeviationPrior(PriorFamily.GIVE_UP)
