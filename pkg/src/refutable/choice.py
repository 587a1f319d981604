"""Discrete choice with a chi-squared relaxation of the Logit errors.

Goods ``0..J`` (``0`` is the outside option with utility zero). With
``Z=1`` all goods are available; with ``Z=0`` good ``J`` is not. The moment
vector stacks the ``Z=1`` choice indicators of goods ``1..J`` and the
``Z=0`` indicators of goods ``1..J-1``.

The minimal divergence needed to rationalize utilities ``u`` comes from the
concave dual in ``(zeta, lambda)`` with ``phi*(x) = x**2/2 + x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .exceptions import ConvergenceError, DomainError, InfeasibleError
from .late import BoundPair

EXPECTATIONS = ("mc", "analytic", "grid")
_UNREACHABLE = 1e12


def phi_star(x):
    """Convex conjugate of the chi-squared generator."""
    return 0.5 * x * x + x


def logit_probs(u, z):
    """Choice probabilities under i.i.d. Type-I extreme value errors.

    Parameters
    ----------
    u : array-like of shape (J,)
        Mean utilities of the inside goods.
    z : {0, 1}
        ``z=0`` removes good ``J``.

    Returns
    -------
    ndarray
        Probabilities of the outside option and the available inside goods.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError("utilities must be finite")
    if z not in (0, 1):
        raise DomainError("z must be 0 or 1")
    v = np.concatenate([[0.0], u if z == 1 else u[:-1]])
    return special.softmax(v)


def logit_moments(u):
    """Target vector ``P`` implied by pure Logit at utilities ``u``."""
    return np.concatenate([logit_probs(u, 1)[1:], logit_probs(u, 0)[1:]])


@dataclass(frozen=True, eq=False)
class ChoiceModelSpec:
    """Observed choice probabilities and the integration scheme.

    Parameters
    ----------
    J : int
        Number of inside goods, at least 2.
    P : array of shape (2J - 1,)
        ``P[j-1] = P(j | z=1)`` for ``j=1..J``, then ``P(j | z=0)`` for
        ``j=1..J-1``.
    mc_samples : int
        Monte-Carlo draws of the error vector (antithetic pairs).
    seed : int
    expectation : {"mc", "analytic", "grid"}
        ``"analytic"`` uses exact Logit moments, ``"grid"`` a product grid of
        Gumbel quantiles with ``grid_points`` nodes per good.
    grid_points : int
    """

    J: int
    P: np.ndarray
    mc_samples: int = 100_000
    seed: int = 0
    expectation: str = "mc"
    grid_points: int = 20
    _xi: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _w: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.J) < 2:
            raise DomainError("J must be at least 2")
        P = np.asarray(self.P, dtype=float)
        J = int(self.J)
        if P.shape != (2 * J - 1,):
            raise DomainError(f"P must have length 2J-1={2 * J - 1}")
        if np.any(P < 0) or P[:J].sum() > 1 + 1e-12 or P[J:].sum() > 1 + 1e-12:
            raise DomainError("probabilities in each instrument block must be nonnegative and sum to at most 1")
        if self.expectation not in EXPECTATIONS:
            raise DomainError(f"expectation must be one of {EXPECTATIONS}")
        if self.mc_samples < 2:
            raise DomainError("mc_samples must be at least 2")
        P.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "P", P)
        if self.expectation == "mc":
            rng = np.random.default_rng(self.seed)
            half = int(self.mc_samples) // 2
            U = rng.random((half, J + 1))
            U = np.concatenate([U, 1.0 - U])
            object.__setattr__(self, "_xi", stats.gumbel_r.ppf(U))
            object.__setattr__(self, "_w", np.full(U.shape[0], 1.0 / U.shape[0]))
        elif self.expectation == "grid":
            nodes = stats.gumbel_r.ppf((np.arange(self.grid_points) + 0.5) / self.grid_points)
            mesh = np.meshgrid(*([nodes] * (J + 1)), indexing="ij")
            xi = np.stack([m.ravel() for m in mesh], axis=1)
            object.__setattr__(self, "_xi", xi)
            object.__setattr__(self, "_w", np.full(xi.shape[0], 1.0 / xi.shape[0]))

    @property
    def dim(self):
        return 2 * self.J - 1

    @property
    def support(self):
        """Error nodes and weights used for expectations (None when analytic)."""
        return self._xi, self._w

    def with_P(self, P):
        return ChoiceModelSpec(self.J, P, self.mc_samples, self.seed, self.expectation, self.grid_points)


def moment_matrix(u, xi):
    """Moment vectors ``g(u, xi)``, one row per error draw."""
    u = np.asarray(u, dtype=float)
    J = u.size
    v = np.concatenate([[0.0], u])[None, :] + xi
    c1 = np.argmax(v, axis=1)
    c0 = np.argmax(v[:, :J], axis=1)
    g = np.empty((xi.shape[0], 2 * J - 1))
    g[:, :J] = c1[:, None] == np.arange(1, J + 1)[None, :]
    g[:, J:] = c0[:, None] == np.arange(1, J)[None, :]
    return g


def moment_moments(u, spec):
    """Mean and covariance of ``g(u, xi)`` under the baseline."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.J,):
        raise DomainError(f"u must have length J={spec.J}")
    if spec.expectation == "analytic":
        J = spec.J
        p1 = logit_probs(u, 1)[1:]
        p0 = logit_probs(u, 0)[1:]
        mean = np.concatenate([p1, p0])
        second = np.zeros((2 * J - 1, 2 * J - 1))
        second[:J, :J] = np.diag(p1)
        second[J:, J:] = np.diag(p0)
        # good j < J chosen from the full set is also chosen without J; given
        # that J wins, the choice among the rest is Logit and independent
        cross = np.zeros((J, J - 1))
        cross[: J - 1, :] = np.diag(p1[: J - 1])
        cross[J - 1, :] = p1[J - 1] * p0
        second[:J, J:] = cross
        second[J:, :J] = cross.T
        return mean, second - np.outer(mean, mean)
    xi, w = spec.support
    J = spec.J
    v = np.concatenate([[0.0], u])[None, :] + xi
    c1 = np.argmax(v, axis=1)
    c0 = np.argmax(v[:, :J], axis=1)
    # g is a function of the pair (c1, c0); tabulate its law
    joint = np.bincount(c1 * J + c0, weights=w, minlength=(J + 1) * J).reshape(J + 1, J)
    G = np.zeros(((J + 1) * J, 2 * J - 1))
    a1, a0 = np.divmod(np.arange((J + 1) * J), J)
    for j in range(1, J + 1):
        G[a1 == j, j - 1] = 1.0
    for j in range(1, J):
        G[a0 == j, J + j - 1] = 1.0
    pj = joint.ravel()
    mean = pj @ G
    gc = G - mean
    return mean, (gc * pj[:, None]).T @ gc


def _closed_form_lower(mean, cov, P):
    r = mean - P
    sol, *_ = np.linalg.lstsq(cov, r, rcond=None)
    # a residual outside the range of cov cannot be matched by any density
    if np.linalg.norm(cov @ sol - r) > 1e-8 * max(1.0, np.linalg.norm(r)):
        return math.inf
    return float(0.5 * r @ sol)


@dataclass(frozen=True)
class DivergenceInterval:
    """Range of chi-squared divergences compatible with utilities ``u``."""

    delta_lower: float
    delta_upper: float
    lower_attained: bool
    upper_attained: bool
    grad_norm: float = 0.0

    def __post_init__(self):
        if self.delta_lower < -1e-12 or self.delta_upper < self.delta_lower - 1e-12:
            raise DomainError("divergence interval must satisfy 0 <= lower <= upper")

    def contains(self, m):
        lo_ok = m >= self.delta_lower if self.lower_attained else m > self.delta_lower
        hi_ok = m <= self.delta_upper if self.upper_attained else m < self.delta_upper
        return bool(lo_ok and hi_ok)


def dual_lower_objective(theta, mean, second, P):
    """``-E[phi*(-zeta - lam'g)] - zeta - lam'P`` and its gradient.

    Only the first two moments of ``g`` enter because ``phi*`` is quadratic.
    """
    zeta, lam = theta[0], theta[1:]
    # E[s] and E[s^2] for s = -zeta - lam'g
    es = -zeta - lam @ mean
    es2 = zeta * zeta + 2 * zeta * (lam @ mean) + lam @ second @ lam
    val = -(0.5 * es2 + es) - zeta - lam @ P
    g_zeta = -(zeta + lam @ mean)
    g_lam = mean - zeta * mean - second @ lam - P
    return val, np.concatenate([[g_zeta], g_lam])


def divergence_interval(u, spec, method="bfgs", gtol=1e-9, maxiter=500):
    """Minimal and maximal chi-squared divergence rationalizing ``u``.

    The maximal divergence over densities with respect to a continuous
    baseline is unbounded: mass can always be moved within a choice region
    without touching the moments. It is reported as ``inf`` and flagged as
    not attained.

    Parameters
    ----------
    u : array-like of shape (J,)
    spec : ChoiceModelSpec
    method : {"bfgs", "closed_form"}
        ``"bfgs"`` maximizes the dual by quasi-Newton ascent; the closed form
        ``r' Cov(g)^+ r / 2`` with ``r = E g - P`` is its exact value.

    Raises
    ------
    ConvergenceError
        If the ascent stops with a gradient norm above ``gtol`` (scaled).
    """
    mean, cov = moment_moments(u, spec)
    P = spec.P
    if method == "closed_form":
        lo = _closed_form_lower(mean, cov, P)
        return DivergenceInterval(max(lo, 0.0), math.inf, bool(np.isfinite(lo)), False)
    if method != "bfgs":
        raise DomainError("method must be 'bfgs' or 'closed_form'")
    second = cov + np.outer(mean, mean)

    def neg(theta):
        v, g = dual_lower_objective(theta, mean, second, P)
        return -v, -g

    res = optimize.minimize(neg, np.zeros(spec.dim + 1), jac=True, method="BFGS",
                            options={"gtol": gtol, "maxiter": maxiter})
    gnorm = float(np.linalg.norm(res.jac, np.inf))
    scale = max(1.0, float(np.max(np.abs(res.x))))
    if gnorm > 1e-6 * scale:
        raise ConvergenceError(f"dual ascent did not converge: {res.message}", best=res.x, grad_norm=gnorm)
    return DivergenceInterval(max(-float(res.fun), 0.0), math.inf, True, False, gnorm)


def _min_lower(uJ, spec, box, n_starts, method, stop_below=None):
    """``min over u_1..u_{J-1} in box`` of the minimal divergence at fixed ``u_J``."""
    inner = box[:-1]

    def f(x):
        x = np.clip(x, inner[:, 0], inner[:, 1])
        val = divergence_interval(np.concatenate([x, [uJ]]), spec, method).delta_lower
        # a finite stand-in for "unreachable" keeps the simplex arithmetic defined
        return min(val, _UNREACHABLE)

    rng = np.random.default_rng(12345)
    starts = inner[:, 0] + rng.random((n_starts, inner.shape[0])) * (inner[:, 1] - inner[:, 0])
    starts[0] = inner.mean(axis=1)
    best = math.inf
    for x0 in starts:
        res = optimize.minimize(f, x0, method="Nelder-Mead", bounds=[tuple(b) for b in inner],
                                options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 400})
        best = min(best, float(res.fun))
        if stop_below is not None and best <= stop_below:
            break
    return best


def utility_bounds(m, spec, u_search_box, n_scan=41, n_starts=8, tol=1e-6, method="closed_form"):
    """Bounds on ``u_J`` over utilities rationalizable at divergence ``m``.

    Parameters
    ----------
    m : float
        Divergence budget, nonnegative.
    spec : ChoiceModelSpec
    u_search_box : array-like of shape (J, 2)
        Bounds for each mean utility.
    n_scan : int
        Coarse scan points for ``u_J`` before bisection.
    n_starts : int
        Multi-start count of the inner search over the other utilities.
    tol : float
        Bisection tolerance on ``u_J``.

    Returns
    -------
    BoundPair

    Raises
    ------
    InfeasibleError
        If no scanned ``u_J`` is rationalizable.
    """
    if m < 0:
        raise DomainError("m must be nonnegative")
    box = np.asarray(u_search_box, dtype=float)
    if box.shape != (spec.J, 2) or np.any(box[:, 0] > box[:, 1]) or not np.all(np.isfinite(box)):
        raise DomainError("u_search_box must be a bounded (J, 2) array of ordered intervals")

    def feasible(uJ):
        # upper divergence is unbounded, so only the lower end can bind
        return _min_lower(uJ, spec, box, n_starts, method, stop_below=m) <= m

    grid = np.linspace(box[-1, 0], box[-1, 1], n_scan)
    ok = np.array([feasible(t) for t in grid])
    if not ok.any():
        raise InfeasibleError("no utility rationalizable at divergence m in box")
    first, last = int(np.argmax(ok)), int(ok.size - 1 - np.argmax(ok[::-1]))

    def bisect(good, bad):
        while abs(bad - good) > tol:
            mid = 0.5 * (good + bad)
            if feasible(mid):
                good = mid
            else:
                bad = mid
        return good

    lower = grid[first] if first == 0 else bisect(grid[first], grid[first - 1])
    upper = grid[last] if last == grid.size - 1 else bisect(grid[last], grid[last + 1])
    return BoundPair(float(lower), float(upper))


def feasible_utilities(m, spec, u_search_box, uJ_values, n_starts=8, method="closed_form"):
    """Boolean feasibility of each ``u_J`` in ``uJ_values`` at budget ``m``."""
    box = np.asarray(u_search_box, dtype=float)
    return np.array([_min_lower(t, spec, box, n_starts, method, stop_below=m) <= m for t in uJ_values])
