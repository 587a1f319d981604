"""Brute-force references used to audit the fast solvers.

Everything here favours transparency over speed. The functions are part of
the installed package so that any caller can rerun the audits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import core
from .exceptions import DomainError, InfeasibleError

_TOL = 1e-10


def _arm_box(F, arm):
    if arm == "treated":
        own, other = F.p[:, 1], F.q[:, 1]
    elif arm == "untreated":
        own, other = F.q[:, 0], F.p[:, 0]
    else:
        raise DomainError(f"unknown arm {arm!r}")
    return np.maximum(own - other, 0.0), own


def _sense(arm, direction):
    """+1 when the arm's first moment is maximized, -1 when minimized."""
    if direction not in ("max", "min"):
        raise DomainError(f"unknown direction {direction!r}")
    return 1.0 if (arm == "treated") == (direction == "max") else -1.0


def lp_allocate(F, arm, direction, mass):
    """Extremal complier density by linear programming.

    Solves ``max (or min) sum(y * h) * w`` subject to the arm's sandwich
    ``floor <= h <= own`` and ``sum(h) * w = mass``.

    Returns
    -------
    ndarray of shape (K,)

    Raises
    ------
    InfeasibleError
        If ``mass`` cannot be reached inside the sandwich.
    """
    lo, hi = _arm_box(F, arm)
    w = F.bin_width
    if mass < lo.sum() * w - _TOL or mass > hi.sum() * w + _TOL:
        raise InfeasibleError(f"mass {mass!r} is not attainable in the {arm} arm")
    sense = _sense(arm, direction)
    res = optimize.linprog(
        -sense * F.y_grid * w,
        A_eq=np.full((1, F.K), w),
        b_eq=[np.clip(mass, lo.sum() * w, hi.sum() * w)],
        bounds=list(zip(lo, hi)),
        method="highs",
    )
    if res.status != 0:
        raise InfeasibleError(f"linear program failed: {res.message}")
    return res.x


def lp_moment(F, arm, direction, masses):
    """Optimal first moment of the allocation LP, for an array of masses.

    Uses LP duality for ``max sum(c x) s.t. l <= x <= u, sum(x) = A``: the
    value is ``min over lam of lam * A + sum(max((c - lam) u, (c - lam) l))``,
    a convex piecewise-linear function of ``lam`` whose minimum sits at one
    of the ``c_k``. No sorting or greedy fill is involved.
    """
    lo, hi = _arm_box(F, arm)
    w = F.bin_width
    sense = _sense(arm, direction)
    c = sense * F.y_grid
    l, u = lo * w, hi * w
    masses = np.atleast_1d(np.asarray(masses, dtype=float))
    diff = c[None, :] - c[:, None]  # row: lam = c_j
    per_lam = np.sum(np.maximum(diff * u[None, :], diff * l[None, :]), axis=1)
    vals = c[:, None] * masses[None, :] + per_lam[:, None]
    return sense * vals.min(axis=0)


def _segment_objective(F, seg, direction):
    def f(a):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = seg.b(a)
        return lp_moment(F, "treated", direction, a) / a - lp_moment(F, "untreated", direction, b) / b

    return f


def _refine(f, grid, vals, best, sign, iters=80):
    """Golden-section polish of ``sign * f`` on the grid cells around ``best``."""
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - phi * (hi - lo), lo + phi * (hi - lo)
    f1, f2 = sign * f(x1)[0], sign * f(x2)[0]
    for _ in range(iters):
        if f1 > f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - phi * (hi - lo)
            f1 = sign * f(x1)[0]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + phi * (hi - lo)
            f2 = sign * f(x2)[0]
    return max(sign * vals[best], f1, f2) * sign


def segment_grid_bounds(F, m, n_points=2000, convention="own_arm", refine=True):
    """LATE bounds by scanning ``n_points`` equally spaced ``(a, b)`` pairs.

    Every point on the feasible segment is solved with :func:`lp_moment`.
    With ``refine`` the best grid cell is polished by golden-section search,
    which removes the first-order grid error at kinks of the objective.

    Returns
    -------
    tuple of float
        ``(lower, upper)``.
    """
    # imported here so that the oracle only borrows the segment geometry
    from .late import feasible_segment

    seg = feasible_segment(F, m, convention)
    a = np.linspace(seg.a_lo, seg.a_hi, n_points) if not seg.degenerate else np.array([seg.a_lo])
    f_up = _segment_objective(F, seg, "max")
    f_lo = _segment_objective(F, seg, "min")
    up, lo = f_up(a), f_lo(a)
    iu, il = int(np.argmax(up)), int(np.argmin(lo))
    if refine and a.size > 1:
        return float(_refine(f_lo, a, lo, il, -1.0)), float(_refine(f_up, a, up, iu, 1.0))
    return float(lo[il]), float(up[iu])


@dataclass(frozen=True, eq=False)
class StructureWitness:
    """Explicit type-by-type densities rationalizing ``F``.

    ``h1`` and ``h0`` are complier densities of ``Y(1)`` and ``Y(0)`` in the
    arms that reveal them. ``defier_treated`` is the defier ``Y(1)`` density
    seen in the ``Z=0, D=1`` cell and ``defier_untreated`` the defier ``Y(0)``
    density seen in ``Z=1, D=0``; always- and never-takers fill the rest.
    """

    h1: np.ndarray
    h0: np.ndarray
    defier_treated: np.ndarray
    defier_untreated: np.ndarray
    always_taker: np.ndarray
    never_taker: np.ndarray
    bin_width: float
    pr_z1: float

    def reassemble(self):
        """Return ``(p, q)`` rebuilt from the type densities."""
        p = np.column_stack([self.never_taker + self.defier_untreated, self.always_taker + self.h1])
        q = np.column_stack([self.never_taker + self.h0, self.always_taker + self.defier_treated])
        return p, q

    @property
    def defier_mass_z0(self):
        return float(self.defier_treated.sum() * self.bin_width)

    @property
    def defier_mass_z1(self):
        return float(self.defier_untreated.sum() * self.bin_width)

    def defier_mass(self, convention="own_arm"):
        """Total defier mass, weighting the two cells as in ``convention``."""
        z1, z0 = self.pr_z1, 1.0 - self.pr_z1
        if convention == "own_arm":
            return z1 * self.defier_mass_z0 + z0 * self.defier_mass_z1
        if convention == "structural":
            return z0 * self.defier_mass_z0 + z1 * self.defier_mass_z1
        raise DomainError(f"witness does not implement convention {convention!r}")


def witness_from_allocation(F, h1, h0):
    """Assemble a structure from complier densities.

    Raises
    ------
    DomainError
        If ``h1`` or ``h0`` leaves its sandwich; the message names the bin.
    """
    h1 = np.asarray(h1, dtype=float)
    h0 = np.asarray(h0, dtype=float)
    for name, h, arm in (("h1", h1, "treated"), ("h0", h0, "untreated")):
        if h.shape != (F.K,):
            raise DomainError(f"{name} must have shape ({F.K},)")
        lo, hi = _arm_box(F, arm)
        bad = np.flatnonzero((h < lo - 1e-12) | (h > hi + 1e-12))
        if bad.size:
            k = int(bad[0])
            raise DomainError(f"{name} violates its sandwich at bin {k} (y={F.y_grid[k]!r})")
    p1, q1, p0, q0 = F.p[:, 1], F.q[:, 1], F.p[:, 0], F.q[:, 0]
    return StructureWitness(
        h1=h1,
        h0=h0,
        defier_treated=np.maximum(q1 - p1 + h1, 0.0),
        defier_untreated=np.maximum(p0 - q0 + h0, 0.0),
        always_taker=np.maximum(p1 - h1, 0.0),
        never_taker=np.maximum(q0 - h0, 0.0),
        bin_width=F.bin_width,
        pr_z1=F.pr_z1,
    )


def proportional_witness(F, a, b):
    """Witness with complier masses ``(a, b)`` spread proportionally over the room.

    Raises
    ------
    InfeasibleError
        If ``(a, b)`` lies outside the admissible box.
    """
    a_lo, a_hi, b_lo, b_hi = core.complier_mass_bounds(F)
    if not (a_lo - _TOL <= a <= a_hi + _TOL and b_lo - _TOL <= b <= b_hi + _TOL):
        raise InfeasibleError(f"(a, b)=({a!r}, {b!r}) outside the admissible box")
    hs = []
    for arm, mass, lo_m, hi_m in (("treated", a, a_lo, a_hi), ("untreated", b, b_lo, b_hi)):
        lo, hi = _arm_box(F, arm)
        t = 0.0 if hi_m - lo_m <= 0 else np.clip((mass - lo_m) / (hi_m - lo_m), 0.0, 1.0)
        hs.append(lo + t * (hi - lo))
    return witness_from_allocation(F, hs[0], hs[1])


# -- intersection bounds ----------------------------------------------------


def intersection_deviation(data, theta):
    """Deviation of the structure ``Y = theta`` with ``eta = bound - theta``.

    Mean independence of ``Y`` pins ``E[eta | Z=z]`` for every ``z``; the
    structure is built explicitly and its deviation read off.
    """
    eta_plus = [float(u) - theta for u in data.mean_upper]
    eta_minus = [float(l) - theta for l in data.mean_lower]
    return max(max(eta_minus), 0.0) + max(-min(eta_plus), 0.0)


def intersection_feasible(data, theta, m, tol=0.0):
    """Whether some structure with mean ``theta`` has deviation at most ``m``."""
    return intersection_deviation(data, theta) <= m + tol


# -- monotone instrument ----------------------------------------------------


def _running_max_gap(h, w):
    total, env = 0.0, -np.inf
    for v, wk in zip(h, w):
        env = max(env, v)
        total += (env - v) * wk
    return total


def miv_deviation_at(data, t):
    """Left deviation of the extremal function raising ``h(z0)`` to ``t``, by loops."""
    lo, up, k0 = data.h_lower, data.h_upper, data.z0_index
    env, ht = -np.inf, []
    for l, u in zip(lo, up):
        env = max(env, l)
        ht.append(min(env, u))
    h = [ht[k] if k < k0 else min(max(t, ht[k]), up[k]) for k in range(len(ht))]
    return _running_max_gap(h, data.weights)


def miv_upper_grid(data, delta_m, n_points=10_000, levels=2):
    """Largest ``t`` on a nested grid with deviation within the budget."""
    env, ht = -np.inf, []
    for l, u in zip(data.h_lower, data.h_upper):
        env = max(env, l)
        ht.append(min(env, u))
    budget = _running_max_gap(ht, data.weights) + delta_m
    k0 = data.z0_index
    lo, hi = float(data.h_lower[k0]), float(data.h_upper[k0])
    best = lo
    for _ in range(levels):
        ts = np.linspace(lo, hi, n_points)
        ok = np.array([miv_deviation_at(data, t) <= budget for t in ts])
        if not ok.any():
            break
        i = int(np.flatnonzero(ok)[-1])
        best = float(ts[i])
        if i == n_points - 1:
            break
        lo, hi = ts[i], ts[i + 1]
    return best


# -- discrete choice ----------------------------------------------------------


def choice_primal_lower(u, spec, nonnegative=False):
    """Minimal chi-squared divergence over likelihood ratios on a finite support.

    Solves ``min 0.5 * sum(w * (L - 1)**2)`` subject to ``sum(w * L) = 1`` and
    ``sum(w * L * g) = P`` with cvxpy. Requires a spec with a finite support
    (``expectation="grid"`` or ``"mc"``).
    """
    import cvxpy as cp

    from .choice import moment_matrix

    xi, w = spec.support
    if xi is None:
        raise DomainError("primal oracle needs a finite error support")
    g = moment_matrix(u, xi)
    L = cp.Variable(w.size)
    cons = [w @ L == 1, (g * w[:, None]).T @ L == spec.P]
    if nonnegative:
        cons.append(L >= 0)
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum(cp.multiply(w, cp.square(L - 1)))), cons)
    prob.solve()
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise InfeasibleError(f"primal program status {prob.status}")
    return float(prob.value)
