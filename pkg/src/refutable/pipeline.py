"""Posterior-mean bounds and robust credible intervals.

For every posterior draw of the data distribution the deviation magnitude is
drawn from the conditional prior, the bounds at that magnitude are solved,
and the per-draw bounds are averaged. Prior sets are handled through their
extreme points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator

from .core import DeviationPrior, DiscretizedObservables, MixturePrior, PriorFamily
from .exceptions import DomainError, NumericalError, RefutableError
from .late import LATEModel, minimal_deviation_late, wald_ratio
from .posterior import DPMixturePosterior, GridSpec, discretize
from .validation import check_alpha, check_late_data

SCHEMA = "refutable.robust-result/1"
#: share of skipped draws above which a run fails
MAX_SKIP_SHARE = 0.10
#: trimming constant as a multiple of the grid half range
TRIM_FACTOR = 10.0
#: m-grid used for the give-up prior set: 512 interior points plus both ends
GIVE_UP_POINTS = 514


@dataclass
class RobustResult:
    """Aggregated bounds over posterior draws.

    Attributes
    ----------
    theta_lower_star, theta_upper_star : float
        Posterior means of the per-draw lower and upper bounds.
    ci_lower, ci_upper : float
        ``alpha/2`` quantile of the lower trace, ``1 - alpha/2`` quantile of
        the upper trace.
    alpha : float
    traces : dict of ndarray
        ``draw``, ``m``, ``lower``, ``upper``, one entry per retained draw.
    diagnostics : dict
    """

    theta_lower_star: float
    theta_upper_star: float
    ci_lower: float
    ci_upper: float
    alpha: float
    traces: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "theta_lower_star": self.theta_lower_star,
            "theta_upper_star": self.theta_upper_star,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "alpha": self.alpha,
            "traces": {k: np.asarray(v).tolist() for k, v in self.traces.items()},
            "diagnostics": _plain(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != SCHEMA:
            raise DomainError(f"unsupported result schema {doc.get('schema')!r}")
        traces = {k: np.asarray(v, dtype=int if k == "draw" else float) for k, v in doc["traces"].items()}
        return cls(
            float(doc["theta_lower_star"]),
            float(doc["theta_upper_star"]),
            float(doc["ci_lower"]),
            float(doc["ci_upper"]),
            float(doc["alpha"]),
            traces,
            doc.get("diagnostics", {}),
        )

    def __eq__(self, other):
        if not isinstance(other, RobustResult):
            return NotImplemented
        a, b = self.to_dict(), other.to_dict()
        ta, tb = a.pop("traces"), b.pop("traces")
        # give-up and union traces carry NaN deviations
        same = ta.keys() == tb.keys() and all(
            np.array_equal(np.asarray(ta[k], float), np.asarray(tb[k], float), equal_nan=True) for k in ta)
        return same and a == b


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def aggregate_traces(lower, upper, alpha, trim=None):
    """Posterior means and robust interval from per-draw bounds.

    Parameters
    ----------
    lower, upper : array-like
    alpha : float
    trim : float, optional
        Values are clipped to ``[-trim, trim]`` before averaging.

    Returns
    -------
    dict
        Keys ``theta_lower_star``, ``theta_upper_star``, ``ci_lower``,
        ``ci_upper``, ``trimmed``.
    """
    alpha = check_alpha(alpha)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.size == 0 or lower.shape != upper.shape:
        raise DomainError("traces must be nonempty and of equal length")
    trimmed = 0
    if trim is not None:
        trimmed = int(np.sum(np.abs(lower) > trim) + np.sum(np.abs(upper) > trim))
        lower = np.clip(lower, -trim, trim)
        upper = np.clip(upper, -trim, trim)
    return {
        "theta_lower_star": float(lower.mean()),
        "theta_upper_star": float(upper.mean()),
        # type-1 (inverse empirical cdf) quantiles
        "ci_lower": float(np.quantile(lower, alpha / 2, method="inverted_cdf")),
        "ci_upper": float(np.quantile(upper, 1 - alpha / 2, method="inverted_cdf")),
        "trimmed": trimmed,
    }


def _as_observables(item, grid):
    if isinstance(item, DiscretizedObservables):
        return item
    return discretize(item, grid)


def _grid_for(draws, grid):
    if grid is not None or all(isinstance(d, DiscretizedObservables) for d in draws):
        return grid
    return GridSpec.covering([d for d in draws if not isinstance(d, DiscretizedObservables)])


def _half_range(draws, grid):
    if grid is not None:
        return grid.half_range
    F = draws[0]
    return 0.5 * (F.y_grid[-1] - F.y_grid[0] + F.bin_width)


def _draw_seeds(seed, n):
    return np.random.SeedSequence(seed).spawn(n)


def _one_draw(item, grid, model, prior, seed_seq):
    try:
        F = _as_observables(item, grid)
        sup = model.defier_support(F)
        if prior is None:
            lo, hi = frequentist_identified_set(F, model=model)
            return ("ok", float(sup.m_max), lo, hi)
        m = prior.sample(sup, np.random.default_rng(seed_seq))
        bp = model.conditional_bounds(F, float(m))
        return ("ok", float(m), bp.lower, bp.upper)
    except RefutableError as exc:
        return ("skip", type(exc).__name__, str(exc), None)


def _evaluate(draws, prior, model, alpha, grid, seed, trim, n_jobs):
    draws = list(draws)
    if not draws:
        raise DomainError("draws must be nonempty")
    alpha = check_alpha(alpha)
    model = model or LATEModel()
    grid = _grid_for(draws, grid)
    seeds = _draw_seeds(seed, len(draws))
    if n_jobs in (None, 1):
        out = [_one_draw(d, grid, model, prior, s) for d, s in zip(draws, seeds)]
    else:
        from joblib import Parallel, delayed

        out = Parallel(n_jobs=n_jobs)(delayed(_one_draw)(d, grid, model, prior, s) for d, s in zip(draws, seeds))
    keep = [i for i, o in enumerate(out) if o[0] == "ok"]
    skips = [{"draw": i, "reason": out[i][1], "message": out[i][2]} for i in range(len(out)) if out[i][0] != "ok"]
    if len(skips) > MAX_SKIP_SHARE * len(draws):
        raise NumericalError(
            f"{len(skips)} of {len(draws)} draws failed (limit {MAX_SKIP_SHARE:.0%}); first: {skips[0]['message']}"
        )
    traces = {
        "draw": np.array(keep, dtype=int),
        "m": np.array([out[i][1] for i in keep]),
        "lower": np.array([out[i][2] for i in keep]),
        "upper": np.array([out[i][3] for i in keep]),
    }
    trim = TRIM_FACTOR * _half_range(draws, grid) if trim is None else trim
    agg = aggregate_traces(traces["lower"], traces["upper"], alpha, trim)
    diagnostics = {
        "draws_requested": len(draws),
        "draws_used": len(keep),
        "skipped": skips,
        "trim_constant": float(trim),
        "trimmed": agg.pop("trimmed"),
    }
    res = RobustResult(alpha=alpha, traces=traces, diagnostics=diagnostics, **agg)
    _check_ordering(res)
    return res


def _check_ordering(res, tol=1e-9):
    chain = [res.ci_lower, res.theta_lower_star, res.theta_upper_star, res.ci_upper]
    names = ["ci_lower", "theta_lower_star", "theta_upper_star", "ci_upper"]
    broken = [f"{names[i]} > {names[i + 1]}" for i in range(3) if chain[i] > chain[i + 1] + tol]
    # skewed traces can put a quantile on the wrong side of the mean; report it
    res.diagnostics["ordering_violations"] = broken


def run(draws, prior, model=None, alpha=0.05, grid=None, seed=0, trim=None, n_jobs=None):
    """Robust posterior bounds under one deviation prior.

    Parameters
    ----------
    draws : sequence of PosteriorDrawF or DiscretizedObservables
    prior : DeviationPrior, MixturePrior or a prior set
        Sets are forwarded to :func:`run_prior_set`.
    model : object, optional
        Provides ``defier_support(F)`` and ``conditional_bounds(F, m)``;
        defaults to :class:`~refutable.late.LATEModel`.
    alpha : float
    grid : GridSpec, optional
        Sized from the draws when omitted.
    seed : int
        Seed of the deviation draws; per-draw streams are spawned from it.
    trim : float, optional
        Trimming constant; defaults to ten grid half ranges.
    n_jobs : int, optional
        Parallel workers (joblib). Results do not depend on it.

    Returns
    -------
    RobustResult
    """
    if _is_prior_set(prior):
        return run_prior_set(draws, prior, model, alpha, grid, seed, trim, n_jobs)
    if not isinstance(prior, (DeviationPrior, MixturePrior)):
        raise DomainError(f"unsupported prior {prior!r}")
    res = _evaluate(draws, prior, model, alpha, grid, seed, trim, n_jobs)
    res.diagnostics["prior"] = describe_prior(prior)
    return res


@dataclass(frozen=True)
class MixtureFamily:
    """Priors ``w * first + (1 - w) * second`` for ``w`` in ``weights``."""

    first: DeviationPrior
    second: DeviationPrior
    weights: tuple = (0.0, 1.0)

    def extreme_points(self):
        out = []
        for w in sorted({float(min(self.weights)), float(max(self.weights))}):
            if w == 1.0:
                out.append(self.first)
            elif w == 0.0:
                out.append(self.second)
            else:
                out.append(MixturePrior(self.first, self.second, w))
        return out


@dataclass(frozen=True)
class DecreasingDensitySet:
    """Priors with a nonincreasing density on the support.

    Extreme points are uniform densities on ``[m_min, m_min + c * width]``;
    ``n_steps`` values of ``c`` are used.
    """

    n_steps: int = 16

    def extreme_points(self):
        cs = np.linspace(1.0 / self.n_steps, 1.0, self.n_steps)
        return [DeviationPrior(PriorFamily.UNIFORM, upper_fraction=float(c)) for c in cs]


def _is_prior_set(prior):
    if isinstance(prior, (list, tuple, MixtureFamily, DecreasingDensitySet)):
        return True
    return isinstance(prior, DeviationPrior) and prior.is_set


def describe_prior(prior):
    if isinstance(prior, DeviationPrior):
        d = {"family": prior.family.value}
        if prior.upper_fraction != 1.0:
            d["upper_fraction"] = prior.upper_fraction
        return d
    if isinstance(prior, MixturePrior):
        return {"mixture": [describe_prior(prior.first), describe_prior(prior.second)], "weight": prior.weight}
    if isinstance(prior, MixtureFamily):
        return {"mixture_family": [describe_prior(prior.first), describe_prior(prior.second)], "weights": list(prior.weights)}
    if isinstance(prior, DecreasingDensitySet):
        return {"decreasing_density_set": prior.n_steps}
    return {"set": [describe_prior(p) for p in prior]}


def _union(results, alpha, prior_desc):
    if len(results) == 1:
        res = results[0]
        res.diagnostics["prior"] = prior_desc
        return res
    common = set(results[0].traces["draw"].tolist())
    for r in results[1:]:
        common &= set(r.traces["draw"].tolist())
    idx = np.array(sorted(common), dtype=int)

    def pick(r, key):
        pos = {d: i for i, d in enumerate(r.traces["draw"].tolist())}
        return r.traces[key][[pos[d] for d in idx]]

    lower = np.min([pick(r, "lower") for r in results], axis=0)
    upper = np.max([pick(r, "upper") for r in results], axis=0)
    traces = {"draw": idx, "m": np.full(idx.size, np.nan), "lower": lower, "upper": upper}
    res = RobustResult(
        theta_lower_star=min(r.theta_lower_star for r in results),
        theta_upper_star=max(r.theta_upper_star for r in results),
        ci_lower=min(r.ci_lower for r in results),
        ci_upper=max(r.ci_upper for r in results),
        alpha=alpha,
        traces=traces,
        diagnostics={
            "prior": prior_desc,
            "members": [{k: getattr(r, k) for k in ("theta_lower_star", "theta_upper_star", "ci_lower", "ci_upper")} for r in results],
            "draws_requested": results[0].diagnostics["draws_requested"],
            "draws_used": int(idx.size),
            "skipped": sorted({s["draw"]: s for r in results for s in r.diagnostics["skipped"]}.values(), key=lambda s: s["draw"]),
            "trim_constant": results[0].diagnostics["trim_constant"],
            "trimmed": sum(r.diagnostics["trimmed"] for r in results),
        },
    )
    _check_ordering(res)
    return res


def run_prior_set(draws, prior_set, model=None, alpha=0.05, grid=None, seed=0, trim=None, n_jobs=None):
    """Robust bounds over a set of deviation priors.

    Parameters
    ----------
    prior_set : list of priors, the give-up prior, MixtureFamily or DecreasingDensitySet
        Finite lists and families are evaluated at their extreme points and
        combined by union. The give-up set takes, per draw, the extreme
        bounds over an m-grid spanning the whole defier support.

    Returns
    -------
    RobustResult
        Credible-interval endpoints are the union of the members' intervals,
        which can be conservative.
    """
    desc = describe_prior(prior_set)
    if isinstance(prior_set, DeviationPrior):
        if not prior_set.is_set:
            return run(draws, prior_set, model, alpha, grid, seed, trim, n_jobs)
        res = _evaluate(draws, None, model, alpha, grid, seed, trim, n_jobs)
        res.traces["m"] = np.full(res.traces["draw"].size, np.nan)
        res.diagnostics["prior"] = desc
        res.diagnostics["m_grid_points"] = GIVE_UP_POINTS
        return res
    if isinstance(prior_set, (MixtureFamily, DecreasingDensitySet)):
        members = prior_set.extreme_points()
    else:
        members = list(prior_set)
        if not members:
            raise DomainError("prior set is empty")
    draws = list(draws)
    results = [run_prior_set(draws, p, model, alpha, grid, seed, trim, n_jobs) if _is_prior_set(p)
               else run(draws, p, model, alpha, grid, seed, trim, n_jobs) for p in members]
    return _union(results, alpha, desc)


def parse_prior(name):
    """Prior from a command-line style name, e.g. ``"gaussian_decay"``."""
    key = str(name).strip().lower().replace("-", "_")
    aliases = {"point_mass": "point_mass_at_min", "pointmassatmin": "point_mass_at_min", "giveup": "give_up",
               "give_up_assumption": "give_up", "gaussiandecay": "gaussian_decay"}
    key = aliases.get(key, key)
    if key == "decreasing":
        return DecreasingDensitySet()
    try:
        return DeviationPrior(PriorFamily(key))
    except ValueError as exc:
        raise DomainError(f"unknown prior {name!r}") from exc


class RobustLATE(BaseEstimator):
    """Robust Bayesian LATE bounds from ``(y, d, z)`` records.

    Parameters
    ----------
    prior : str or prior object
        Deviation prior or prior set; strings as in :func:`parse_prior`.
    alpha : float
    n_draws : int
        Posterior draws of the data distribution.
    grid_k : int
        Number of outcome bins.
    convention : str
        Defier-mass weighting, see :func:`refutable.core.defier_coefficients`.
    posterior : DPMixturePosterior, optional
        Unfitted posterior sampler; its ``random_state`` is overridden.
    random_state : int
    n_jobs : int, optional

    Attributes
    ----------
    result_ : RobustResult
    theta_lower_star_, theta_upper_star_, ci_lower_, ci_upper_ : float
    """

    def __init__(self, prior="gaussian_decay", alpha=0.05, n_draws=500, grid_k=256, convention="own_arm",
                 posterior=None, random_state=0, n_jobs=None):
        self.prior = prior
        self.alpha = alpha
        self.n_draws = n_draws
        self.grid_k = grid_k
        self.convention = convention
        self.posterior = posterior
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        X = check_late_data(X)
        if self.n_draws < 1:
            raise DomainError("n_draws must be at least 1")
        post = DPMixturePosterior() if self.posterior is None else self.posterior
        post = type(post)(**{**post.get_params(), "random_state": self.random_state})
        post.fit(X)
        self.draws_ = post.draw(self.n_draws)
        self.grid_ = GridSpec.covering(self.draws_, K=self.grid_k)
        prior = parse_prior(self.prior) if isinstance(self.prior, str) else self.prior
        self.result_ = run(self.draws_, prior, LATEModel(self.convention), self.alpha, self.grid_,
                           seed=self.random_state, n_jobs=self.n_jobs)
        self.result_.diagnostics["posterior"] = post.diagnostics_
        self.theta_lower_star_ = self.result_.theta_lower_star
        self.theta_upper_star_ = self.result_.theta_upper_star
        self.ci_lower_ = self.result_.ci_lower
        self.ci_upper_ = self.result_.ci_upper
        return self

    def predict(self, X=None):
        """Return ``(theta_lower_star, theta_upper_star)``."""
        if not hasattr(self, "result_"):
            raise DomainError("call fit first")
        return np.array([self.theta_lower_star_, self.theta_upper_star_])


def frequentist_identified_set(F, n_points=GIVE_UP_POINTS, model=None, polish=True):
    """Union of conditional bounds over the whole defier support.

    The bounds are not monotone in ``m``, so an ``n_points`` grid is scanned
    first; with ``polish`` the best cell of each endpoint is then searched
    by bounded scalar minimization.
    """
    model = model or LATEModel()
    sup = model.defier_support(F)
    ms = np.linspace(sup.m_min, sup.m_max, n_points)
    vals = []
    for m in ms:
        bp = model.conditional_bounds(F, float(m))
        vals.append((bp.lower, bp.upper))
    vals = np.array(vals)
    lo, hi = float(vals[:, 0].min()), float(vals[:, 1].max())
    if not polish or n_points < 3:
        return lo, hi

    def endpoint(m, col):
        bp = model.conditional_bounds(F, float(m))
        return bp.lower if col == 0 else -bp.upper

    for col in (0, 1):
        i = int(np.argmin(vals[:, col] if col == 0 else -vals[:, col]))
        cell = (ms[max(i - 1, 0)], ms[min(i + 1, n_points - 1)])
        try:
            opt = optimize.minimize_scalar(endpoint, bounds=cell, args=(col,), method="bounded",
                                           options={"xatol": 1e-12})
        except RefutableError:
            continue
        if col == 0:
            lo = min(lo, float(opt.fun))
        else:
            hi = max(hi, -float(opt.fun))
    return lo, hi


__all__ = [
    "RobustResult", "run", "run_prior_set", "aggregate_traces", "wald_ratio", "MixtureFamily",
    "DecreasingDensitySet", "parse_prior", "RobustLATE", "frequentist_identified_set",
    "minimal_deviation_late",
]
