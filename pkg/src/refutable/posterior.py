"""Nonparametric posterior over the observed-data distribution.

The ``(D, Z)`` cell probabilities get a conjugate Dirichlet update. Within
each cell the outcome density is a Dirichlet-process mixture of normals with
one common precision, sampled by blocked Gibbs on a truncated stick-breaking
representation.

Cells are indexed by ``d + 2 * z``: ``(d, z) = (0, 0), (1, 0), (0, 1), (1, 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from scipy import special, stats
from sklearn.base import BaseEstimator

from .core import DiscretizedObservables
from .exceptions import DomainError, GridError
from .validation import check_late_data

CELLS = ((0, 0), (1, 0), (0, 1), (1, 1))
#: largest conditional mass the grid may cut off in either instrument arm
MAX_TRUNCATED_MASS = 1e-3


def cell_index(d, z):
    return int(d) + 2 * int(z)


@dataclass(frozen=True)
class DPMMConfig:
    """Hyperparameters of the per-cell mixture prior and of the chain.

    Location parameters refer to standardized outcomes when ``standardize``
    is true (the default), otherwise to raw outcome units.
    """

    base_mean: float = 0.0
    base_sd: float = 1.0
    gamma_shape: float = 2.0
    gamma_rate: float = 4.0
    concentration: float = 1.0
    truncation_level: int = 50
    burn_in: int = 500
    thinning: int = 5
    dz_pseudocounts: tuple = (0.25, 0.25, 0.25, 0.25)
    standardize: bool = True
    # diagnostic switches: collapse to one component / freeze the precision
    force_single_component: bool = False
    fixed_precision: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "dz_pseudocounts", tuple(float(h) for h in self.dz_pseudocounts))
        if self.gamma_shape <= 1:
            raise DomainError("gamma_shape must exceed 1")
        if self.gamma_rate <= 0 or self.base_sd <= 0 or self.concentration <= 0:
            raise DomainError("gamma_rate, base_sd and concentration must be positive")
        if self.truncation_level < 10 and not self.force_single_component:
            raise DomainError("truncation_level must be at least 10")
        if self.burn_in < 0 or self.thinning < 1:
            raise DomainError("burn_in must be nonnegative and thinning at least 1")
        h = np.asarray(self.dz_pseudocounts)
        if h.shape != (4,) or np.any(h < 0) or h.sum() <= 0:
            raise DomainError("dz_pseudocounts must be 4 nonnegative values with positive total")
        if self.fixed_precision is not None and self.fixed_precision <= 0:
            raise DomainError("fixed_precision must be positive")

    @property
    def n_components(self):
        return 1 if self.force_single_component else int(self.truncation_level)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class PosteriorDrawF:
    """One posterior draw of the data distribution.

    Mixture parameters are stored in outcome units, one row per cell.

    Attributes
    ----------
    dz_probs : ndarray of shape (4,)
    weights, means : ndarray of shape (4, L)
    sds : ndarray of shape (4,)
    index : int
        Position of the draw in the chain output.
    seed : int
        Seed of the chain that produced it.
    y_range : tuple of float
        Smallest and largest fitted outcome.
    """

    dz_probs: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    index: int = 0
    seed: int = 0
    y_range: tuple = (0.0, 0.0)

    def __post_init__(self):
        dz = np.asarray(self.dz_probs, dtype=float)
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        sd = np.asarray(self.sds, dtype=float)
        if dz.shape != (4,) or np.any(dz < 0) or abs(dz.sum() - 1) > 1e-10:
            raise DomainError("dz_probs must be 4 probabilities summing to one")
        if w.shape[0] != 4 or w.shape != mu.shape or sd.shape != (4,):
            raise DomainError("mixture arrays must have one row per cell")
        if np.any(np.abs(w.sum(axis=1) - 1) > 1e-10) or np.any(w < 0):
            raise DomainError("mixture weights per cell must sum to one")
        if np.any(sd <= 0):
            raise DomainError("component sds must be positive")
        for name, val in (("dz_probs", dz), ("weights", w), ("means", mu), ("sds", sd)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def density(self, d, z, y):
        """Mixture density of cell ``(d, z)`` at ``y``."""
        c = cell_index(d, z)
        y = np.asarray(y, dtype=float)
        kern = stats.norm.pdf(y[..., None], self.means[c], self.sds[c])
        return kern @ self.weights[c]

    def cell_mass(self, d, z, lower, upper):
        """Mixture mass of cell ``(d, z)`` inside ``[lower, upper]``."""
        c = cell_index(d, z)
        s = self.sds[c]
        inside = stats.norm.cdf(upper, self.means[c], s) - stats.norm.cdf(lower, self.means[c], s)
        return float(inside @ self.weights[c])


@dataclass(frozen=True)
class GridSpec:
    """Uniform outcome grid of ``K`` bins spanning ``[lower, upper]``."""

    lower: float
    upper: float
    K: int = 256

    def __post_init__(self):
        if not np.isfinite(self.lower) or not np.isfinite(self.upper) or self.upper <= self.lower:
            raise DomainError("grid bounds must be finite with lower < upper")
        if self.K < 2:
            raise DomainError("grid needs at least two bins")

    @property
    def bin_width(self):
        return (self.upper - self.lower) / self.K

    @property
    def midpoints(self):
        return self.lower + (np.arange(self.K) + 0.5) * self.bin_width

    @property
    def half_range(self):
        return 0.5 * (self.upper - self.lower)

    @classmethod
    def covering(cls, draws, K=256, n_sd=4.0):
        """Grid spanning the fitted data range widened by ``n_sd`` of the largest sd."""
        draws = list(draws)
        if not draws:
            raise DomainError("need at least one draw to size the grid")
        lo = min(dr.y_range[0] for dr in draws)
        hi = max(dr.y_range[1] for dr in draws)
        sd = max(float(np.max(dr.sds)) for dr in draws)
        return cls(lo - n_sd * sd, hi + n_sd * sd, int(K))


def discretize(draw, grid):
    """Evaluate a posterior draw on an outcome grid.

    Parameters
    ----------
    draw : PosteriorDrawF
    grid : GridSpec

    Returns
    -------
    DiscretizedObservables

    Raises
    ------
    GridError
        If the grid cuts off more than ``MAX_TRUNCATED_MASS`` of the
        conditional outcome distribution in either instrument arm.
    """
    y = grid.midpoints
    w = grid.bin_width
    pi = draw.dz_probs
    cols = {}
    for z in (0, 1):
        arm_total = pi[cell_index(0, z)] + pi[cell_index(1, z)]
        if arm_total <= 0:
            raise DomainError(f"instrument arm z={z} has zero probability")
        truncated = 0.0
        for d in (0, 1):
            share = pi[cell_index(d, z)] / arm_total
            dens = draw.density(d, z, y)
            total = dens.sum() * w
            inside = draw.cell_mass(d, z, grid.lower, grid.upper)
            truncated += share * max(1.0 - inside, 0.0)
            if total <= 0:
                if share > 0:
                    raise GridError(f"cell (d={d}, z={z}) has no mass on the grid", 1.0)
                dens = np.full(grid.K, 1.0 / (grid.K * w))
                total = 1.0
            cols[d, z] = dens / total * share
        if truncated > MAX_TRUNCATED_MASS:
            raise GridError(
                f"grid [{grid.lower:.6g}, {grid.upper:.6g}] truncates mass {truncated:.3g} in arm z={z}",
                truncated,
            )
    p = np.column_stack([cols[0, 1], cols[1, 1]])
    q = np.column_stack([cols[0, 0], cols[1, 0]])
    # shares sum to one only up to rounding; fold the residue back in
    p /= p.sum() * w
    q /= q.sum() * w
    return DiscretizedObservables(y, w, p, q, float(pi[2] + pi[3]))


@dataclass
class _CellChain:
    x: np.ndarray
    mu: np.ndarray
    tau: float
    alloc: np.ndarray
    weights: np.ndarray


@dataclass
class SamplerState:
    """Markov-chain state of the per-cell Gibbs samplers."""

    config: DPMMConfig
    seed: int
    counts: np.ndarray
    loc: float
    scale: float
    y_range: tuple
    chains: list
    rng: np.random.Generator
    sweeps: int = 0
    emitted: int = 0
    diagnostics: dict = field(default_factory=dict)


def _stick_weights(v):
    v = v.copy()
    v[-1] = 1.0
    rest = np.concatenate([[1.0], np.cumprod(1.0 - v[:-1])])
    return v * rest


def _prior_cell(config, rng):
    L = config.n_components
    v = rng.beta(1.0, config.concentration, size=L)
    mu = rng.normal(config.base_mean, config.base_sd, size=L)
    tau = config.fixed_precision or rng.gamma(config.gamma_shape, 1.0 / config.gamma_rate)
    return _stick_weights(v) if L > 1 else np.ones(1), mu, float(tau)


def fit(data, config=None, seed=0):
    """Initialize the posterior sampler.

    Parameters
    ----------
    data : array-like of shape (n, 3)
        Rows ``(y, d, z)`` with binary ``d`` and ``z``.
    config : DPMMConfig, optional
    seed : int

    Returns
    -------
    SamplerState
    """
    config = config or DPMMConfig()
    X = check_late_data(data, allow_empty=True)
    rng = np.random.default_rng(seed)
    y, d, z = X[:, 0], X[:, 1].astype(int), X[:, 2].astype(int)
    if config.standardize and y.size > 1 and np.std(y) > 0:
        loc, scale = float(np.mean(y)), float(np.std(y))
    else:
        loc, scale = 0.0, 1.0
    y_range = (float(y.min()), float(y.max())) if y.size else (0.0, 0.0)
    counts = np.zeros(4)
    chains = []
    empty = []
    L = config.n_components
    for c, (dd, zz) in enumerate(CELLS):
        xc = (y[(d == dd) & (z == zz)] - loc) / scale
        counts[c] = xc.size
        if xc.size == 0:
            empty.append(c)
            chains.append(None)
            continue
        tau = config.fixed_precision or 1.0 / max(np.var(xc), 0.25)
        # spread starting means over data quantiles
        mu = np.quantile(xc, (np.arange(L) + 0.5) / L)
        alloc = np.minimum((stats.rankdata(xc, method="ordinal") - 1) * L // xc.size, L - 1)
        chains.append(_CellChain(xc, mu.astype(float), float(tau), alloc.astype(int), np.full(L, 1.0 / L)))
    diagnostics = {"empty_cells": [CELLS[c] for c in empty], "warnings": []}
    for c in empty:
        dd, zz = CELLS[c]
        diagnostics["warnings"].append(f"cell (d={dd}, z={zz}) has no observations; using the prior predictive")
    return SamplerState(config, int(seed), counts, loc, scale, y_range, chains, rng, diagnostics=diagnostics)


def _sweep(chain, config, rng):
    """One blocked-Gibbs sweep: weights, means, precision, then allocations."""
    L = config.n_components
    x = chain.x
    nk = np.bincount(chain.alloc, minlength=L).astype(float)
    if L > 1:
        tail = np.concatenate([np.cumsum(nk[::-1])[::-1][1:], [0.0]])
        v = rng.beta(1.0 + nk, config.concentration + tail)
        chain.weights = _stick_weights(v)
    else:
        chain.weights = np.ones(1)
    sums = np.bincount(chain.alloc, weights=x, minlength=L)
    prec0 = 1.0 / config.base_sd**2
    post_prec = prec0 + nk * chain.tau
    post_mean = (config.base_mean * prec0 + chain.tau * sums) / post_prec
    chain.mu = post_mean + rng.standard_normal(L) / np.sqrt(post_prec)
    if config.fixed_precision is None:
        resid = x - chain.mu[chain.alloc]
        shape = config.gamma_shape + 0.5 * x.size
        rate = config.gamma_rate + 0.5 * float(resid @ resid)
        chain.tau = float(rng.gamma(shape, 1.0 / rate))
    if L > 1:
        with np.errstate(divide="ignore"):
            logw = np.log(chain.weights)
        logp = logw[None, :] - 0.5 * chain.tau * (x[:, None] - chain.mu[None, :]) ** 2
        logp -= logp.max(axis=1, keepdims=True)
        prob = np.exp(logp)
        cum = np.cumsum(prob, axis=1)
        u = rng.random(x.size) * cum[:, -1]
        chain.alloc = np.minimum((cum < u[:, None]).sum(axis=1), L - 1)


def _emit(state):
    config = state.config
    rng = state.rng
    L = config.n_components
    weights = np.empty((4, L))
    means = np.empty((4, L))
    sds = np.empty(4)
    for c, chain in enumerate(state.chains):
        if chain is None:
            w, mu, tau = _prior_cell(config, rng)
        else:
            w, mu, tau = chain.weights, chain.mu, chain.tau
        weights[c] = w / w.sum()
        means[c] = state.loc + state.scale * mu
        sds[c] = state.scale / np.sqrt(tau)
    dz = rng.dirichlet(np.asarray(config.dz_pseudocounts) + state.counts)
    # Dirichlet draws can underflow to exact zeros for tiny parameters
    dz = np.maximum(dz, 1e-300)
    dz /= dz.sum()
    out = PosteriorDrawF(dz, weights, means, sds, state.emitted, state.seed, state.y_range)
    state.emitted += 1
    return out


def draw(state, count):
    """Advance the chain and return ``count`` thinned posterior draws.

    The first call runs the burn-in; later calls continue the same chain.
    """
    if count < 1:
        raise DomainError("count must be at least 1")
    config = state.config
    active = [ch for ch in state.chains if ch is not None]
    if state.sweeps == 0:
        for _ in range(config.burn_in):
            for ch in active:
                _sweep(ch, config, state.rng)
        state.sweeps = config.burn_in
    out = []
    for _ in range(count):
        for _ in range(config.thinning):
            for ch in active:
                _sweep(ch, config, state.rng)
        state.sweeps += config.thinning
        out.append(_emit(state))
    return out


class DPMixturePosterior(BaseEstimator):
    """Estimator wrapper around :func:`fit` and :func:`draw`.

    Parameters
    ----------
    base_mean, base_sd : float
        Normal centering measure of the component means.
    gamma_shape, gamma_rate : float
        Gamma prior (shape, rate) of the per-cell precision.
    concentration : float
        Dirichlet-process total mass.
    truncation_level : int
    burn_in, thinning : int
    dz_pseudocounts : tuple of 4 floats
    standardize : bool
    random_state : int

    Attributes
    ----------
    state_ : SamplerState
    diagnostics_ : dict
    """

    def __init__(
        self,
        base_mean=0.0,
        base_sd=1.0,
        gamma_shape=2.0,
        gamma_rate=4.0,
        concentration=1.0,
        truncation_level=50,
        burn_in=500,
        thinning=5,
        dz_pseudocounts=(0.25, 0.25, 0.25, 0.25),
        standardize=True,
        random_state=0,
    ):
        self.base_mean = base_mean
        self.base_sd = base_sd
        self.gamma_shape = gamma_shape
        self.gamma_rate = gamma_rate
        self.concentration = concentration
        self.truncation_level = truncation_level
        self.burn_in = burn_in
        self.thinning = thinning
        self.dz_pseudocounts = dz_pseudocounts
        self.standardize = standardize
        self.random_state = random_state

    def _config(self):
        params = self.get_params()
        params.pop("random_state")
        return DPMMConfig(**params)

    def fit(self, X, y=None):
        self.state_ = fit(X, self._config(), seed=self.random_state)
        self.diagnostics_ = self.state_.diagnostics
        return self

    def draw(self, count):
        if not hasattr(self, "state_"):
            raise DomainError("call fit before draw")
        return draw(self.state_, count)


def prior_predictive_density(config, y, n_mc=2000, seed=0):
    """Monte-Carlo prior predictive density of one cell in model units."""
    rng = np.random.default_rng(seed)
    y = np.asarray(y, dtype=float)
    acc = np.zeros_like(y)
    for _ in range(n_mc):
        w, mu, tau = _prior_cell(config, rng)
        acc += stats.norm.pdf(y[..., None], mu, 1 / np.sqrt(tau)) @ w
    return acc / n_mc


def normal_tail_mass(n_sd):
    """Two-sided normal mass beyond ``n_sd`` standard deviations."""
    return float(special.erfc(n_sd / np.sqrt(2.0)))
