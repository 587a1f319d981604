import json

import numpy as np
import pytest

from conftest import random_F, typed_F
from refutable.core import GAUSSIAN_DECAY, GIVE_UP, POINT_MASS_AT_MIN, UNIFORM, DeviationPrior, defier_support
from refutable.designs import BetaLATEDesign
from refutable.exceptions import DomainError, NumericalError
from refutable.late import LATEModel, conditional_bounds, wald_ratio
from refutable.pipeline import (
    DecreasingDensitySet,
    MixtureFamily,
    RobustLATE,
    RobustResult,
    aggregate_traces,
    frequentist_identified_set,
    parse_prior,
    run,
    run_prior_set,
)
from refutable.posterior import DPMixturePosterior


@pytest.fixture
def draws(rng):
    return [random_F(rng, K=6, width=0.5) for _ in range(30)]


class FlakyModel(LATEModel):
    """Fails on every ``period``-th call."""

    def __init__(self, period):
        super().__init__()
        self.period, self.calls = period, 0

    def conditional_bounds(self, F, m):
        self.calls += 1
        if self.calls % self.period == 0:
            raise DomainError("synthetic failure")
        return super().conditional_bounds(F, m)


class TestRun:
    def test_single_point_identified_draw(self, rng):
        F = typed_F(rng, K=5)
        res = run([F], POINT_MASS_AT_MIN)
        assert res.theta_lower_star == pytest.approx(res.theta_upper_star, abs=1e-12)
        assert res.ci_lower == pytest.approx(res.theta_lower_star, abs=1e-12)
        assert res.ci_upper == pytest.approx(res.theta_upper_star, abs=1e-12)
        assert res.theta_lower_star == pytest.approx(wald_ratio(F), abs=1e-8)

    def test_point_mass_uses_m_min(self, draws):
        res = run(draws, POINT_MASS_AT_MIN)
        for i, m in zip(res.traces["draw"], res.traces["m"]):
            assert m == defier_support(draws[i]).m_min

    def test_traces_and_means(self, draws):
        res = run(draws, UNIFORM, seed=3)
        assert res.traces["lower"].size == len(draws) - len(res.diagnostics["skipped"])
        assert res.theta_lower_star == pytest.approx(res.traces["lower"].mean())
        sup = [defier_support(draws[i]) for i in res.traces["draw"]]
        assert all(s.m_min <= m <= s.m_max for s, m in zip(sup, res.traces["m"]))

    def test_ci_is_type1_quantile(self):
        lo = np.arange(20.0)
        hi = lo + 100
        agg = aggregate_traces(lo, hi, 0.1)
        assert agg["ci_lower"] == 0.0  # ceil(0.05 * 20) = 1st order statistic
        assert agg["ci_upper"] == 118.0  # ceil(0.95 * 20) = 19th order statistic

    def test_trimming(self):
        agg = aggregate_traces([0.0, 1e6], [1.0, 2.0], 0.05, trim=10.0)
        assert agg["trimmed"] == 1 and agg["theta_lower_star"] == 5.0

    def test_deterministic_and_parallel_invariant(self, draws):
        a = run(draws, GAUSSIAN_DECAY, seed=7)
        b = run(draws, GAUSSIAN_DECAY, seed=7)
        c = run(draws, GAUSSIAN_DECAY, seed=7, n_jobs=2)
        assert a == b == c
        assert run(draws, GAUSSIAN_DECAY, seed=8) != a

    def test_skip_policy(self, draws):
        res = run(draws, UNIFORM, model=FlakyModel(15))
        assert len(res.diagnostics["skipped"]) == 2
        assert res.diagnostics["skipped"][0]["reason"] == "DomainError"
        with pytest.raises(NumericalError, match="draws failed"):
            run(draws, UNIFORM, model=FlakyModel(3))

    def test_ordering_reported(self, draws):
        res = run(draws, UNIFORM)
        assert isinstance(res.diagnostics["ordering_violations"], list)

    def test_argument_checks(self, draws):
        with pytest.raises(DomainError):
            run([], POINT_MASS_AT_MIN)
        with pytest.raises(DomainError):
            run(draws, POINT_MASS_AT_MIN, alpha=1.5)
        with pytest.raises(DomainError):
            run(draws, "uniform")

    def test_zero_defier_dgp_recovers_late(self):
        design = BetaLATEDesign.with_defiers(0.0)
        X = design.sample(4000, np.random.default_rng(0))
        post = DPMixturePosterior(burn_in=200, thinning=2, truncation_level=20)
        est = RobustLATE(prior="point_mass_at_min", n_draws=200, posterior=post, random_state=0).fit(X)
        lo, hi = est.predict()
        spread = np.std(est.result_.traces["upper"])
        assert abs(0.5 * (lo + hi) - design.late) < 3 * spread
        assert hi - lo < spread


class TestPriorSets:
    def test_single_member_set(self, draws):
        a = run(draws, UNIFORM, seed=2)
        b = run_prior_set(draws, [UNIFORM], seed=2)
        assert (a.theta_lower_star, a.theta_upper_star, a.ci_lower, a.ci_upper) == (
            b.theta_lower_star, b.theta_upper_star, b.ci_lower, b.ci_upper)

    def test_union(self, draws):
        a = run(draws, UNIFORM, seed=2)
        b = run(draws, POINT_MASS_AT_MIN, seed=2)
        u = run_prior_set(draws, [UNIFORM, POINT_MASS_AT_MIN], seed=2)
        assert u.theta_lower_star == min(a.theta_lower_star, b.theta_lower_star)
        assert u.theta_upper_star == max(a.theta_upper_star, b.theta_upper_star)
        assert u.ci_lower == min(a.ci_lower, b.ci_lower) and u.ci_upper == max(a.ci_upper, b.ci_upper)

    def test_give_up_one_draw(self, rng):
        F = typed_F(rng, K=6)
        res = run(draws=[F], prior=GIVE_UP)
        lo, hi = frequentist_identified_set(F)
        assert (res.theta_lower_star, res.theta_upper_star) == (lo, hi)
        # the sweep contains the point-identified value at m = 0
        assert lo <= conditional_bounds(F, 0.0).lower <= hi

    @pytest.mark.parametrize("weight,pure", [(1.0, UNIFORM), (0.0, POINT_MASS_AT_MIN)])
    def test_mixture_endpoints(self, draws, weight, pure):
        fam = run_prior_set(draws, MixtureFamily(UNIFORM, POINT_MASS_AT_MIN, (weight,)), seed=4)
        ref = run(draws, pure, seed=4)
        assert (fam.theta_lower_star, fam.theta_upper_star) == (ref.theta_lower_star, ref.theta_upper_star)

    def test_decreasing_density_set_contains_uniform(self, draws):
        res = run_prior_set(draws, DecreasingDensitySet(n_steps=4), seed=1)
        ref = run(draws, UNIFORM, seed=1)
        assert res.theta_lower_star <= ref.theta_lower_star and res.theta_upper_star >= ref.theta_upper_star

    def test_parse_prior(self):
        assert parse_prior("Gaussian-Decay") == GAUSSIAN_DECAY
        assert parse_prior("giveup") == GIVE_UP
        assert isinstance(parse_prior("decreasing"), DecreasingDensitySet)
        with pytest.raises(DomainError):
            parse_prior("flat")


class TestResult:
    def test_json_round_trip(self, draws):
        for prior in (UNIFORM, GIVE_UP):
            res = run(draws[:5], prior)
            back = RobustResult.from_dict(json.loads(json.dumps(res.to_dict())))
            assert back == res

    def test_schema_check(self, draws):
        doc = run(draws[:2], UNIFORM).to_dict()
        doc["schema"] = "other/0"
        with pytest.raises(DomainError, match="schema"):
            RobustResult.from_dict(doc)


def test_estimator_params(rng):
    est = RobustLATE(n_draws=5, prior=DeviationPrior("uniform"))
    assert est.get_params()["n_draws"] == 5
    with pytest.raises(DomainError):
        est.predict()
    with pytest.raises(DomainError):
        RobustLATE(n_draws=0).fit(np.column_stack([rng.normal(size=20), rng.integers(0, 2, (20, 2))]))
