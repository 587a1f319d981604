import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_F, typed_F
from refutable.core import DiscretizedObservables, complier_mass_bounds, defier_support
from refutable.exceptions import DomainError
from refutable.late import (
    LATEModel,
    _arm_parts,
    allocate,
    conditional_bounds,
    feasible_segment,
    minimal_deviation_late,
    solve_bounds,
    wald_ratio,
)
from refutable.oracles import _segment_objective, lp_allocate, lp_moment, segment_grid_bounds

seeds = st.integers(0, 2**32 - 1)
ARMS = ("treated", "untreated")
DIRS = ("max", "min")


@pytest.fixture
def k4_F():
    p1 = np.array([0.1, 0.2, 0.3, 0.4])
    q1 = np.array([0.2, 0.2, 0.2, 0.4])
    p = np.column_stack([np.full(4, 0.25), p1])
    q = np.column_stack([np.full(4, 0.25), q1])
    return DiscretizedObservables.from_bin_masses(np.arange(4.0), p, q, 0.5, normalize=True)


class TestAllocate:
    @pytest.mark.parametrize("arm", ARMS)
    @pytest.mark.parametrize("direction", DIRS)
    def test_floor_mass_gives_floor(self, k4_F, arm, direction):
        floor, _ = _arm_parts(k4_F, arm)
        res = allocate(k4_F, arm, direction, k4_F.mass(floor))
        np.testing.assert_allclose(res.h, floor, atol=1e-15)
        assert res.mean_component == pytest.approx(k4_F.first_moment(floor), abs=1e-15)
        assert res.threshold in (k4_F.y_grid[0] - 0.5, k4_F.y_grid[-1] + 0.5)

    @pytest.mark.parametrize("direction", DIRS)
    def test_full_mass_gives_arm_density(self, k4_F, direction):
        a_hi = complier_mass_bounds(k4_F)[1]
        np.testing.assert_allclose(allocate(k4_F, "treated", direction, a_hi).h, k4_F.p[:, 1], atol=1e-15)
        b_hi = complier_mass_bounds(k4_F)[3]
        np.testing.assert_allclose(allocate(k4_F, "untreated", direction, b_hi).h, k4_F.q[:, 0], atol=1e-15)

    @pytest.mark.parametrize("arm", ARMS)
    @pytest.mark.parametrize("direction", DIRS)
    def test_k4_matches_lp(self, k4_F, arm, direction):
        floor, room = _arm_parts(k4_F, arm)
        mass = k4_F.mass(floor) + 0.37 * k4_F.mass(room)
        res = allocate(k4_F, arm, direction, mass)
        h_lp = lp_allocate(k4_F, arm, direction, mass)
        assert res.mean_component == pytest.approx(k4_F.first_moment(h_lp), abs=1e-12)
        assert res.mass == pytest.approx(mass, abs=1e-15)

    def test_direction_of_fill(self, k4_F):
        floor, room = _arm_parts(k4_F, "treated")
        mass = k4_F.mass(floor) + 0.5 * k4_F.mass(room)
        hi = allocate(k4_F, "treated", "max", mass).mean_component
        lo = allocate(k4_F, "treated", "min", mass).mean_component
        assert hi > lo
        # untreated arm flips: "max" is the LATE upper bound, so low outcomes
        u_max = allocate(k4_F, "untreated", "max", 0.3).mean_component
        u_min = allocate(k4_F, "untreated", "min", 0.3).mean_component
        assert u_max < u_min

    def test_out_of_range(self, k4_F):
        with pytest.raises(DomainError, match="outside admissible range"):
            allocate(k4_F, "treated", "max", 2.0)
        with pytest.raises(DomainError):
            allocate(k4_F, "sideways", "max", 0.1)

    @settings(max_examples=150)
    @given(seeds, st.floats(0, 1), st.sampled_from(ARMS), st.sampled_from(DIRS))
    def test_greedy_equals_lp(self, seed, s, arm, direction):
        F = random_F(np.random.default_rng(seed))
        floor, room = _arm_parts(F, arm)
        mass = F.mass(floor) + s * F.mass(room)
        res = allocate(F, arm, direction, mass)
        floor_h, top = _arm_parts(F, arm)[0], floor + room
        assert np.all(res.h >= floor_h - 1e-15) and np.all(res.h <= top + 1e-15)
        assert res.mean_component == pytest.approx(lp_moment(F, arm, direction, mass)[0], abs=1e-8)


class TestConditionalBounds:
    @settings(max_examples=50)
    @given(seeds)
    def test_zero_deviation_is_wald(self, seed):
        F = typed_F(np.random.default_rng(seed))
        bp = conditional_bounds(F, 0.0)
        w = wald_ratio(F)
        assert bp.lower == pytest.approx(w, abs=1e-8) and bp.upper == pytest.approx(w, abs=1e-8)

    @settings(max_examples=50)
    @given(seeds)
    def test_minimal_deviation_point(self, seed):
        F = random_F(np.random.default_rng(seed))
        sup = defier_support(F)
        try:
            target = minimal_deviation_late(F)
        except DomainError:
            return
        bp = conditional_bounds(F, sup.m_min)
        assert bp.lower == pytest.approx(target, abs=1e-8)
        assert bp.upper == pytest.approx(target, abs=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.floats(0.05, 0.95))
    def test_interior_matches_grid_oracle(self, seed, s):
        F = random_F(np.random.default_rng(seed), K=5)
        sup = defier_support(F)
        m = sup.m_min + s * sup.width
        try:
            bp = conditional_bounds(F, m)
        except DomainError:
            return
        lo, up = segment_grid_bounds(F, m)
        assert bp.lower == pytest.approx(lo, abs=1e-4)
        assert bp.upper == pytest.approx(up, abs=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.floats(0.05, 0.95))
    def test_first_order_optimality(self, seed, s):
        F = random_F(np.random.default_rng(seed))
        sup = defier_support(F)
        m = sup.m_min + s * sup.width
        try:
            sol = solve_bounds(F, m)
        except DomainError:
            return
        seg = sol.segment
        eps = 1e-6 * max(seg.a_hi - seg.a_lo, 1e-12)
        f_up = _segment_objective(F, seg, "max")
        f_lo = _segment_objective(F, seg, "min")
        for a, f, sign, val in ((sol.a_upper, f_up, 1, sol.bounds.upper), (sol.a_lower, f_lo, -1, sol.bounds.lower)):
            for step in (-eps, eps):
                x = np.clip(a + step, seg.a_lo, seg.a_hi)
                if seg.b(x) <= 0 or x <= 0:
                    continue
                assert sign * f(x)[0] <= sign * val + 1e-7

    @settings(max_examples=30, deadline=None)
    @given(seeds)
    def test_nonempty_and_dominated_by_sweep(self, seed):
        F = random_F(np.random.default_rng(seed))
        sup = defier_support(F)
        ups = []
        for m in np.linspace(sup.m_min, sup.m_max, 25):
            try:
                bp = conditional_bounds(F, float(m))
            except DomainError:
                continue
            assert bp.lower <= bp.upper + 1e-9
            ups.append(bp.upper)
        if ups:
            assert ups[12 if len(ups) > 12 else 0] <= max(ups)

    @settings(max_examples=30)
    @given(seeds, st.floats(0.1, 5), st.floats(-3, 3), st.floats(0.1, 0.9))
    def test_location_scale_equivariance(self, seed, scale, shift, s):
        F = random_F(np.random.default_rng(seed))
        sup = defier_support(F)
        m = sup.m_min + s * sup.width
        try:
            bp = conditional_bounds(F, m)
        except DomainError:
            return
        G = F.with_outcomes(scale, shift)
        bq = conditional_bounds(G, m)
        # the LATE is a difference of means: shifts cancel, scales multiply
        assert bq.lower == pytest.approx(scale * bp.lower, abs=1e-9 * max(1, scale))
        assert bq.upper == pytest.approx(scale * bp.upper, abs=1e-9 * max(1, scale))

    def test_outside_support(self, two_bin_F):
        sup = defier_support(two_bin_F)
        with pytest.raises(DomainError, match="outside defier support"):
            conditional_bounds(two_bin_F, sup.m_min - 0.01)
        with pytest.raises(DomainError):
            conditional_bounds(two_bin_F, sup.m_max + 0.01)

    def test_degenerate_segment(self):
        p = np.array([[0.1, 0.3], [0.2, 0.1], [0.1, 0.2]])
        q = np.array([[0.2, 0.1], [0.1, 0.2], [0.3, 0.1]])
        F = DiscretizedObservables.from_bin_masses(np.arange(3.0), p, q, 0.4)
        m_min = defier_support(F).m_min
        assert m_min > 0
        assert feasible_segment(F, m_min).degenerate
        bp = conditional_bounds(F, m_min)
        assert bp.width == pytest.approx(0, abs=1e-12)
        assert bp.upper == pytest.approx(minimal_deviation_late(F), abs=1e-12)

    def test_zero_floor_leaves_arm_mean_open(self, two_bin_F):
        # no untreated floor: at m_min the untreated complier mean is free
        bp = conditional_bounds(two_bin_F, defier_support(two_bin_F).m_min)
        assert bp.width == pytest.approx(1.0, abs=1e-9)

    def test_model_handle(self, rng):
        F = random_F(rng)
        model = LATEModel("structural")
        sup = model.defier_support(F)
        bp = model.conditional_bounds(F, 0.5 * (sup.m_min + sup.m_max))
        assert bp.lower <= bp.upper
        with pytest.raises(DomainError):
            LATEModel("nope")


class TestWald:
    def test_no_effect(self, rng):
        # same outcome density for treated and untreated, any first stage
        f = rng.dirichlet(np.ones(6))
        p = np.column_stack([0.3 * f, 0.7 * f])
        q = np.column_stack([0.6 * f, 0.4 * f])
        F = DiscretizedObservables.from_bin_masses(np.arange(6.0), p, q, 0.5)
        assert wald_ratio(F) == pytest.approx(0.0, abs=1e-14)

    def test_zero_first_stage(self):
        f = np.full(3, 1 / 3)
        p = np.column_stack([0.5 * f, 0.5 * f])
        F = DiscretizedObservables.from_bin_masses(np.arange(3.0), p, p, 0.5)
        with pytest.raises(DomainError, match="first stage"):
            wald_ratio(F)
