import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layercast.convex_cost import (
    CostSpec,
    cost_gradient,
    distortion_to_allocation,
    evaluate_cost,
    expected_and_variance,
    minimize_cost,
    power_required,
    power_required_gradient,
)
from layercast.discrete_alloc import Allocation, minimize_expected_distortion, realized_distortions
from layercast.errors import InfeasibleError, ValidationError
from layercast.fading import DiscreteFading, discretize_rayleigh

R24 = discretize_rayleigh(1.0, 2.0, 24)
SMALL = DiscreteFading.from_states([0.5, 1.0, 3.0], [0.3, 0.3, 0.3])


def _random_alloc(rng, M, P):
    T = np.concatenate(([P], np.sort(rng.uniform(0, P, M - 1))[::-1]))
    return Allocation.from_cumulative(T)


class TestPowerMap:
    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), P=st.floats(0.01, 100.0), b=st.floats(0.2, 4.0))
    def test_inverts_realized_distortions(self, seed, P, b):
        alloc = _random_alloc(np.random.default_rng(seed), R24.num_states, P)
        d = realized_distortions(R24, alloc, b)[1:]
        assert power_required(d, R24, b) == pytest.approx(P, rel=1e-10)
        back = distortion_to_allocation(d, R24, b)
        np.testing.assert_allclose(back.cumulative, alloc.cumulative, rtol=1e-8, atol=1e-10 * P)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        d = realized_distortions(R24, _random_alloc(rng, 24, 5.0), 1.5)[1:]
        g = power_required_gradient(d, R24, 1.5)
        for k in rng.choice(24, 6, replace=False):
            h = 1e-7 * d[k]
            up, dn = d.copy(), d.copy()
            up[k] += h
            dn[k] -= h
            fd = (power_required(up, R24, 1.5) - power_required(dn, R24, 1.5)) / (2 * h)
            assert g[k] == pytest.approx(fd, rel=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), b=st.floats(0.2, 4.0), t=st.floats(0.0, 1.0))
    def test_convex_on_feasible_region(self, seed, b, t):
        rng = np.random.default_rng(seed)
        da = realized_distortions(R24, _random_alloc(rng, 24, 10.0), b)[1:]
        db = realized_distortions(R24, _random_alloc(rng, 24, 10.0), b)[1:]
        mid = t * da + (1 - t) * db
        lhs = power_required(mid, R24, b)
        rhs = t * power_required(da, R24, b) + (1 - t) * power_required(db, R24, b)
        assert lhs <= rhs * (1 + 1e-12)

    def test_over_budget_vector_rejected(self):
        d = realized_distortions(R24, Allocation.from_per_layer(np.full(24, 1.0)), 1.0)[1:]
        with pytest.raises(InfeasibleError) as info:
            distortion_to_allocation(d, R24, 1.0, total_power=10.0)
        assert info.value.constraint == "power"
        assert info.value.violation == pytest.approx(14.0, rel=1e-8)

    def test_rejects_nonpositive_distortion(self):
        with pytest.raises(ValidationError):
            power_required(np.zeros(3), SMALL, 1.0)


class TestCost:
    def test_expected_and_variance(self):
        d = np.array([0.5, 0.25, 0.125])
        mean, var = expected_and_variance(d, SMALL)
        full = np.array([1.0, 0.5, 0.25, 0.125])
        p = np.array([0.1, 0.3, 0.3, 0.3])
        assert mean == pytest.approx(p @ full, rel=1e-15)
        assert var == pytest.approx(p @ (full - p @ full) ** 2, rel=1e-14)

    def test_risk_gradient_matches_finite_differences(self):
        spec = CostSpec.risk_sensitive(3.0)
        d = np.array([0.6, 0.3, 0.2])
        g = cost_gradient(d, SMALL, spec)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1e-6
            fd = (evaluate_cost(d + e, SMALL, spec)[0] - evaluate_cost(d - e, SMALL, spec)[0]) / 2e-6
            assert g[k] == pytest.approx(fd, rel=1e-7)

    @pytest.mark.parametrize(
        "kw", [dict(kind="minimax"), dict(phi=-1.0), dict(kind="custom"), dict(caps={1: 0.0}), dict(max_expected=0.0)]
    )
    def test_bad_spec(self, kw):
        with pytest.raises(ValidationError):
            CostSpec(**kw)


class TestSolver:
    @pytest.mark.parametrize("snr_db,b", [(0.0, 1.0), (10.0, 0.5), (5.0, 2.0)])
    def test_linear_cost_matches_recursion(self, snr_db, b):
        P = 10 ** (snr_db / 10)
        ref = minimize_expected_distortion(R24, P, b)
        res = minimize_cost(R24, P, b)
        assert res.expected == pytest.approx(ref.expected_distortion, rel=1e-7)
        assert res.kkt_residual <= 1e-6
        assert res.power_used <= P * (1 + 1e-9)
        np.testing.assert_allclose(res.allocation.cumulative, ref.allocation.cumulative, atol=1e-4 * P)

    def test_small_problem_kkt(self):
        res = minimize_cost(SMALL, 2.0, 1.0)
        assert res.kkt_residual <= 1e-6
        assert res.newton_steps > 0

    def test_risk_aversion_trades_mean_for_variance(self):
        out = [minimize_cost(R24, 1.0, 0.5, CostSpec.risk_sensitive(phi)) for phi in (0.0, 1.0, 5.0, 10.0)]
        means = [r.expected for r in out]
        variances = [r.variance for r in out]
        assert all(np.diff(means) >= -1e-9)
        assert all(np.diff(variances) <= 1e-9)
        assert all(r.kkt_residual <= 1e-6 for r in out)

    def test_cap_is_enforced(self):
        free = minimize_cost(R24, 1.0, 1.0)
        # halfway between the free optimum and the all-power-on-layer-1 floor
        floor = (1 + R24.gammas[0] * 1.0) ** -1.0
        cap = 0.5 * (floor + free.distortions[0])
        res = minimize_cost(R24, 1.0, 1.0, CostSpec(caps={1: cap}))
        assert res.distortions[0] <= cap * (1 + 1e-8)
        assert res.expected >= free.expected

    def test_unit_cap_changes_nothing(self):
        a = minimize_cost(R24, 1.0, 1.0)
        c = minimize_cost(R24, 1.0, 1.0, CostSpec(caps={1: 1.0}))
        np.testing.assert_array_equal(a.distortions, c.distortions)

    def test_variance_ceiling(self):
        free = minimize_cost(R24, 1.0, 1.0)
        vmax = 0.5 * free.variance
        res = minimize_cost(R24, 1.0, 1.0, CostSpec(max_variance=vmax))
        assert res.variance <= vmax * (1 + 1e-8)

    def test_unreachable_mean_is_infeasible(self):
        best = minimize_expected_distortion(R24, 1.0, 1.0).expected_distortion
        with pytest.raises(InfeasibleError) as info:
            minimize_cost(R24, 1.0, 1.0, CostSpec(max_expected=0.95 * best))
        assert info.value.constraint in ("max_expected", "power")
        assert info.value.violation > 0

    def test_unreachable_cap_is_infeasible(self):
        with pytest.raises(InfeasibleError) as info:
            minimize_cost(SMALL, 1.0, 1.0, CostSpec(caps={1: 0.01}))
        assert info.value.violation > 0

    def test_cap_index_out_of_range(self):
        with pytest.raises(ValidationError):
            minimize_cost(SMALL, 1.0, 1.0, CostSpec(caps={4: 0.5}))

    def test_custom_cost(self):
        p = SMALL.probs

        def second_moment(d):
            return float(p @ d**2), 2 * p * d

        res = minimize_cost(SMALL, 2.0, 1.0, CostSpec(kind="custom", custom=second_moment))
        assert res.kkt_residual <= 1e-6
        rng = np.random.default_rng(0)
        for _ in range(20):
            d = realized_distortions(SMALL, _random_alloc(rng, 3, 2.0), 1.0)[1:]
            assert res.cost <= second_moment(d)[0] * (1 + 1e-9)

    def test_nonconvex_custom_cost_warns(self):
        p = SMALL.probs

        def concave(d):
            return float(-(p @ d**2)), -2 * p * d

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                minimize_cost(SMALL, 2.0, 1.0, CostSpec(kind="custom", custom=concave))
            except Exception:
                pass
        assert any("convexity" in str(w.message) for w in caught)

    @pytest.mark.parametrize("P,b", [(0.0, 1.0), (1.0, 0.0)])
    def test_rejects_bad_inputs(self, P, b):
        with pytest.raises(ValidationError):
            minimize_cost(SMALL, P, b)
