import math

import numpy as np
import pytest

from layercast.continuous_alloc import min_expected_distortion_continuous
from layercast.convex_cost import expected_and_variance
from layercast.discrete_alloc import Allocation, minimize_expected_distortion, realized_distortions
from layercast.errors import ValidationError
from layercast.fading import DiscreteFading, Erlang, Rayleigh, discretize_rayleigh
from layercast.montecarlo import CHUNK, simulate

R24 = discretize_rayleigh(1.0, 2.0, 24)


@pytest.fixture(scope="module")
def optimum():
    return minimize_expected_distortion(R24, 1.0, 1.0)


class TestDiscrete:
    def test_mean_within_three_standard_errors(self, optimum):
        est = simulate(R24, optimum.allocation, 1.0, 400_000, seed=11)
        assert abs(est.mean - optimum.expected_distortion) <= 3 * est.std_error

    def test_variance_estimate(self, optimum):
        _, var = expected_and_variance(optimum.realized_distortions[1:], R24)
        est = simulate(R24, optimum.allocation, 1.0, 400_000, seed=12)
        assert est.var_estimate == pytest.approx(var, rel=0.02)
        assert est.std_error == pytest.approx(math.sqrt(est.var_estimate / est.samples), rel=1e-15)

    def test_same_seed_is_bit_identical(self, optimum):
        a = simulate(R24, optimum.allocation, 1.0, 3 * CHUNK + 17, seed=5)
        b = simulate(R24, optimum.allocation, 1.0, 3 * CHUNK + 17, seed=5)
        assert a == b

    def test_thread_count_does_not_matter(self, optimum):
        a = simulate(R24, optimum.allocation, 1.0, 5 * CHUNK, seed=5, threads=1)
        b = simulate(R24, optimum.allocation, 1.0, 5 * CHUNK, seed=5, threads=4)
        assert a == b

    def test_seed_changes_draws(self, optimum):
        a = simulate(R24, optimum.allocation, 1.0, 10_000, seed=1)
        b = simulate(R24, optimum.allocation, 1.0, 10_000, seed=2)
        assert a.mean != b.mean

    def test_partial_chunk_counted(self, optimum):
        assert simulate(R24, optimum.allocation, 1.0, CHUNK + 3, seed=0).samples == CHUNK + 3

    def test_single_state_has_no_spread(self):
        f = DiscreteFading.from_states([2.0], [1.0])
        est = simulate(f, Allocation.from_per_layer([1.5]), 1.0, 2 * CHUNK + 5, seed=3)
        assert est.mean == 0.25
        assert est.std_error == 0.0 and est.var_estimate == 0.0

    def test_layer_count_must_match(self):
        with pytest.raises(ValidationError):
            simulate(R24, Allocation.from_per_layer([1.0]), 1.0, 10, seed=0)


class TestOverContinuous:
    def test_layered_allocation_over_rayleigh(self, optimum):
        # gains between consecutive design levels decode the lower level only
        d = realized_distortions(R24, optimum.allocation, 1.0)
        edges = np.concatenate(([0.0], R24.gammas, [np.inf]))
        mass = np.diff(-np.exp(-edges))
        analytic = float(mass @ d)
        est = simulate(Rayleigh(1.0), optimum.allocation, 1.0, 400_000, seed=21, layers=R24)
        assert abs(est.mean - analytic) <= 3 * est.std_error

    def test_layered_needs_layer_gains(self, optimum):
        with pytest.raises(ValidationError):
            simulate(Rayleigh(1.0), optimum.allocation, 1.0, 10, seed=0)

    @pytest.mark.parametrize("L,b,P", [(1, 1.0, 1.0), (3, 2.0, 10.0)])
    def test_continuous_solution(self, L, b, P):
        f = Erlang(L, 1.0)
        sol = min_expected_distortion_continuous(f, b, P)
        est = simulate(f, sol, b, 200_000, seed=31)
        assert abs(est.mean - sol.min_expected_distortion) <= 3 * est.std_error

    def test_continuous_solution_needs_continuous_law(self):
        sol = min_expected_distortion_continuous(Rayleigh(1.0), 1.0, 1.0)
        with pytest.raises(ValidationError):
            simulate(R24, sol, 1.0, 10, seed=0)


class TestValidation:
    @pytest.mark.parametrize("kw", [dict(samples=0), dict(b=0.0)])
    def test_bad_arguments(self, optimum, kw):
        args = dict(fading=R24, alloc=optimum.allocation, b=1.0, samples=10, seed=0)
        args.update(kw)
        with pytest.raises(ValidationError):
            simulate(**args)
