import math

import numpy as np
import pytest

from errors import DegenerateInputError, InsufficientDataError, ParameterDomainError
from stable_sampler import StableParams, sample, sample_log_abs
from tail_estimator import (Grouping, calibrate, choose_grouping, estimate_alpha,
                            estimate_alpha_from_logs, hill_estimate)
from workers import cell_seed


class TestChooseGrouping:
    def test_perfect_square(self):
        g = choose_grouping(10_000)
        assert (g.K, g.K1, g.K2, g.dropped) == (10_000, 100, 100, 0)

    def test_tie_region_prefers_closer_divisor(self):
        g = choose_grouping(100_000)
        assert (g.K1, g.K2, g.dropped) == (250, 400, 0)

    def test_prime_drops_one_sample(self):
        g = choose_grouping(9973)
        assert g.K == 9972
        assert g.dropped == 1
        divisors = [d for d in range(2, 9972) if 9972 % d == 0]
        best = min(divisors, key=lambda d: (abs(d - math.sqrt(9972)), d))
        assert g.K1 == best
        assert g.K1 * g.K2 == 9972

    def test_small_k(self):
        # sqrt(6) ~ 2.449: divisors 2 and 3 are 0.449 and 0.551 away
        assert choose_grouping(6).K1 == 2

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            choose_grouping(3)

    def test_grouping_invariants(self):
        with pytest.raises(ParameterDomainError):
            Grouping(K=10, K1=3, K2=3)
        with pytest.raises(ParameterDomainError):
            Grouping(K=10, K1=1, K2=10)


class TestEstimateAlpha:
    @pytest.mark.parametrize('K1', [2, 10, 100])
    @pytest.mark.parametrize('c', [1e-3, 1.0, 7.5])
    def test_constant_input_gives_one(self, K1, c):
        grouping = Grouping(K=K1 * 20, K1=K1, K2=20)
        estimate = estimate_alpha(np.full(grouping.K, c), grouping)
        assert abs(estimate.alpha_hat - 1.0) <= 1e-12

    def test_scale_invariance(self):
        rng = np.random.default_rng(42)
        grouping = Grouping(K=1000, K1=25, K2=40)
        for _ in range(20):
            x = rng.standard_cauchy(1000)
            reference = estimate_alpha(x, grouping).alpha_hat
            for c in (1e-6, 1.0, 1e6):
                assert estimate_alpha(c * x, grouping).alpha_hat == pytest.approx(reference, rel=1e-9)

    def test_cauchy_oracle(self):
        rng = np.random.default_rng(1)
        x = np.tan(np.pi * (rng.random(100_000) - 0.5))
        estimate = estimate_alpha(x, Grouping(K=100_000, K1=100, K2=1000))
        assert 0.95 <= estimate.alpha_hat <= 1.05

    def test_gaussian_oracle(self):
        rng = np.random.default_rng(2)
        grouping = Grouping(K=100_000, K1=100, K2=1000)
        estimates = [estimate_alpha(rng.standard_normal(grouping.K), grouping).alpha_hat
                     for _ in range(5)]
        assert 1.95 <= np.mean(estimates) <= 2.05

    def test_permutation_within_block(self):
        rng = np.random.default_rng(3)
        x = rng.standard_cauchy(400)
        grouping = Grouping(K=400, K1=20, K2=20)
        shuffled = x.copy()
        shuffled[:20] = rng.permutation(shuffled[:20])
        assert estimate_alpha(shuffled, grouping).alpha_hat == pytest.approx(
            estimate_alpha(x, grouping).alpha_hat, rel=1e-12)

    def test_extra_samples_are_reported(self):
        x = np.random.default_rng(4).standard_cauchy(1005)
        estimate = estimate_alpha(x, Grouping(K=1000, K1=20, K2=50))
        assert estimate.dropped == 5

    def test_zero_is_degenerate(self):
        x = np.ones(100)
        x[17] = 0.0
        with pytest.raises(DegenerateInputError):
            estimate_alpha(x, Grouping(K=100, K1=10, K2=10))

    def test_cancelling_block_is_degenerate(self):
        x = np.tile([1.0, -1.0], 50)
        with pytest.raises(DegenerateInputError):
            estimate_alpha(x, Grouping(K=100, K1=10, K2=10))

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            estimate_alpha(np.ones(50), Grouping(K=100, K1=10, K2=10))

    def test_out_of_range_is_flagged_not_clamped(self):
        # near-cancelling blocks make the block sums smaller than the summands
        x = np.tile([1.0, -0.999], 200)
        estimate = estimate_alpha(x, Grouping(K=400, K1=20, K2=20))
        assert estimate.alpha_hat < 0.0
        assert not estimate.in_range

    def test_spread_shrinks_with_more_blocks(self):
        params = StableParams(1.5)
        spreads = []
        for K2 in (10, 100, 1000):
            grouping = Grouping(K=100 * K2, K1=100, K2=K2)
            estimates = [estimate_alpha(sample(params, grouping.K, seed).values, grouping).alpha_hat
                         for seed in range(50)]
            spreads.append(np.std(estimates))
        assert spreads[0] > spreads[1] > spreads[2]


class TestLogDomainEstimate:
    def test_agrees_with_direct_estimate(self):
        params = StableParams(1.2)
        grouping = Grouping(K=10_000, K1=100, K2=100)
        direct = estimate_alpha(sample(params, grouping.K, 5).values, grouping)
        sign, logabs = sample_log_abs(params, grouping.K, 5)
        via_logs = estimate_alpha_from_logs(sign, logabs, grouping)
        assert via_logs.alpha_hat == pytest.approx(direct.alpha_hat, rel=1e-9)

    def test_tiny_alpha(self):
        grouping = Grouping(K=10_000, K1=100, K2=100)
        sign, logabs = sample_log_abs(StableParams(0.05), grouping.K, 1)
        estimate = estimate_alpha_from_logs(sign, logabs, grouping)
        assert abs(estimate.alpha_hat - 0.05) < 0.02


class TestHill:
    def test_pareto_oracle(self):
        u = (np.arange(10_000) + 0.5) / 10_000
        assert abs(hill_estimate(1.0 / u, k=1000) - 1.0) < 0.1

    def test_default_k(self):
        u = (np.arange(10_000) + 0.5) / 10_000
        assert hill_estimate(1.0 / u) == hill_estimate(1.0 / u, k=1000)

    def test_constant_magnitudes_are_degenerate(self):
        with pytest.raises(DegenerateInputError):
            hill_estimate(np.full(100, 3.0), k=10)

    @pytest.mark.parametrize('k', [1, 100, 500])
    def test_k_out_of_range(self, k):
        with pytest.raises(ParameterDomainError):
            hill_estimate(np.arange(1.0, 101.0), k=k)

    def test_comparison_with_block_sum(self):
        x = sample(StableParams(1.5), 100_000, seed=6).values
        block = estimate_alpha(x, choose_grouping(len(x))).alpha_hat
        hill = hill_estimate(x)
        assert np.isfinite(hill) and np.isfinite(block)


class TestCalibrate:
    def test_small_grid(self):
        table = calibrate([0.5, 1.0, 1.5, 2.0], K1=100, K2=1000, reps=5, seed=1)
        assert [row.alpha for row in table.rows] == [0.5, 1.0, 1.5, 2.0]
        assert table.max_mae < 0.1
        assert table.is_monotone()
        assert list(table.to_records()[0]) == ['alpha', 'mean_alpha_hat', 'std_alpha_hat', 'mae']

    def test_worker_count_does_not_change_results(self):
        serial = calibrate([0.8, 1.6], K1=20, K2=50, reps=3, seed=9, workers=1)
        parallel = calibrate([0.8, 1.6], K1=20, K2=50, reps=3, seed=9, workers=2)
        assert serial.to_records() == parallel.to_records()

    def test_single_rep_is_deterministic(self):
        first = calibrate([1.0], K1=100, K2=1000, reps=1, seed=0)
        second = calibrate([1.0], K1=100, K2=1000, reps=1, seed=0)
        assert first.rows[0].estimates == second.rows[0].estimates
        assert abs(first.rows[0].mean_alpha_hat - 1.0) < 0.05

    def test_single_rep_value_follows_seed_derivation(self):
        table = calibrate([1.0], K1=100, K2=1000, reps=1, seed=0)
        draws = sample(StableParams(1.0), 100 * 1000, cell_seed(0, 0, 0)).values
        golden = estimate_alpha(draws, Grouping(K=100_000, K1=100, K2=1000)).alpha_hat
        assert table.rows[0].estimates[0] == pytest.approx(golden, rel=1e-9)

    def test_invalid_alpha(self):
        with pytest.raises(ParameterDomainError):
            calibrate([1.0, 3.0], reps=1)

    def test_gaussian_endpoint(self):
        table = calibrate([2.0], K1=100, K2=1000, reps=20, seed=3)
        assert abs(table.rows[0].mean_alpha_hat - 2.0) < 0.03

    @pytest.mark.slow
    def test_full_grid(self):
        grid = np.linspace(0.02, 2.0, 100)
        table = calibrate(grid, K1=100, K2=1000, reps=100, seed=1)
        assert table.max_mae <= 0.05
        assert table.is_monotone(tie_tolerance=0.01)
