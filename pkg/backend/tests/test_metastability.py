import numpy as np
import pytest

from errors import IllPosedLandscapeError, InsufficientDataError, ParameterDomainError
from metastability import (ExitConfig, ExitSample, ExitStats, GeneratorMatrix, Landscape1D,
                           classify_valleys, default_delta, double_well_pi, exit_law_check,
                           exit_times, fit_exit_scaling, generator, occupation,
                           simulate_jump_chain, stationary)
from stable_sampler import levy_measure_constant

THREE_WELLS = Landscape1D((-2.0, 0.5, 3.0), (-0.5, 1.5))


class TestLandscape:
    def test_interleaving_required(self):
        with pytest.raises(ParameterDomainError):
            Landscape1D((-1.0, 2.0), (3.0,))

    def test_saddle_count(self):
        with pytest.raises(ParameterDomainError):
            Landscape1D((-1.0, 2.0), (0.0, 1.0))

    def test_single_minimum(self):
        with pytest.raises(ParameterDomainError):
            Landscape1D((0.0,), ())

    def test_double_well_sign_check(self):
        with pytest.raises(ParameterDomainError):
            Landscape1D.double_well(0.5, 2.0)

    def test_widths(self):
        assert THREE_WELLS.widths()[1] == 2.0
        assert THREE_WELLS.half_widths() == [[1.5], [1.0, 1.0], [1.5]]

    def test_default_delta(self):
        assert default_delta(Landscape1D.double_well(-1.0, 2.0)) == pytest.approx(0.1)

    def test_classify_valleys(self):
        labels = classify_valleys(THREE_WELLS, [-3.0, -0.5, 0.0, 1.5, 2.0])
        np.testing.assert_array_equal(labels, [0, 0, 1, 1, 2])


class TestGenerator:
    def test_asymmetric_double_well(self):
        gen = generator(Landscape1D.double_well(-1.0, 2.0), 1.0)
        np.testing.assert_allclose(gen.Q, [[-1.0, 1.0], [0.5, -0.5]], atol=1e-15)

    def test_symmetric_rates(self):
        gen = generator(Landscape1D.double_well(-1.0, 1.0), 1.5)
        np.testing.assert_allclose(gen.exit_rates, [1 / 1.5, 1 / 1.5])

    @pytest.mark.parametrize('alpha', [0.5, 1.0, 1.3, 1.9])
    def test_rows_sum_to_zero(self, alpha):
        gen = generator(THREE_WELLS, alpha)
        np.testing.assert_allclose(gen.Q.sum(axis=1), 0.0, atol=1e-12)
        off_diagonal = gen.Q[~np.eye(3, dtype=bool)]
        assert np.all(off_diagonal >= 0)

    def test_scale_covariance(self):
        alpha, c = 1.3, 2.5
        base = generator(THREE_WELLS, alpha).Q
        scaled = generator(THREE_WELLS.scaled(c), alpha).Q
        np.testing.assert_allclose(scaled, c ** -alpha * base, rtol=1e-12)

    def test_matrix_is_read_only(self):
        gen = generator(THREE_WELLS, 1.3)
        with pytest.raises(ValueError):
            gen.Q[0, 0] = 0.0

    def test_jump_probabilities(self):
        gen = generator(THREE_WELLS, 1.3)
        p = gen.jump_probabilities(1)
        assert p[1] == 0.0
        assert p.sum() == pytest.approx(1.0)

    def test_invalid_alpha(self):
        with pytest.raises(ParameterDomainError):
            generator(THREE_WELLS, 2.5)


class TestStationary:
    def test_asymmetric_double_well(self):
        dist = stationary(generator(Landscape1D.double_well(-1.0, 2.0), 1.0))
        np.testing.assert_allclose(dist.pi, [1 / 3, 2 / 3], atol=1e-12)
        assert dist.residual <= 1e-12

    def test_closed_form_ratio(self):
        pi1, pi2 = double_well_pi(-1.0, 3.0, 1.5)
        assert pi2 / pi1 == pytest.approx(3.0 ** 1.5)

    @pytest.mark.parametrize('alpha', [0.7, 1.0, 1.5, 2.0])
    def test_solver_matches_closed_form(self, alpha):
        dist = stationary(generator(Landscape1D.double_well(-0.8, 1.7), alpha))
        np.testing.assert_allclose(dist.pi, double_well_pi(-0.8, 1.7, alpha), atol=1e-12)

    def test_three_wells_against_jump_chain(self):
        gen = generator(THREE_WELLS, 1.3)
        dist = stationary(gen)
        assert dist.pi.sum() == pytest.approx(1.0)
        simulated = simulate_jump_chain(gen, 200_000, seed=4)
        np.testing.assert_allclose(simulated, dist.pi, atol=0.02)

    def test_zero_generator_is_ill_posed(self):
        with pytest.raises(IllPosedLandscapeError):
            stationary(GeneratorMatrix(Q=np.zeros((2, 2)), alpha=1.0))

    def test_disconnected_chain_is_ill_posed(self):
        Q = np.array([[-1.0, 1.0, 0.0, 0.0],
                      [1.0, -1.0, 0.0, 0.0],
                      [0.0, 0.0, -1.0, 1.0],
                      [0.0, 0.0, 1.0, -1.0]])
        with pytest.raises(IllPosedLandscapeError):
            stationary(GeneratorMatrix(Q=Q, alpha=1.0))


def _synthetic_stats(gen, source, n, seed, destinations=None):
    """Exit samples drawn exactly from the limiting law with epsilon = 1"""
    rng = np.random.default_rng(seed)
    times = rng.exponential(1.0 / gen.exit_rates[source], size=n)
    if destinations is None:
        destinations = rng.choice(len(gen.exit_rates), size=n, p=gen.jump_probabilities(source))
    samples = tuple(ExitSample(i, float(t), int(d)) for i, (t, d) in enumerate(zip(times, destinations)))
    return ExitStats(alpha=gen.alpha, epsilon=1.0, source=source, delta=0.1, samples=samples)


class TestExitLawCheck:
    def test_exact_law_passes(self):
        gen = generator(THREE_WELLS, 1.3)
        stats = _synthetic_stats(gen, source=1, n=2000, seed=1)
        report = exit_law_check(stats, gen, rate_scale=1.0, confidence=0.999)
        assert report.survival_bound_holds()
        assert report.destinations_within_intervals()
        assert report.chi_square_pvalue > 0.001
        assert report.exponential_ks < 0.05

    def test_skewed_destinations_are_flagged(self):
        gen = generator(THREE_WELLS, 1.3)
        stats = _synthetic_stats(gen, source=1, n=2000, seed=2, destinations=np.zeros(2000))
        report = exit_law_check(stats, gen, rate_scale=1.0)
        assert not report.destinations_within_intervals()

    def test_too_slow_exits_break_the_bound(self):
        gen = generator(THREE_WELLS, 1.3)
        stats = _synthetic_stats(gen, source=0, n=2000, seed=3)
        # exits five times slower than the limiting rate
        slow = ExitStats(alpha=stats.alpha, epsilon=1.0, source=0, delta=0.1,
                         samples=tuple(ExitSample(s.replica, 5.0 * s.time, s.destination)
                                       for s in stats.samples))
        report = exit_law_check(slow, gen, rate_scale=1.0)
        assert not report.survival_bound_holds()

    def test_default_rate_scale(self):
        gen = generator(THREE_WELLS, 1.3)
        report = exit_law_check(_synthetic_stats(gen, 0, 100, seed=4), gen)
        assert report.rate_scale == pytest.approx(levy_measure_constant(1.3))

    def test_censored_samples_are_insufficient(self):
        gen = generator(Landscape1D.double_well(-1.0, 1.0), 1.5)
        samples = tuple(ExitSample(i, 10.0, None, True, 'budget') for i in range(10))
        stats = ExitStats(alpha=1.5, epsilon=0.5, source=0, delta=0.1, samples=samples)
        with pytest.raises(InsufficientDataError):
            exit_law_check(stats, gen)

    def test_report_serialises(self):
        gen = generator(THREE_WELLS, 1.3)
        report = exit_law_check(_synthetic_stats(gen, 1, 50, seed=5), gen, rate_scale=1.0)
        assert set(report.to_dict()) >= {'n', 'exit_rate', 'max_excess', 'dkw_band', 'chi_square'}


class TestFitExitScaling:
    def test_exact_power_law(self):
        alpha = 1.4
        stats_list = []
        for eps in (0.4, 0.2, 0.1):
            samples = (ExitSample(0, 3.0 * eps ** -alpha, 1),)
            stats_list.append(ExitStats(alpha=alpha, epsilon=eps, source=0, delta=0.1, samples=samples))
        assert fit_exit_scaling(stats_list) == pytest.approx(-alpha)

    def test_needs_two_levels(self):
        with pytest.raises(ParameterDomainError):
            fit_exit_scaling([])


class TestExitTimes:
    WELL = Landscape1D.double_well(-1.0, 1.0)

    def test_transitions_land_in_the_other_well(self):
        config = ExitConfig(self.WELL, 1.5, 1.0, eta=1e-3, seed=3, max_steps=400_000)
        stats = exit_times(config, reps=10)
        assert len(stats.samples) == 10
        assert [s.replica for s in stats.samples] == list(range(10))
        assert all(s.destination == 1 for s in stats.uncensored)
        assert np.all(stats.times > 0)

    def test_seed_determinism(self):
        config = ExitConfig(self.WELL, 1.5, 1.0, eta=1e-3, seed=5, mode='first_exit')
        assert exit_times(config, reps=8).samples == exit_times(config, reps=8).samples

    def test_worker_count_does_not_change_results(self):
        config = ExitConfig(self.WELL, 1.5, 1.0, eta=1e-3, seed=6, mode='first_exit')
        serial = exit_times(config, reps=6, workers=1)
        parallel = exit_times(config, reps=6, workers=2)
        assert serial.samples == parallel.samples

    def test_budget_censoring(self):
        config = ExitConfig(self.WELL, 1.5, 0.01, eta=1e-3, seed=1, max_steps=10)
        stats = exit_times(config, reps=5)
        assert stats.censored_fraction == 1.0
        assert {s.reason for s in stats.samples} == {'budget'}
        assert stats.mean_time_lower_bound() == pytest.approx(10 * 1e-3)
        assert all(r['destination'] == -1 for r in stats.to_records())

    def test_first_exit_is_faster_than_transition(self):
        first = exit_times(ExitConfig(self.WELL, 1.5, 1.0, seed=2, mode='first_exit',
                                      max_steps=400_000), reps=10)
        transition = exit_times(ExitConfig(self.WELL, 1.5, 1.0, seed=2, max_steps=400_000), reps=10)
        assert first.mean_time() <= transition.mean_time()

    def test_first_exit_destination_differs_from_source(self):
        config = ExitConfig(self.WELL, 1.5, 1.0, eta=1e-3, seed=5, mode='first_exit',
                            max_steps=400_000)
        stats = exit_times(config, reps=20)
        assert len(stats.uncensored) > 0
        assert all(s.destination != config.source for s in stats.uncensored)

    def test_first_exit_time_precedes_transition_per_replica(self):
        first = exit_times(ExitConfig(self.WELL, 1.5, 1.0, seed=7, mode='first_exit',
                                      max_steps=400_000), reps=8)
        transition = exit_times(ExitConfig(self.WELL, 1.5, 1.0, seed=7, max_steps=400_000), reps=8)
        for a, b in zip(first.samples, transition.samples):
            if not (a.censored or b.censored):
                assert a.time <= b.time

    def test_delta_must_fit_in_valley(self):
        config = ExitConfig(self.WELL, 1.5, 1.0)
        with pytest.raises(ParameterDomainError):
            exit_times(config, delta=1.5, reps=1)

    def test_invalid_mode(self):
        with pytest.raises(ParameterDomainError):
            ExitConfig(self.WELL, 1.5, 1.0, mode='sideways')

    def test_source_must_exist(self):
        with pytest.raises(ParameterDomainError):
            ExitConfig(self.WELL, 1.5, 1.0, source=2)

    @pytest.mark.slow
    @pytest.mark.parametrize('alpha', [1.2, 1.8])
    def test_mean_time_scales_like_inverse_noise_power(self, alpha):
        well = Landscape1D.double_well(-1.0, 2.0)
        stats_list = [exit_times(ExitConfig(well, alpha, eps, seed=11), reps=200, workers=8)
                      for eps in (0.05, 0.1, 0.2)]
        assert fit_exit_scaling(stats_list) == pytest.approx(-alpha, abs=0.15)

    @pytest.mark.slow
    def test_brownian_exits_are_much_slower(self):
        well = Landscape1D.double_well(-1.0, 2.0)
        levy = exit_times(ExitConfig(well, 1.2, 0.05, seed=12), reps=50, workers=8)
        brownian = exit_times(ExitConfig(well, 2.0, 0.05, seed=12, max_steps=2_000_000),
                              reps=20, workers=8)
        # censored Brownian replicas only make this a lower bound
        assert brownian.mean_time_lower_bound() >= 10.0 * levy.mean_time()

    @pytest.mark.slow
    @pytest.mark.parametrize('alpha', [1.2, 1.8])
    def test_simulated_exits_respect_survival_bound(self, alpha):
        well = Landscape1D.double_well(-1.0, 2.0)
        stats = exit_times(ExitConfig(well, alpha, 0.05, seed=11), reps=200, workers=8)
        report = exit_law_check(stats, generator(well, alpha))
        assert report.survival_bound_holds(slack=0.05)

    @pytest.mark.slow
    def test_three_well_destinations_follow_generator(self):
        stats = exit_times(ExitConfig(THREE_WELLS, 1.0, 0.05, source=1, seed=14), reps=200, workers=8)
        report = exit_law_check(stats, generator(THREE_WELLS, 1.0))
        np.testing.assert_allclose(report.expected_destinations[[0, 2]], [0.5, 0.5])
        assert report.destinations_within_intervals()


class TestOccupation:
    def test_fractions(self):
        result = occupation(Landscape1D.double_well(-1.0, 1.0), 1.5, 0.5, horizon=100.0, seed=1)
        assert result.fractions.sum() == pytest.approx(1.0)
        assert len(result.counts) == 2
        assert result.steps == 100_000

    def test_deterministic(self):
        landscape = Landscape1D.double_well(-1.0, 2.0)
        a = occupation(landscape, 1.2, 0.3, horizon=20.0, seed=9)
        b = occupation(landscape, 1.2, 0.3, horizon=20.0, seed=9)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_horizon_shorter_than_step(self):
        with pytest.raises(ParameterDomainError):
            occupation(Landscape1D.double_well(-1.0, 1.0), 1.5, 0.5, horizon=1e-4, seed=1)

    @pytest.mark.slow
    def test_long_run_approaches_stationary_law(self):
        landscape = Landscape1D.double_well(-1.0, 2.0)
        result = occupation(landscape, 1.0, 0.05, horizon=1e4, seed=12)
        assert result.steps == 10 ** 7
        np.testing.assert_allclose(result.fractions, [1 / 3, 2 / 3], atol=0.05)

    @pytest.mark.slow
    def test_wider_valley_holds_more_mass(self):
        fractions = [occupation(Landscape1D.double_well(-1.0, m2), 1.0, 0.05, horizon=1e4, seed=13)
                     .fractions[1] for m2 in (1.0, 2.0, 3.0)]
        assert fractions[0] < fractions[1] < fractions[2]
