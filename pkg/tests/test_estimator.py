import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfmonitor.estimator import (
    GaussianPrior,
    ObservationBatch,
    SgldHyper,
    batch_from_series,
    grad_log_posterior,
    log_posterior,
    model_jerk,
    posterior_summary,
    sgld_gradient,
    sgld_run,
    update_prior,
)


WIDE_PRIOR = GaussianPrior((1.0, 0.3), 10.0)


def synthetic_batch(K_L, T_L, n=500, t_s=0.01, sigma_eps=0.05, seed=0,
                    u_scale=1.5):
    """Simulate the first-order actuation response to a rich demand signal
    and log (accel, demand) as the closed loop would."""
    rng = np.random.default_rng(seed)
    # band-limited random demand: smoothed white noise keeps (u, a) from
    # collapsing onto a line while exciting a realistic frequency range
    white = rng.standard_normal(n + 200)
    kernel = np.exp(-0.5 * (np.arange(-50, 51) / 12.0) ** 2)
    kernel /= kernel.sum()
    u = u_scale * np.convolve(white, kernel, mode="same")[100:100 + n] / np.std(
        np.convolve(white, kernel, mode="same"))
    accel = np.empty(n)
    a = 0.0
    for i in range(n):
        accel[i] = a
        jerk = (K_L * u[i] - a) / T_L + sigma_eps * rng.standard_normal()
        a += t_s * jerk
    return batch_from_series(accel, u, t_s)


class TestObservationBatch:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ObservationBatch(np.zeros(3), np.zeros(2), np.zeros(3))

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            ObservationBatch(np.zeros(1), np.zeros(1), np.zeros(1))

    def test_non_finite_rejected(self):
        bad = np.array([0.0, math.inf])
        with pytest.raises(ValueError):
            ObservationBatch(bad, np.zeros(2), np.zeros(2))

    def test_jerk_from_series_is_central_difference(self):
        accel = np.array([0.0, 1.0, 4.0, 9.0])
        b = batch_from_series(accel, np.zeros(4), t_s=1.0)
        assert b.jerk == pytest.approx([1.0, 2.0, 4.0, 5.0])


class TestModelJerk:
    def test_equilibrium(self):
        assert model_jerk(1.0, 1.0, (1.0, 0.7)) == 0.0

    def test_substitution(self):
        assert model_jerk(0.0, 2.0, (0.5, 0.5)) == pytest.approx(2.0)
        assert model_jerk(1.0, 0.0, (1.0, 0.3)) == pytest.approx(-10.0 / 3.0)

    def test_nonpositive_lag_rejected(self):
        with pytest.raises(ValueError):
            model_jerk(0.0, 1.0, (1.0, 0.0))


class TestLogPosterior:
    def test_perfect_fit_at_prior_mean(self):
        theta = (1.0, 0.3)
        u = np.array([0.5, -0.2, 1.0])
        a = np.array([0.1, 0.0, -0.3])
        jerk = (theta[0] * u - a) / theta[1]
        batch = ObservationBatch(a, u, jerk)
        prior = GaussianPrior(theta, 2.0)
        sigma_sq = 0.01
        expected = -math.log(2 * math.pi * 2.0) + 3 * (-0.5 * math.log(sigma_sq))
        assert log_posterior(batch, theta, prior, sigma_sq) == pytest.approx(expected)

    def test_residual_penalty(self):
        theta = (1.0, 1.0)
        batch = ObservationBatch(np.zeros(2), np.zeros(2), np.array([0.5, 0.0]))
        sigma_sq = 0.25
        lp = log_posterior(batch, theta, WIDE_PRIOR, sigma_sq)
        lp0 = log_posterior(
            ObservationBatch(np.zeros(2), np.zeros(2), np.zeros(2)),
            theta, WIDE_PRIOR, sigma_sq)
        assert lp0 - lp == pytest.approx(0.5**2 / (2 * sigma_sq))


class TestGradients:
    @given(
        K_L=st.floats(0.3, 2.0), T_L=st.floats(0.1, 2.0),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=50, deadline=None)
    def test_analytic_matches_finite_differences(self, K_L, T_L, seed):
        batch = synthetic_batch(1.0, 0.3, n=100, seed=seed)
        theta = np.array([K_L, T_L])
        g = grad_log_posterior(batch, theta, WIDE_PRIOR, 0.01)
        h = 1e-5
        for i in range(2):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd = (log_posterior(batch, tp, WIDE_PRIOR, 0.01)
                  - log_posterior(batch, tm, WIDE_PRIOR, 0.01)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_zero_increment_at_stationary_point(self):
        theta = (1.0, 0.3)
        u = np.array([0.5, -0.2])
        a = np.array([0.1, 0.0])
        jerk = (theta[0] * u - a) / theta[1]
        batch = ObservationBatch(a, u, jerk)
        prior = GaussianPrior(theta, 1.0)
        inc, noise = sgld_gradient(batch, theta, prior, SgldHyper(), 2,
                                   eta_t=0.01, noise=np.zeros(2))
        assert inc == pytest.approx(np.zeros(2), abs=1e-12)

    def test_full_batch_scaling_is_identity(self):
        batch = synthetic_batch(1.0, 0.3, n=50)
        theta = (0.9, 0.35)
        g_scaled = grad_log_posterior(batch, theta, WIDE_PRIOR, 0.01,
                                      n_total=len(batch))
        g_plain = grad_log_posterior(batch, theta, WIDE_PRIOR, 0.01)
        assert g_scaled == pytest.approx(g_plain)

    def test_minibatch_larger_than_total_rejected(self):
        batch = synthetic_batch(1.0, 0.3, n=50)
        with pytest.raises(ValueError):
            sgld_gradient(batch, (1.0, 0.3), WIDE_PRIOR, SgldHyper(), 10,
                          eta_t=0.01)


class TestSgldHyper:
    @pytest.mark.parametrize("kwargs", [
        {"eta_1": 0.0},
        {"K_iters": 100, "burn_in_c": 100},
        {"K_iters": 100, "burn_in_c": 0},
        {"minibatch_n": 0},
        {"sigma_sq": 0.0},
        {"max_drift": 0.0},
    ])
    def test_invalid_hyper_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SgldHyper(**kwargs)

    def test_default_burn_in_is_sixty_percent(self):
        h = SgldHyper(K_iters=1000)
        assert h.burn_in_c == 600


class TestSgldRun:
    def test_recovers_nominal_parameters(self):
        batch = synthetic_batch(1.0, 0.3, n=500, sigma_eps=0.05, seed=3)
        est = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=3))
        assert est.K_L == pytest.approx(1.0, abs=0.05)
        assert est.T_L == pytest.approx(0.3, abs=0.1)
        assert not est.low_confidence

    def test_recovers_degraded_parameters(self):
        batch = synthetic_batch(0.5, 1.5, n=500, sigma_eps=0.05, seed=4)
        est = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=4))
        assert est.K_L == pytest.approx(0.5, abs=0.15)
        assert est.T_L == pytest.approx(1.5, abs=0.25)

    def test_deterministic_given_seed(self):
        batch = synthetic_batch(1.0, 0.3, n=200, seed=5)
        e1 = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=11))
        e2 = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=11))
        assert np.array_equal(e1.samples, e2.samples)

    def test_different_seeds_differ(self):
        batch = synthetic_batch(1.0, 0.3, n=200, seed=5)
        e1 = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=11))
        e2 = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=12))
        assert not np.array_equal(e1.samples, e2.samples)

    def test_samples_positive_and_counted(self):
        batch = synthetic_batch(1.0, 0.3, n=200, seed=6)
        hyper = SgldHyper(K_iters=500, burn_in_c=300, seed=6)
        est = sgld_run(batch, WIDE_PRIOR, hyper)
        assert est.samples.shape == (200, 2)
        assert np.all(est.samples > 0)

    def test_tight_prior_dominates(self):
        batch = synthetic_batch(1.0, 0.3, n=200, sigma_eps=0.05, seed=7)
        prior = GaussianPrior((2.0, 1.0), 1e-6)
        est = sgld_run(batch, prior, SgldHyper(seed=7))
        # with a near-delta prior the posterior cannot wander far from it
        assert abs(est.K_L - 2.0) < 0.2
        assert abs(est.T_L - 1.0) < 0.2

    def test_unexcited_window_flagged_low_confidence(self):
        n = 200
        accel = np.full(n, 0.001)
        demand = np.full(n, 0.001)
        batch = batch_from_series(accel, demand, 0.01)
        est = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=0))
        assert est.low_confidence

    def test_collinear_window_flagged_low_confidence(self):
        # demand proportional to accel: only the ratio is identifiable
        n = 200
        accel = 0.5 * np.sin(np.linspace(0, 4 * np.pi, n))
        demand = 2.0 * accel
        batch = batch_from_series(accel, demand, 0.01)
        est = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=0))
        assert est.low_confidence

    def test_fixed_lag_freezes_second_coordinate(self):
        batch = synthetic_batch(1.0, 0.3, n=200, seed=8)
        est = sgld_run(batch, WIDE_PRIOR, SgldHyper(seed=8), fix_lag=0.3)
        assert np.all(est.samples[:, 1] == 0.3)


class TestPosteriorSummary:
    def test_degenerate_samples(self):
        s = np.tile([1.2, 0.4], (10, 1))
        est = posterior_summary(s)
        assert est.mean == pytest.approx([1.2, 0.4])
        assert est.covariance == pytest.approx(np.zeros((2, 2)))
        assert est.credible[0] == pytest.approx([1.2, 1.2])

    def test_two_point_mean(self):
        est = posterior_summary(np.array([[0.0, 0.0], [2.0, 2.0]]))
        assert est.mean == pytest.approx([1.0, 1.0])

    def test_gaussian_monte_carlo(self):
        rng = np.random.default_rng(0)
        mu, sigma = np.array([1.0, 0.5]), 0.2
        n = 10_000
        samples = mu + sigma * rng.standard_normal((n, 2))
        est = posterior_summary(samples)
        tol = 3 * sigma / math.sqrt(n)
        assert est.mean == pytest.approx(mu, abs=tol)
        assert est.credible[0] == pytest.approx(
            [mu[0] - 1.96 * sigma, mu[0] + 1.96 * sigma], abs=0.02)

    def test_insufficient_samples_rejected(self):
        with pytest.raises(ValueError):
            posterior_summary(np.array([[1.0, 1.0]]))


class TestUpdatePrior:
    def test_mean_carried_variance_reset(self):
        est = posterior_summary(np.array([[1.0, 0.3], [1.0, 0.3], [1.0, 0.3]]))
        prior = update_prior(est, 0.5)
        assert prior.mean == pytest.approx((1.0, 0.3))
        assert prior.variance == 0.5

    def test_nonpositive_lambda_rejected(self):
        est = posterior_summary(np.array([[1.0, 0.3], [1.0, 0.3]]))
        with pytest.raises(ValueError):
            update_prior(est, 0.0)

    def test_consecutive_windows_stay_consistent(self):
        b1 = synthetic_batch(1.0, 0.3, n=500, seed=21)
        b2 = synthetic_batch(1.0, 0.3, n=500, seed=22)
        e1 = sgld_run(b1, WIDE_PRIOR, SgldHyper(seed=21))
        e2 = sgld_run(b2, update_prior(e1, 1.0), SgldHyper(seed=22))
        std1 = np.sqrt(np.diag(e1.covariance))
        assert abs(e2.K_L - e1.K_L) < max(5 * std1[0], 0.05)
        assert abs(e2.T_L - e1.T_L) < max(5 * std1[1], 0.05)

    def test_tracks_plant_switch_despite_old_prior(self):
        b1 = synthetic_batch(1.0, 0.3, n=500, seed=23)
        e1 = sgld_run(b1, WIDE_PRIOR, SgldHyper(seed=23))
        b2 = synthetic_batch(0.5, 1.5, n=500, seed=24)
        e2 = sgld_run(b2, update_prior(e1, 1.0), SgldHyper(seed=24))
        assert e2.K_L == pytest.approx(0.5, abs=0.15)
        assert e2.T_L == pytest.approx(1.5, abs=0.25)
