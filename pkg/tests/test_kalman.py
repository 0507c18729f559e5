"""Kalman recursions against dense-Gaussian oracles."""

import math

import numpy as np
import pytest

from tvreg import build_state_space, kalman_filter, kalman_smoother
from tvreg.errors import NumericalBreakdownError
from tvreg.kalman import StateSpace, filter_loglik, marginal_loglik

from conftest import (
    dense_joint_moments,
    dense_loglik,
    dense_smoothed_states,
    make_spec,
    random_instance,
)


def _gaussian_ssm(spec, sigma):
    return build_state_space(spec, np.asarray(sigma, dtype=float))


class TestFrozenScalarCase:
    """T=1, single fixed intercept, beta1 ~ N(0,1), sigma_eps=1, y=0."""

    def _ssm(self):
        spec = make_spec(
            np.zeros(1), X_fixed=np.ones((1, 1)),
            beta1_priors=[[0.0, 1.0]], sigma_priors=[[0.0, 10.0]],
        )
        return _gaussian_ssm(spec, [1.0])

    def test_loglik_value(self):
        # F = Z P1 Z' + H = 1 + 1 = 2; v = 0
        expected = -0.5 * (math.log(2.0 * math.pi) + math.log(2.0))
        assert expected == pytest.approx(-1.2655121234846454, abs=1e-16)
        ssm = self._ssm()
        assert filter_loglik(ssm, np.zeros(1)) == pytest.approx(expected, abs=1e-15)
        out = kalman_filter(ssm, np.zeros(1))
        assert out.loglik == pytest.approx(expected, abs=1e-15)
        assert out.F[0] == pytest.approx(2.0)
        assert out.v[0] == 0.0

    def test_posterior_moments(self):
        # prior N(0,1), likelihood N(0,1) at y=0: posterior N(0, 1/2)
        out = kalman_smoother(self._ssm(), np.zeros(1))
        assert out.a_smooth[0, 0] == pytest.approx(0.0, abs=1e-15)
        assert out.P_smooth[0, 0, 0] == pytest.approx(0.5, rel=1e-12)


class TestDenseEquivalence:
    def test_random_instances_match_dense_oracle(self, rng):
        for _ in range(30):
            spec, sigma = random_instance(rng)
            ssm = _gaussian_ssm(spec, sigma)
            got = filter_loglik(ssm, spec.y)
            want = dense_loglik(ssm, spec.y)
            assert got == pytest.approx(want, rel=1e-8), (
                f"T={spec.n_obs}, p=({spec.p_fixed},{spec.p_rw1},{spec.p_rw2})"
            )

    def test_filter_and_fast_path_agree(self, rng):
        # same recursion, different accumulation order: agreement to roundoff
        for _ in range(10):
            spec, sigma = random_instance(rng)
            ssm = _gaussian_ssm(spec, sigma)
            assert filter_loglik(ssm, spec.y) == pytest.approx(
                kalman_filter(ssm, spec.y).loglik, rel=1e-12
            )

    def test_smoothed_moments_match_dense_conditioning(self, rng):
        for _ in range(10):
            spec, sigma = random_instance(rng)
            ssm = _gaussian_ssm(spec, sigma)
            out = kalman_smoother(ssm, spec.y)
            mean, joint = dense_smoothed_states(ssm, spec.y)
            np.testing.assert_allclose(out.a_smooth, mean, rtol=1e-7, atol=1e-9)
            for t in range(spec.n_obs):
                np.testing.assert_allclose(
                    out.P_smooth[t], joint[t, :, t, :], rtol=1e-6, atol=1e-9
                )


class TestStaticRegression:
    """Zero state noise: the model collapses to Bayesian linear regression."""

    def _setup(self, rng):
        T, p = 12, 2
        X = rng.normal(size=(T, p))
        beta = np.array([1.0, -0.5])
        sigma_eps = 0.7
        y = X @ beta + rng.normal(0, sigma_eps, T)
        prior_mean = np.array([0.2, -0.1])
        prior_sd = np.array([1.5, 0.8])
        spec = make_spec(
            y, X_fixed=X,
            beta1_priors=np.column_stack([prior_mean, prior_sd]),
            sigma_priors=[[0.0, 2.0]],
        )
        return spec, X, y, sigma_eps, prior_mean, prior_sd

    def test_posterior_matches_conjugate_formula(self, rng):
        spec, X, y, sigma_eps, prior_mean, prior_sd = self._setup(rng)
        ssm = _gaussian_ssm(spec, [sigma_eps])
        out = kalman_smoother(ssm, y)

        prec = X.T @ X / sigma_eps**2 + np.diag(1.0 / prior_sd**2)
        cov = np.linalg.inv(prec)
        mean = cov @ (X.T @ y / sigma_eps**2 + prior_mean / prior_sd**2)

        # the coefficient states are time-invariant; check every t
        for t in range(spec.n_obs):
            np.testing.assert_allclose(out.a_smooth[t], mean, rtol=1e-9)
            np.testing.assert_allclose(out.P_smooth[t], cov, rtol=1e-8, atol=1e-12)

    def test_loglik_matches_marginal_regression(self, rng):
        spec, X, y, sigma_eps, prior_mean, prior_sd = self._setup(rng)
        got = marginal_loglik(spec, np.array([sigma_eps]))
        cov_y = X @ np.diag(prior_sd**2) @ X.T + sigma_eps**2 * np.eye(len(y))
        from conftest import mvn_logpdf

        want = mvn_logpdf(y, X @ prior_mean, cov_y)
        assert got == pytest.approx(want, rel=1e-10)


class TestStructure:
    def test_rw2_transition_block(self):
        spec = make_spec(np.zeros(3), X_rw2=np.ones((3, 1)))
        ssm = _gaussian_ssm(spec, [0.5, 0.2])
        np.testing.assert_array_equal(ssm.Tmat, [[1.0, 1.0], [0.0, 1.0]])
        # noise lands on the slope state only
        assert ssm.noisy_idx.tolist() == [1]
        np.testing.assert_allclose(ssm.qdiag, np.tile([0.0, 0.04], (3, 1)))
        # observation row sees the level, not the slope
        np.testing.assert_array_equal(ssm.Z, [[1.0, 0.0]] * 3)

    def test_gamma_scales_rw1_noise_sd(self):
        gamma = np.array([[1.0], [2.0], [0.5]])
        spec = make_spec(np.zeros(3), X_rw1=np.ones((3, 1)), gamma=gamma)
        ssm = _gaussian_ssm(spec, [1.0, 0.3])
        np.testing.assert_allclose(ssm.qdiag[:, 0], (gamma[:, 0] * 0.3) ** 2)

    def test_block_order_fixed_rw1_rw2(self, rng):
        X = rng.normal(size=(4, 3))
        spec = make_spec(np.zeros(4), X_fixed=X[:, :1], X_rw1=X[:, 1:2],
                         X_rw2=X[:, 2:])
        ssm = _gaussian_ssm(spec, [1.0, 0.1, 0.2])
        assert ssm.m == 4  # fixed + rw1 + (level, slope)
        np.testing.assert_array_equal(ssm.Z[:, 0], X[:, 0])
        np.testing.assert_array_equal(ssm.Z[:, 1], X[:, 1])
        np.testing.assert_array_equal(ssm.Z[:, 2], X[:, 2])
        np.testing.assert_array_equal(ssm.Z[:, 3], np.zeros(4))
        assert ssm.noisy_idx.tolist() == [1, 3]

    def test_initial_moments_from_priors(self):
        spec = make_spec(
            np.zeros(2), X_fixed=np.ones((2, 1)), X_rw2=np.ones((2, 1)),
            beta1_priors=[[1.0, 2.0], [-1.0, 3.0]], nu1_priors=[[0.5, 0.25]],
        )
        ssm = _gaussian_ssm(spec, [1.0, 0.1])
        np.testing.assert_array_equal(ssm.a1, [1.0, -1.0, 0.5])
        np.testing.assert_array_equal(ssm.P1diag, [4.0, 9.0, 0.0625])

    def test_poisson_requires_obs_variance(self):
        spec = make_spec(np.zeros(2), X_rw1=np.ones((2, 1)), family="poisson",
                         exposure=np.ones(2))
        with pytest.raises(ValueError):
            build_state_space(spec, np.array([0.5]))

    def test_relabeling_invariance(self, rng):
        X = rng.normal(size=(6, 2))
        y = rng.normal(size=6)
        spec_ab = make_spec(y, X_rw1=X)
        spec_ba = make_spec(y, X_rw1=X[:, ::-1])
        sig_ab = np.array([0.8, 0.1, 0.4])
        sig_ba = np.array([0.8, 0.4, 0.1])
        assert marginal_loglik(spec_ab, sig_ab) == pytest.approx(
            marginal_loglik(spec_ba, sig_ba), rel=1e-12
        )


class TestMissingData:
    def test_skipped_times_do_not_contribute(self, rng):
        spec, sigma = random_instance(rng)
        while spec.n_obs < 4:
            spec, sigma = random_instance(rng)
        y = spec.y.copy()
        y[1] = np.nan
        ssm = _gaussian_ssm(spec, sigma)
        assert filter_loglik(ssm, y) == pytest.approx(dense_loglik(ssm, y), rel=1e-8)

    def test_all_missing_gives_zero_loglik_and_prior_moments(self):
        spec = make_spec(np.full(4, np.nan), X_rw1=np.ones((4, 1)))
        ssm = _gaussian_ssm(spec, [1.0, 0.5])
        assert filter_loglik(ssm, spec.y) == 0.0
        out = kalman_smoother(ssm, spec.y)
        mu, cov = dense_joint_moments(ssm)
        np.testing.assert_allclose(out.a_smooth, mu, atol=1e-12)
        for t in range(4):
            np.testing.assert_allclose(out.P_smooth[t], cov[t, t], atol=1e-12)


class TestNumericalGuards:
    def test_innovation_variances_positive(self, rng):
        for _ in range(5):
            spec, sigma = random_instance(rng)
            out = kalman_filter(_gaussian_ssm(spec, sigma), spec.y)
            assert (out.F[spec.observed] > 0).all()

    def test_smoothed_covariances_psd(self, rng):
        for _ in range(5):
            spec, sigma = random_instance(rng)
            out = kalman_smoother(_gaussian_ssm(spec, sigma), spec.y)
            for t in range(spec.n_obs):
                eig = np.linalg.eigvalsh(out.P_smooth[t])
                assert eig.min() >= -1e-9

    def test_degenerate_variance_returns_minus_inf(self):
        # H = 0 with a one-dimensional fixed coefficient: the second
        # observation is deterministic given the first, so F_2 = 0
        spec = make_spec(
            np.zeros(2), X_fixed=np.ones((2, 1)), family="poisson",
            exposure=np.ones(2), sigma_priors=np.empty((0, 2)),
        )
        ssm = build_state_space(spec, np.empty(0), obs_variance=np.zeros(2))
        assert filter_loglik(ssm, np.zeros(2)) == -math.inf

    def test_smoother_raises_on_degenerate_variance(self):
        spec = make_spec(
            np.zeros(2), X_fixed=np.ones((2, 1)), family="poisson",
            exposure=np.ones(2), sigma_priors=np.empty((0, 2)),
        )
        ssm = build_state_space(spec, np.empty(0), obs_variance=np.zeros(2))
        with pytest.raises(NumericalBreakdownError):
            kalman_smoother(ssm, np.zeros(2))

    def test_long_recursion_stays_stable(self, rng):
        T = 400
        X = rng.normal(size=(T, 1))
        spec = make_spec(rng.normal(size=T), X_rw1=X)
        out = kalman_smoother(_gaussian_ssm(spec, [0.5, 0.05]), spec.y)
        assert np.isfinite(out.loglik)
        assert np.isfinite(out.a_smooth).all()
        assert (out.P_smooth[:, 0, 0] >= 0).all()
