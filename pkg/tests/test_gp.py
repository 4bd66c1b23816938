"""GP regression against dense-solve oracles and closed forms."""

import math

import numpy as np
import pytest

from labo.gp import (
    DimensionMismatch,
    FANTASY_NOISE,
    GpModel,
    KernelParams,
    NOISE_FLOOR,
    PriorGp,
    SingularKernel,
    condition_on_fantasy,
    default_params,
    fit,
    fit_hyperparams,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    posterior,
)


def dense_posterior_oracle(params, xs, ys, q):
    """Direct-inverse GP posterior, the brute-force reference path."""
    xs = np.atleast_2d(xs)
    q = np.asarray(q, dtype=float)
    n = xs.shape[0]
    k = kernel_matrix(params, xs) + params.noise_variance * np.eye(n)
    k_inv = np.linalg.inv(k)
    ks = kernel_matrix(params, xs, q[None, :])[:, 0]
    mu = ks @ k_inv @ ys
    var = params.signal_variance - ks @ k_inv @ ks
    return float(mu), float(var)


def dense_lml_oracle(params, xs, ys):
    xs = np.atleast_2d(xs)
    n = xs.shape[0]
    k = kernel_matrix(params, xs) + params.noise_variance * np.eye(n)
    sign, logdet = np.linalg.slogdet(k)
    return float(-0.5 * ys @ np.linalg.inv(k) @ ys - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi))


class TestKernel:
    def test_zero_distance_gives_signal_variance(self):
        p = KernelParams(1.0, np.array([0.3, 0.3]), 1e-4)
        assert kernel_eval(p, [0.2, 0.7], [0.2, 0.7]) == pytest.approx(1.0)

    def test_unit_lengthscale_sqrt2_distance(self):
        # closed form: exp(-0.5 * d^2 / l^2) with d = sqrt(2), l = 1
        p = KernelParams(1.0, np.array([1.0]), 1e-4)
        val = kernel_eval(p, [0.0], [math.sqrt(2.0)])
        assert val == pytest.approx(math.exp(-1.0), abs=1e-9)
        assert val == pytest.approx(0.367879, abs=1e-6)

    def test_symmetry(self):
        p = KernelParams(2.0, np.array([0.5, 0.2, 0.9]), 1e-4)
        a, b = [0.1, 0.5, 0.9], [0.4, 0.2, 0.3]
        assert kernel_eval(p, a, b) == kernel_eval(p, b, a)

    def test_dimension_mismatch(self):
        p = KernelParams(1.0, np.array([0.5, 0.5]), 1e-4)
        with pytest.raises(DimensionMismatch):
            kernel_eval(p, [0.1], [0.2])

    def test_psd_before_jitter(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            p = KernelParams(
                float(rng.uniform(0.2, 3.0)),
                rng.uniform(0.1, 1.0, size=3),
                1e-4,
            )
            xs = rng.random((8, 3))
            k = kernel_matrix(p, xs)
            assert np.min(np.linalg.eigvalsh(k)) > -1e-10


class TestFit:
    def test_single_point_factor(self):
        p = KernelParams(1.0, np.array([0.2]), 0.01)
        m = fit(p, np.array([[0.5]]), np.array([2.0]))
        assert m.chol.shape == (1, 1)
        assert m.chol[0, 0] == pytest.approx(math.sqrt(1.01))

    def test_factor_reproduces_kernel(self):
        rng = np.random.default_rng(0)
        p = KernelParams(1.3, np.array([0.4, 0.25]), 1e-3)
        xs = rng.random((6, 2))
        m = fit(p, xs, rng.normal(size=6))
        k = kernel_matrix(p, xs) + 1e-3 * np.eye(6)
        rel = np.linalg.norm(m.chol @ m.chol.T - k) / np.linalg.norm(k)
        assert rel < 1e-8

    def test_duplicate_points_survive_with_tiny_noise(self):
        p = KernelParams(1.0, np.array([0.2]), NOISE_FLOOR)
        xs = np.array([[0.5], [0.5], [0.5]])
        m = fit(p, xs, np.array([1.0, 1.0, 1.0]))
        assert m.n_train == 3

    def test_fit_requires_points(self):
        p = default_params(1)
        with pytest.raises(ValueError):
            fit(p, np.zeros((0, 1)), np.array([]))


class TestPosterior:
    def test_single_point_closed_form(self):
        # mu = k/(k + noise) * y, var = s2 - k^2/(k + noise), at the training point
        p = KernelParams(1.0, np.array([0.2]), 0.01)
        m = fit(p, np.array([[0.5]]), np.array([2.0]))
        mu, var = posterior(m, [0.5])
        assert mu == pytest.approx(2.0 / 1.01, abs=1e-10)
        assert var == pytest.approx(1.0 - 1.0 / 1.01, abs=1e-10)

    def test_prior_recovery_far_from_data(self):
        p = KernelParams(1.5, np.array([0.05]), 1e-4)
        m = fit(p, np.array([[0.0]]), np.array([3.0]))
        mu, var = posterior(m, [1.0])
        assert abs(mu) < 1e-6
        assert var == pytest.approx(1.5, abs=1e-6)

    def test_matches_dense_oracle_three_points(self):
        rng = np.random.default_rng(5)
        p = KernelParams(0.8, np.array([0.3, 0.5]), 1e-3)
        xs = rng.random((3, 2))
        ys = rng.normal(size=3)
        m = fit(p, xs, ys)
        for _ in range(10):
            q = rng.random(2)
            mu, var = posterior(m, q)
            mu_o, var_o = dense_posterior_oracle(p, xs, ys, q)
            assert mu == pytest.approx(mu_o, abs=1e-8)
            assert var == pytest.approx(var_o, abs=1e-8)

    def test_interpolation_at_jitter_floor(self):
        # pin every training point at the same near-zero noise fantasy uses
        rng = np.random.default_rng(9)
        p = KernelParams(1.0, np.array([0.3]), NOISE_FLOOR)
        xs = rng.random((5, 1))
        ys = rng.normal(size=5)
        m = fit(p, xs, ys, point_noise=np.full(5, FANTASY_NOISE))
        for x, y in zip(xs, ys):
            mu, _ = posterior(m, x)
            assert mu == pytest.approx(y, abs=1e-5)

    def test_monotone_variance_under_new_points(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            d = int(rng.integers(1, 4))
            p = KernelParams(
                float(rng.uniform(0.3, 2.0)), rng.uniform(0.1, 1.0, size=d), 1e-4
            )
            n = int(rng.integers(1, 6))
            xs = rng.random((n, d))
            ys = rng.normal(size=n)
            m1 = fit(p, xs, ys)
            extra = rng.random(d)
            m2 = fit(p, np.vstack([xs, extra]), np.append(ys, rng.normal()))
            q = rng.random(d)
            assert m2.posterior(q)[1] <= m1.posterior(q)[1] + 1e-9


class TestLogMarginalLikelihood:
    def test_single_point_zero_y_closed_form(self):
        p = KernelParams(1.0, np.array([0.2]), 0.01)
        val = log_marginal_likelihood(p, np.array([[0.3]]), np.array([0.0]))
        expected = -0.5 * math.log(1.01) - 0.5 * math.log(2 * math.pi)
        assert val == pytest.approx(expected, abs=1e-12)

    def test_zero_y_dominates_nonzero(self):
        p = KernelParams(1.0, np.array([0.2]), 0.01)
        xs = np.array([[0.2], [0.8]])
        assert log_marginal_likelihood(p, xs, np.zeros(2)) >= log_marginal_likelihood(
            p, xs, np.array([1.0, -2.0])
        )

    def test_four_points_match_dense_oracle(self):
        rng = np.random.default_rng(2)
        p = KernelParams(1.2, np.array([0.25, 0.7]), 5e-3)
        xs = rng.random((4, 2))
        ys = rng.normal(size=4)
        assert log_marginal_likelihood(p, xs, ys) == pytest.approx(
            dense_lml_oracle(p, xs, ys), abs=1e-8
        )


class TestFitHyperparams:
    def test_recovers_lengthscale_in_most_seeds(self):
        # data drawn from a known RBF GP; the fitted lengthscale should land
        # within a factor 2 of the truth for at least 8 of 10 seeds
        true_ell = 0.3
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            xs = rng.random((40, 1))
            p_true = KernelParams(1.0, np.array([true_ell]), 1e-4)
            k = kernel_matrix(p_true, xs) + 1e-6 * np.eye(40)
            ys = np.linalg.cholesky(k) @ rng.normal(size=40)
            fitted = fit_hyperparams(xs, ys, seed=seed)
            ell = float(fitted.lengthscales[0])
            if true_ell / 2 <= ell <= true_ell * 2:
                hits += 1
        assert hits >= 8

    def test_constant_y_respects_noise_floor(self):
        xs = np.array([[0.2], [0.8]])
        params = fit_hyperparams(xs, np.array([1.0, 1.0]), seed=0)
        assert params.noise_variance >= NOISE_FLOOR

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        xs = rng.random((10, 2))
        ys = rng.normal(size=10)
        a = fit_hyperparams(xs, ys, seed=42)
        b = fit_hyperparams(xs, ys, seed=42)
        assert a.signal_variance == b.signal_variance
        assert np.array_equal(a.lengthscales, b.lengthscales)
        assert a.noise_variance == b.noise_variance


class TestFantasy:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.p = KernelParams(1.0, np.array([0.3]), 1e-3)
        self.xs = rng.random((6, 1))
        self.ys = rng.normal(size=6)
        self.model = fit(self.p, self.xs, self.ys)

    def test_mean_pinned_at_fantasy_point(self):
        x = np.array([0.42])
        mu0, _ = self.model.posterior(x)
        m2 = condition_on_fantasy(self.model, x, mu0)
        mu1, _ = m2.posterior(x)
        assert mu1 == pytest.approx(mu0, abs=1e-6)

    def test_variance_collapses_at_fantasy_point(self):
        x = np.array([0.42])
        mu0, _ = self.model.posterior(x)
        m2 = condition_on_fantasy(self.model, x, mu0)
        _, var1 = m2.posterior(x)
        assert var1 < 1e-4 * self.p.signal_variance

    def test_far_point_unchanged(self):
        x = np.array([0.42])
        far = np.array([0.999])
        # short lengthscale so 0.42 and 0.999 are effectively independent
        p = KernelParams(1.0, np.array([0.05]), 1e-3)
        model = fit(p, self.xs, self.ys)
        mu_far0, var_far0 = model.posterior(far)
        m2 = condition_on_fantasy(model, x, model.posterior(x)[0])
        mu_far1, var_far1 = m2.posterior(far)
        assert mu_far1 == pytest.approx(mu_far0, abs=1e-6)
        assert var_far1 == pytest.approx(var_far0, abs=1e-6)

    def test_original_model_untouched(self):
        x = np.array([0.42])
        before = self.model.posterior(x)
        condition_on_fantasy(self.model, x, 5.0)
        assert self.model.posterior(x) == before

    def test_prior_gp_fantasy(self):
        prior = PriorGp(default_params(1))
        m = prior.fantasize(np.array([0.5]), 0.7)
        mu, var = m.posterior([0.5])
        assert mu == pytest.approx(0.7, abs=1e-6)
        assert var < 1e-4
