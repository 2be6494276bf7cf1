import math

import numpy as np
import pytest
from scipy.special import logit
from scipy.stats import norm

from cjsub.likelihood import history_loglik
from cjsub.mcmc import (ChainConfig, InitializationError, draw_theta_from_prior,
                        effective_sample_size, geweke_joint_check, prior_logpdf,
                        run_subposterior_mcmc)
from cjsub.model import (Design, FixedValue, ModelSpec, Theta, UniformPrior,
                         param_names, theta_from_vector)
from cjsub.simulate import default_releases, simulate_dataset

TRUTH = Theta(alpha=np.array([logit(0.65)]), p=np.array([0.13]), sigma_eps=0.5)

SMOKE = ChainConfig(chains=1, iterations=250, burn_in=50, thin=2, seed=4)


@pytest.fixture(scope="module")
def small_data():
    spec = ModelSpec.constant(5)
    return spec, simulate_dataset(spec, TRUTH, default_releases(80, 5), seed=2)


class TestChainConfig:
    def test_burn_in_bound(self):
        with pytest.raises(ValueError, match="burn_in"):
            ChainConfig(iterations=100, burn_in=100)

    def test_thin_bound(self):
        with pytest.raises(ValueError, match="thin"):
            ChainConfig(thin=0)

    def test_minimum_retained(self):
        with pytest.raises(ValueError, match="100 retained"):
            ChainConfig(iterations=600, burn_in=500, thin=2)

    def test_digest_distinguishes_seeds(self):
        assert ChainConfig(seed=1).digest() != ChainConfig(seed=2).digest()


class TestPriorLogpdf:
    def test_constant_model_value(self):
        # alpha ~ N(0, var 10), p ~ U(0,1) (density 1), sigma ~ U(0,10).
        spec = ModelSpec.constant(5)
        theta = Theta(alpha=np.array([0.62]), p=np.array([0.13]), sigma_eps=0.5)
        want = norm.logpdf(0.62, 0.0, math.sqrt(10.0)) + 0.0 - math.log(10.0)
        assert prior_logpdf(theta, spec) == pytest.approx(want, abs=1e-12)

    def test_sigma_outside_support(self):
        spec = ModelSpec.constant(
            5, sigma_eps_prior=UniformPrior(0.0, 2.0))
        theta = Theta(alpha=np.array([0.0]), p=np.array([0.5]), sigma_eps=2.5)
        assert prior_logpdf(theta, spec) == -np.inf

    def test_p_boundary_excluded(self):
        spec = ModelSpec.constant(5)
        theta = Theta(alpha=np.array([0.0]), p=np.array([1.0]), sigma_eps=0.5)
        assert prior_logpdf(theta, spec) == -np.inf

    def test_fixed_sigma_contributes_nothing(self):
        spec = ModelSpec.constant(5, sigma_eps_prior=FixedValue(0.5))
        theta = Theta(alpha=np.array([0.0]), p=np.array([0.5]), sigma_eps=0.5)
        want = norm.logpdf(0.0, 0.0, math.sqrt(10.0))
        assert prior_logpdf(theta, spec) == pytest.approx(want, abs=1e-12)

    def test_hierarchical_time_effects(self):
        spec = ModelSpec.age_time(5)
        beta = np.array([0.1, -0.2, 0.3, 0.0])
        theta = Theta(alpha=np.array([0.0, 0.2, 0.4, 0.6]),
                      p=np.array([0.1, 0.2, 0.3, 0.4]), sigma_eps=0.5,
                      beta=beta, mu_beta=0.1, sigma_beta=0.7)
        want = (norm.logpdf([0.2, 0.4, 0.6], 0.0, 2.0).sum()   # var 4
                - math.log(2.0)                                 # sigma_eps U(0,2)
                - math.log(10.0)                                # sigma_beta U(0,10)
                + norm.logpdf(0.1, 0.0, math.sqrt(10.0))        # mu_beta
                + norm.logpdf(beta, 0.1, 0.7).sum())            # beta | mu, sd
        assert prior_logpdf(theta, spec) == pytest.approx(want, abs=1e-12)


class TestDrawFromPrior:
    def test_respects_supports(self):
        spec = ModelSpec.constant(5, sigma_eps_prior=UniformPrior(0.0, 2.0))
        rng = np.random.default_rng(0)
        for _ in range(50):
            t = draw_theta_from_prior(spec, rng)
            t.validate(spec)
            assert 0.0 <= t.p[0] <= 1.0
            assert 0.0 <= t.sigma_eps <= 2.0

    def test_fixed_sigma(self):
        spec = ModelSpec.constant(5, sigma_eps_prior=FixedValue(0.3))
        t = draw_theta_from_prior(spec, np.random.default_rng(0))
        assert t.sigma_eps == 0.3

    def test_age_model_pins_first_class(self):
        spec = ModelSpec.age_time(5)
        t = draw_theta_from_prior(spec, np.random.default_rng(0))
        t.validate(spec)
        assert t.alpha[0] == 0.0


class TestRunMcmc:
    def test_shapes_and_names(self, small_data):
        spec, data = small_data
        draws = run_subposterior_mcmc(data, spec, SMOKE)
        assert draws.names == param_names(spec) == ["alpha", "p", "sigma_eps"]
        assert draws.values.shape == (100, 3)
        assert draws.logpost.shape == (100,)
        assert np.all(np.isfinite(draws.values))
        assert np.all(np.isfinite(draws.logpost))
        assert draws.ess.shape == (3,)

    def test_bitwise_determinism(self, small_data):
        spec, data = small_data
        a = run_subposterior_mcmc(data, spec, SMOKE)
        b = run_subposterior_mcmc(data, spec, SMOKE)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.logpost, b.logpost)

    def test_stream_path_changes_draws(self, small_data):
        spec, data = small_data
        a = run_subposterior_mcmc(data, spec, SMOKE, stream_path=(1,))
        b = run_subposterior_mcmc(data, spec, SMOKE, stream_path=(2,))
        assert not np.array_equal(a.values, b.values)

    def test_logpost_recompute_invariant(self, small_data):
        spec, data = small_data
        draws = run_subposterior_mcmc(data, spec, SMOKE,
                                      keep_random_effects=True)
        design = Design.from_dataset(data, spec, expand=True)
        for k in range(0, draws.K, 17):
            theta = theta_from_vector(draws.values[k], spec)
            eps = draws.eps_draws[k]
            lp = (history_loglik(theta, design, eps).sum()
                  + prior_logpdf(theta, spec)
                  + norm.logpdf(eps, 0.0, theta.sigma_eps).sum())
            assert lp == pytest.approx(draws.logpost[k], abs=1e-9)

    def test_without_random_effect(self, small_data):
        _, data = small_data
        spec = ModelSpec.constant(5, random_effect=False)
        draws = run_subposterior_mcmc(data, spec, SMOKE)
        assert np.all(draws.column("sigma_eps") == 0.0)

    def test_empty_dataset_rejected(self):
        from cjsub.data import CompressedDataset
        spec = ModelSpec.constant(5)
        with pytest.raises(ValueError, match="empty"):
            run_subposterior_mcmc(CompressedDataset.empty(5), spec, SMOKE)

    def test_impossible_prior_raises(self, small_data):
        spec, data = small_data
        with pytest.raises(InitializationError):
            run_subposterior_mcmc(data, spec, SMOKE,
                                  prior_fn=lambda t, s: -np.inf)


class TestEffectiveSampleSize:
    def test_iid_near_n(self):
        x = np.random.default_rng(0).standard_normal(2000)
        assert effective_sample_size(x) > 1200

    def test_constant_series(self):
        assert effective_sample_size(np.ones(50)) == 50.0

    def test_correlated_much_smaller(self):
        rng = np.random.default_rng(1)
        x = np.empty(2000)
        x[0] = 0.0
        for i in range(1, 2000):
            x[i] = 0.99 * x[i - 1] + 0.1 * rng.standard_normal()
        assert effective_sample_size(x) < 200


class TestGewekeCheck:
    def test_rejects_zero_cycles(self):
        with pytest.raises(ValueError, match="insufficient cycles"):
            geweke_joint_check(ModelSpec.constant(4), 0)

    def test_smoke_returns_all_moments(self):
        spec = ModelSpec.constant(4, sigma_eps_prior=UniformPrior(0.0, 2.0))
        z = geweke_joint_check(spec, cycles=25, n_individuals=15, seed=1)
        names = param_names(spec)
        assert set(z) == set(names) | {f"{n}^2" for n in names}
        assert all(np.isfinite(v) for v in z.values())
