import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from envae.autodiff import ShapeError, Tensor, finite_diff_check
from envae.sampling import (GaussianPosterior, NoiseDraw, Rng, kl_diag_gaussian,
                            reparameterize, sample_standard_normal)


class TestRng:
    def test_determinism(self):
        a1 = sample_standard_normal(Rng(42), (2, 2)).eps.data
        rng = Rng(42)
        b1 = sample_standard_normal(rng, (2, 2)).eps.data
        b2 = sample_standard_normal(rng, (2, 2)).eps.data
        np.testing.assert_array_equal(a1, b1)
        assert not np.array_equal(b1, b2)
        rng2 = Rng(42)
        np.testing.assert_array_equal(sample_standard_normal(rng2, (2, 2)).eps.data, b1)
        np.testing.assert_array_equal(sample_standard_normal(rng2, (2, 2)).eps.data, b2)

    def test_moments(self):
        # CLT: at 1e5 draws, mean within 3/sqrt(1e5) ~ 0.01 and variance
        # within 3*sqrt(2/1e5) ~ 0.014 of (0, 1); the spec bound is 0.02
        draws = Rng(7).standard_normal(100_000)
        assert abs(draws.mean()) <= 0.02
        assert abs(draws.var() - 1.0) <= 0.02

    def test_split_streams_uncorrelated(self):
        a, b = Rng(3).split(2)
        xa = a.standard_normal(10_000)
        xb = b.standard_normal(10_000)
        assert abs(np.corrcoef(xa, xb)[0, 1]) < 0.05

    def test_split_differs_from_parent(self):
        parent = Rng(3)
        child = parent.split(1)[0]
        assert not np.array_equal(parent.standard_normal(16), child.standard_normal(16))

    def test_state_roundtrip(self):
        rng = Rng(11, stream=4)
        rng.standard_normal(5)
        clone = Rng.from_state(rng.state())
        np.testing.assert_array_equal(rng.standard_normal(7), clone.standard_normal(7))

    def test_empty_shape_rejected(self):
        with pytest.raises(ShapeError):
            sample_standard_normal(Rng(0), ())


class TestReparameterize:
    def test_zero_noise_gives_mu(self):
        post = GaussianPosterior(mu=Tensor.const([[1.0, -2.0]]),
                                 logvar=Tensor.const([[0.3, 0.7]]))
        z = reparameterize(post, NoiseDraw(eps=Tensor.const(np.zeros((1, 2)))))
        np.testing.assert_array_equal(z.data, [[1.0, -2.0]])

    def test_standard_posterior_returns_noise(self):
        eps = np.array([[0.4, -1.3]])
        post = GaussianPosterior(mu=Tensor.const(np.zeros((1, 2))),
                                 logvar=Tensor.const(np.zeros((1, 2))))
        z = reparameterize(post, NoiseDraw(eps=Tensor.const(eps)))
        np.testing.assert_array_equal(z.data, eps)

    def test_hand_value(self):
        # mu = 1, logvar = ln 4 so sigma = 2, eps = 0.5 -> z = 1 + 2 * 0.5 = 2
        post = GaussianPosterior(mu=Tensor.const([[1.0]]),
                                 logvar=Tensor.const([[math.log(4.0)]]))
        z = reparameterize(post, NoiseDraw(eps=Tensor.const([[0.5]])))
        assert z.data[0, 0] == pytest.approx(2.0, rel=1e-15)

    def test_shape_mismatch(self):
        post = GaussianPosterior(mu=Tensor.const(np.zeros((1, 2))),
                                 logvar=Tensor.const(np.zeros((1, 2))))
        with pytest.raises(ShapeError):
            reparameterize(post, NoiseDraw(eps=Tensor.const(np.zeros((2, 2)))))

    def test_gradients_with_frozen_noise(self):
        eps = np.random.default_rng(0).normal(size=(2, 3))

        def f(flat):
            from envae import autodiff as ad
            mu = ad.reshape(ad.index_axis0(ad.reshape(flat, (2, 2, 3)), 0), (2, 3))
            logvar = ad.reshape(ad.index_axis0(ad.reshape(flat, (2, 2, 3)), 1), (2, 3))
            post = GaussianPosterior(mu=mu, logvar=logvar)
            z = reparameterize(post, NoiseDraw(eps=Tensor.const(eps)))
            return ad.pow_norm(z, 2.0)

        x0 = np.random.default_rng(1).normal(size=(2, 2, 3))
        report = finite_diff_check(f, x0, h=1e-6)
        assert report.max_rel_error <= 1e-6

    def test_empirical_moments_match_posterior(self):
        # mean -> mu and variance -> exp(logvar) within 3 standard errors
        mu, logvar = 0.7, math.log(0.25)
        n = 100_000
        post = GaussianPosterior(mu=Tensor.const(np.full((n, 1), mu)),
                                 logvar=Tensor.const(np.full((n, 1), logvar)))
        z = reparameterize(post, NoiseDraw(eps=Tensor.const(Rng(5).standard_normal((n, 1)))))
        sigma2 = math.exp(logvar)
        se_mean = math.sqrt(sigma2 / n)
        se_var = sigma2 * math.sqrt(2.0 / (n - 1))
        assert abs(z.data.mean() - mu) <= 3 * se_mean
        assert abs(z.data.var(ddof=1) - sigma2) <= 3 * se_var


class TestKlDiagGaussian:
    def _kl(self, mu, logvar):
        post = GaussianPosterior(mu=Tensor.const(mu), logvar=Tensor.const(logvar))
        return kl_diag_gaussian(post).data

    def test_prior_equals_posterior(self):
        np.testing.assert_array_equal(self._kl([[0.0, 0.0]], [[0.0, 0.0]]), [0.0])

    def test_unit_mean_shift(self):
        # -1/2 (1 + 0 - 1 - 1) = 1/2
        np.testing.assert_allclose(self._kl([[1.0]], [[0.0]]), [0.5], rtol=1e-15)

    def test_additive_over_dimensions(self):
        np.testing.assert_allclose(self._kl([[1.0, 0.0]], [[0.0, 0.0]]), [0.5], rtol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
           hnp.arrays(np.float64, (3, 2), elements=st.floats(-8, 8)))
    def test_nonnegative(self, mu, logvar):
        kl = self._kl(mu, logvar)
        assert np.all(kl >= -1e-12)

    def test_gradient(self):
        def f(flat):
            from envae import autodiff as ad
            mu = ad.reshape(ad.index_axis0(ad.reshape(flat, (2, 1, 3)), 0), (1, 3))
            logvar = ad.reshape(ad.index_axis0(ad.reshape(flat, (2, 1, 3)), 1), (1, 3))
            return ad.sum_(kl_diag_gaussian(GaussianPosterior(mu=mu, logvar=logvar)))

        report = finite_diff_check(f, np.random.default_rng(2).normal(size=(2, 1, 3)))
        assert report.max_rel_error <= 1e-6
