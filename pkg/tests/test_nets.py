import numpy as np
import pytest

from conftest import make_linear_decoder, zeroed_params
from envae import autodiff as ad
from envae.autodiff import ShapeError, Tensor, finite_diff_check
from envae.errors import ConfigError
from envae.nets import (ModelArch, bind, decoder_forward, encoder_forward,
                        init_params)
from envae.sampling import Rng


class TestInitParams:
    def test_same_seed_identical(self, small_arch):
        p1 = init_params(small_arch, Rng(5))
        p2 = init_params(small_arch, Rng(5))
        assert p1.names() == p2.names()
        for name in p1.names():
            np.testing.assert_array_equal(p1.values[name], p2.values[name])

    def test_weight_scale(self):
        # empirical std within 20% of 1/sqrt(fan_in) at width 256
        arch = ModelArch(input_dim=256, latent_dim=4, encoder_hidden=(256,),
                         decoder_hidden=(256,))
        params = init_params(arch, Rng(1))
        w = params.values["enc.h00.w"]
        target = 1.0 / np.sqrt(256.0)
        assert abs(w.std() - target) <= 0.2 * target

    def test_biases_zero(self, small_arch):
        params = init_params(small_arch, Rng(2))
        for name, value in params.values.items():
            if name.endswith(".b"):
                np.testing.assert_array_equal(value, np.zeros_like(value))

    def test_sorted_iteration(self, small_arch):
        params = init_params(small_arch, Rng(3))
        assert params.names() == sorted(params.names())


class TestEncoderForward:
    def test_zero_params_give_standard_posterior(self, small_arch):
        params = zeroed_params(small_arch)
        x = Rng(1).uniform(0, 1, (3, small_arch.input_dim))
        post = encoder_forward(params, x)
        np.testing.assert_array_equal(post.mu.data, np.zeros((3, 2)))
        np.testing.assert_array_equal(post.logvar.data, np.zeros((3, 2)))

    def test_identical_rows_identical_posterior(self, small_arch):
        params = init_params(small_arch, Rng(4))
        row = Rng(2).uniform(0, 1, small_arch.input_dim)
        post = encoder_forward(params, np.stack([row, row]))
        np.testing.assert_array_equal(post.mu.data[0], post.mu.data[1])
        np.testing.assert_array_equal(post.logvar.data[0], post.logvar.data[1])

    def test_gradient_wrt_input(self, small_arch):
        params = init_params(small_arch, Rng(6))

        def f(x):
            post = encoder_forward(params, x)
            return ad.pow_norm(post.mu, 2.0) + ad.pow_norm(post.logvar, 2.0)

        report = finite_diff_check(f, Rng(7).standard_normal((2, small_arch.input_dim)))
        assert report.max_rel_error <= 1e-4

    def test_logvar_clamped(self):
        arch = ModelArch(input_dim=2, latent_dim=1, encoder_hidden=(),
                         decoder_hidden=(), output_activation="identity")
        params = zeroed_params(arch)
        params.values["enc.lv.w"][...] = 1e4
        post = encoder_forward(params, np.ones((1, 2)))
        assert post.logvar.data[0, 0] == 20.0

    def test_shape_mismatch(self, small_arch):
        params = init_params(small_arch, Rng(8))
        with pytest.raises(ShapeError):
            encoder_forward(params, np.ones((2, small_arch.input_dim + 1)))


class TestDecoderForward:
    def test_zero_params_sigmoid_give_half(self, small_arch):
        params = zeroed_params(small_arch)
        out = decoder_forward(params, np.ones((4, 2)))
        np.testing.assert_array_equal(out.data, np.full((4, small_arch.input_dim), 0.5))

    def test_linear_decoder_exact(self):
        a = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]])  # [m=2, n=3]
        b = np.array([0.1, 0.2, 0.3])
        params = make_linear_decoder(a, b)
        z = Rng(3).standard_normal((5, 2))
        np.testing.assert_array_equal(decoder_forward(params, z).data, z @ a + b)

    def test_repeat_decode_bit_identical(self, small_arch):
        params = init_params(small_arch, Rng(9))
        z = Rng(4).standard_normal((3, 2))
        first = decoder_forward(params, z).data
        second = decoder_forward(params, z).data
        np.testing.assert_array_equal(first, second)

    def test_param_gradients_small_archs(self):
        # encoder and decoder weights both pass central-difference checks
        for seed in range(3):
            arch = ModelArch(input_dim=3, latent_dim=2, encoder_hidden=(4,),
                             decoder_hidden=(4,), hidden_activation="tanh",
                             output_activation="sigmoid")
            params = init_params(arch, Rng(seed))
            x = Rng(seed + 100).uniform(0, 1, (2, 3))
            z = Rng(seed + 200).standard_normal((2, 2))
            for name in params.names():
                def f(t, _n=name):
                    from envae.nets import BoundParams
                    tensors = {n: (t if n == _n else Tensor.const(v))
                               for n, v in params.values.items()}
                    bp = BoundParams(arch=arch, tensors=tensors, nodes={})
                    post = encoder_forward(bp, x)
                    dec = decoder_forward(bp, z)
                    return (ad.pow_norm(post.mu, 2.0) + ad.pow_norm(post.logvar, 2.0)
                            + ad.pow_norm(dec, 2.0))
                report = finite_diff_check(f, params.values[name])
                assert report.max_rel_error <= 1e-4, name


class TestBind:
    def test_bound_leaves_receive_gradients(self, small_arch):
        from envae.autodiff import Tape, backward

        params = init_params(small_arch, Rng(10))
        tape = Tape()
        bound = bind(params, tape)
        out = decoder_forward(bound, np.ones((1, 2)))
        grads = backward(tape, ad.sum_(out))
        assert set(bound.nodes) == set(params.names())
        assert any(np.any(grads[node] != 0.0) for node in bound.nodes.values())


class TestModelArchValidation:
    def test_bad_dims(self):
        with pytest.raises(ConfigError):
            ModelArch(input_dim=0, latent_dim=2)

    def test_bad_activation(self):
        with pytest.raises(ConfigError):
            ModelArch(input_dim=2, latent_dim=2, hidden_activation="gelu")

    def test_roundtrip_dict(self, small_arch):
        assert ModelArch.from_dict(small_arch.to_dict()) == small_arch
