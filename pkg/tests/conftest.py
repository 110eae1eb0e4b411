import numpy as np
import pytest

from envae.autodiff import Tensor, finite_diff_check
from envae.losses import compute_loss
from envae.nets import BoundParams, ModelArch, Params, init_params
from envae.sampling import Rng


@pytest.fixture
def small_arch() -> ModelArch:
    return ModelArch(input_dim=4, latent_dim=2, encoder_hidden=(5,), decoder_hidden=(5,),
                     hidden_activation="tanh", output_activation="sigmoid")


def make_linear_decoder(a: np.ndarray, b: np.ndarray, encoder_hidden=(6,),
                        hidden="tanh", enc_seed=11) -> Params:
    """Params whose decoder is exactly g(z) = z @ a + b (identity output, no hidden)."""
    m, n = a.shape
    arch = ModelArch(input_dim=n, latent_dim=m, encoder_hidden=encoder_hidden,
                     decoder_hidden=(), hidden_activation=hidden,
                     output_activation="identity")
    params = init_params(arch, Rng(enc_seed))
    params.values["dec.out.w"] = np.asarray(a, dtype=np.float64)
    params.values["dec.out.b"] = np.asarray(b, dtype=np.float64)
    return params


def zeroed_params(arch: ModelArch) -> Params:
    params = init_params(arch, Rng(0))
    for v in params.values.values():
        v[...] = 0.0
    return params


class ZeroRng:
    """Stub noise source: all draws are zero (forces eps = 0 paths)."""

    def standard_normal(self, shape=None):
        return np.zeros(shape if shape is not None else ())


class FixedRng:
    """Stub noise source replaying one fixed array per draw."""

    def __init__(self, *draws):
        self._draws = list(draws)

    def standard_normal(self, shape=None):
        out = np.asarray(self._draws.pop(0), dtype=np.float64)
        assert out.shape == tuple(shape)
        return out


def loss_grad_report(params: Params, x, cfg, noise_seed: int, h: float = 1e-6):
    """Worst finite-difference report over every parameter tensor.

    Each check re-seeds the noise so the loss is a deterministic function
    of the parameter being varied.
    """
    arch = params.arch
    worst = None
    for name in params.names():
        def f(t, _name=name):
            tensors = {n: (t if n == _name else Tensor.const(v))
                       for n, v in params.values.items()}
            bound = BoundParams(arch=arch, tensors=tensors, nodes={})
            return compute_loss(bound, x, cfg, Rng(noise_seed)).total
        report = finite_diff_check(f, params.values[name], h=h)
        if worst is None or report.max_rel_error > worst.max_rel_error:
            worst = report
    return worst
