"""Training objectives.

Four variants share the encoder/KL plumbing and differ in the
reconstruction term:

* ``envae``   - Monte-Carlo energy score over M decoded posterior draws:
  (1/M) sum_i ||x*_i - x||^beta
  - 1/(2 M (M-1)) sum_{i != j} ||x*_i - x*_j||^beta,
  plus alpha times the KL term.
* ``fenvae``  - single-sample surrogate: with z* = mu + sigma e, the mean
  loss ||g(z*) - x||^beta minus the uncertainty loss
  (1/2) ||g(mu + sqrt(2) (z* - mu)) - g(mu)||^beta, plus alpha KL.
  Exactly three decoder evaluations per example.
* ``vanilla`` - squared-error reconstruction of one posterior draw plus
  alpha KL (the Gaussian-likelihood ELBO up to constants).
* ``l1``      - absolute-error reconstruction of one posterior draw plus
  alpha KL.

All losses are batch means over per-example terms and are differentiable
with respect to every parameter via the tape.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .nets import BoundParams, Params, decoder_forward, encoder_forward, _bound
from .sampling import GaussianPosterior, Rng, kl_diag_gaussian

VARIANTS = ("vanilla", "l1", "envae", "fenvae")

_SQRT2 = math.sqrt(2.0)


@dataclass
class LossConfig:
    variant: str = "envae"
    beta: float = 1.0
    alpha: float = 1.0
    m_samples: int = 50
    share_noise: bool = True

    def validate(self) -> "LossConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}")
        if not (0.0 < self.beta <= 2.0):
            raise ConfigError(f"beta must lie in (0, 2], got {self.beta}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.variant == "envae" and self.m_samples < 2:
            raise ConfigError("m_samples must be >= 2: pairwise term undefined")
        return self

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "beta": self.beta,
            "alpha": self.alpha,
            "m_samples": self.m_samples,
            "share_noise": self.share_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d).validate()


@dataclass
class DecodedSamples:
    """Stacked decoder outputs [M, B, n] representing the predictive distribution."""

    samples: Tensor

    @property
    def m(self) -> int:
        return self.samples.shape[0]


@dataclass
class LossTerms:
    """Scalar objective plus its logged decomposition.

    ``total`` stays on the tape; the floats satisfy
    total = recon - dispersion + alpha * kl.
    """

    total: Tensor
    recon: float
    dispersion: float
    kl: float


def _energy_terms(samples: Tensor, x: Tensor, beta: float) -> tuple[Tensor, Tensor]:
    """Per-example accuracy and dispersion terms of the M-sample energy score."""
    m = samples.shape[0]
    t1 = ad.mean_(ad.pow_norm(samples - x, beta, axis=-1), axis=0)
    # sum over unordered pairs i < j equals half the sum over i != j
    t2 = ad.pairwise_pow_norm_sum(samples, beta) * (1.0 / (m * (m - 1)))
    return t1, t2


def energy_score_mc(samples: DecodedSamples, x, beta: float) -> Tensor:
    """Per-example Monte-Carlo energy score of the decoded sample set."""
    if samples.m < 2:
        raise ConfigError("m_samples must be >= 2: pairwise term undefined")
    t1, t2 = _energy_terms(samples.samples, ad._wrap(x), beta)
    return t1 - t2


def _posterior_kl(model: BoundParams, x: Tensor) -> tuple[GaussianPosterior, Tensor]:
    post = encoder_forward(model, x)
    return post, kl_diag_gaussian(post)


def _decode_latents(model: BoundParams, post: GaussianPosterior, eps, workers: int) -> Tensor:
    """Decode z = mu + sigma * eps for stacked noise eps [M, B, m] -> [M, B, n].

    With workers > 1 the M-sample batch is decoded in chunks on a thread
    pool (values identical up to floating-point summation order; see the
    training module for the relaxed-determinism contract).
    """
    m_samples, batch, latent = eps.shape
    sigma = ad.exp(post.logvar * 0.5)

    def chunk(lo: int, hi: int) -> Tensor:
        z = post.mu + sigma * Tensor.const(eps[lo:hi])
        return decoder_forward(model, ad.reshape(z, ((hi - lo) * batch, latent)))

    if workers <= 1 or m_samples < 2 * workers:
        decoded = chunk(0, m_samples)
    else:
        bounds = [int(round(i * m_samples / workers)) for i in range(workers + 1)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(chunk, lo, hi) for lo, hi in zip(bounds, bounds[1:])]
            decoded = ad.concat([f.result() for f in futures], axis=0)
    return ad.reshape(decoded, (m_samples, batch, model.arch.input_dim))


def envae_loss(model: Params | BoundParams, x, cfg: LossConfig, rng: Rng,
               workers: int = 1) -> LossTerms:
    """Batch mean of the M-sample energy score plus alpha times the KL term."""
    cfg.validate()
    model = _bound(model)
    xt = ad._wrap(x)
    post, kl = _posterior_kl(model, xt)
    eps = rng.standard_normal((cfg.m_samples, xt.shape[0], model.arch.latent_dim))
    decoded = _decode_latents(model, post, eps, workers)
    t1, t2 = _energy_terms(decoded, xt, cfg.beta)
    return _reduce(t1, t2, kl, cfg.alpha)


def fenvae_loss(model: Params | BoundParams, x, cfg: LossConfig, rng: Rng) -> LossTerms:
    """Single-sample surrogate: mean loss minus uncertainty loss plus alpha KL.

    The perturbed decode reuses the reconstruction noise when
    ``share_noise`` is set (the default); otherwise a fresh draw builds the
    uncertainty term.
    """
    cfg.validate()
    model = _bound(model)
    xt = ad._wrap(x)
    post, kl = _posterior_kl(model, xt)
    mean_term, unc_term = _fenvae_example_terms(model, post, xt, cfg, rng)
    return _reduce(mean_term, unc_term, kl, cfg.alpha)


def _fenvae_example_terms(model: BoundParams, post: GaussianPosterior, xt: Tensor,
                          cfg: LossConfig, rng: Rng) -> tuple[Tensor, Tensor]:
    """Per-example mean and uncertainty terms; three decodes, batched as one."""
    batch, latent = post.mu.shape
    sigma = ad.exp(post.logvar * 0.5)
    eps = Tensor.const(rng.standard_normal((batch, latent)))
    z_star = post.mu + sigma * eps
    if cfg.share_noise:
        perturbed = post.mu + (z_star - post.mu) * _SQRT2
    else:
        eps2 = Tensor.const(rng.standard_normal((batch, latent)))
        perturbed = post.mu + sigma * eps2 * _SQRT2
    stacked = ad.concat([z_star, perturbed, post.mu], axis=0)
    decoded = ad.reshape(decoder_forward(model, stacked), (3, batch, model.arch.input_dim))
    y_star = ad.index_axis0(decoded, 0)
    y_pert = ad.index_axis0(decoded, 1)
    y_mu = ad.index_axis0(decoded, 2)
    mean_term = ad.pow_norm(y_star - xt, cfg.beta, axis=-1)
    unc_term = ad.pow_norm(y_pert - y_mu, cfg.beta, axis=-1) * 0.5
    return mean_term, unc_term


def vanilla_elbo_loss(model: Params | BoundParams, x, cfg: LossConfig, rng: Rng) -> LossTerms:
    """Squared-error reconstruction of one posterior draw plus alpha KL."""
    cfg.validate()
    model = _bound(model)
    xt = ad._wrap(x)
    post, kl = _posterior_kl(model, xt)
    eps = Tensor.const(rng.standard_normal(post.mu.shape))
    decoded = decoder_forward(model, post.mu + ad.exp(post.logvar * 0.5) * eps)
    recon = ad.pow_norm(decoded - xt, 2.0, axis=-1)
    return _reduce(recon, None, kl, cfg.alpha)


def l1_loss(model: Params | BoundParams, x, cfg: LossConfig, rng: Rng) -> LossTerms:
    """Absolute-error reconstruction of one posterior draw plus alpha KL."""
    cfg.validate()
    model = _bound(model)
    xt = ad._wrap(x)
    post, kl = _posterior_kl(model, xt)
    eps = Tensor.const(rng.standard_normal(post.mu.shape))
    decoded = decoder_forward(model, post.mu + ad.exp(post.logvar * 0.5) * eps)
    recon = ad.sum_(ad.abs_(decoded - xt), axis=-1)
    return _reduce(recon, None, kl, cfg.alpha)


def _reduce(recon: Tensor, dispersion: Tensor | None, kl: Tensor, alpha: float) -> LossTerms:
    recon_mean = ad.mean_(recon)
    kl_mean = ad.mean_(kl)
    if dispersion is None:
        total = recon_mean + kl_mean * alpha
        disp_value = 0.0
    else:
        disp_mean = ad.mean_(dispersion)
        total = recon_mean - disp_mean + kl_mean * alpha
        disp_value = disp_mean.item()
    return LossTerms(total=total, recon=recon_mean.item(), dispersion=disp_value,
                     kl=kl_mean.item())


def compute_loss(model: Params | BoundParams, x, cfg: LossConfig, rng: Rng,
                 workers: int = 1) -> LossTerms:
    """Dispatch on cfg.variant."""
    cfg.validate()
    if cfg.variant == "envae":
        return envae_loss(model, x, cfg, rng, workers=workers)
    if cfg.variant == "fenvae":
        return fenvae_loss(model, x, cfg, rng)
    if cfg.variant == "vanilla":
        return vanilla_elbo_loss(model, x, cfg, rng)
    return l1_loss(model, x, cfg, rng)
