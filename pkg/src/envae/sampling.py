"""Seeded randomness, Gaussian reparameterization, and the diagonal-Gaussian KL.

The prior over latents is fixed to N(0, I) throughout; posteriors are
diagonal Gaussians described by per-example mean and log-variance tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class Rng:
    """Deterministic PCG64 stream addressed by (seed, stream key).

    The same seed, stream and call sequence reproduce the same values
    within a build. ``split`` derives child streams via seed-sequence
    spawning without consuming parent state.
    """

    def __init__(self, seed: int, stream: int = 0, _key=None, _gen=None):
        self.seed = int(seed)
        self._key: tuple[int, ...] = tuple(_key) if _key is not None else (int(stream),)
        if _gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
            _gen = np.random.Generator(np.random.PCG64(ss))
        self._gen = _gen

    @property
    def stream(self) -> int:
        return self._key[0]

    def standard_normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def split(self, k: int) -> list["Rng"]:
        """k statistically independent child streams; parent is untouched."""
        return [Rng(self.seed, _key=self._key + (i,)) for i in range(k)]

    def state(self) -> dict:
        return {"seed": self.seed, "key": list(self._key), "pcg64": self._gen.bit_generator.state}

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], _key=tuple(state["key"]))
        rng._gen.bit_generator.state = state["pcg64"]
        return rng


@dataclass
class GaussianPosterior:
    """Per-example mean and log-variance of a diagonal Gaussian posterior."""

    mu: Tensor
    logvar: Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise ShapeError(
                f"posterior mu {self.mu.shape} and logvar {self.logvar.shape} differ"
            )


@dataclass
class NoiseDraw:
    """Standard-normal variates, shaped to match the posterior they perturb."""

    eps: Tensor


def sample_standard_normal(rng: Rng, shape) -> NoiseDraw:
    if not shape:
        raise ShapeError("noise shape must be non-empty")
    return NoiseDraw(eps=Tensor.const(rng.standard_normal(tuple(shape))))


def reparameterize(post: GaussianPosterior, eps: NoiseDraw | Tensor) -> Tensor:
    """z = mu + exp(logvar / 2) * eps, differentiable in mu and logvar."""
    eps_t = eps.eps if isinstance(eps, NoiseDraw) else eps
    if eps_t.shape != post.mu.shape:
        raise ShapeError(f"noise shape {eps_t.shape} does not match posterior {post.mu.shape}")
    return post.mu + ad.exp(post.logvar * 0.5) * eps_t


def kl_diag_gaussian(post: GaussianPosterior) -> Tensor:
    """Per-example KL(q || N(0, I)) = -1/2 sum_k (1 + logvar - mu^2 - exp(logvar))."""
    inner = 1.0 + post.logvar - post.mu * post.mu - ad.exp(post.logvar)
    return ad.sum_(inner, axis=-1) * -0.5
