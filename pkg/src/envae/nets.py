"""MLP encoder/decoder pair.

The encoder maps data to a diagonal Gaussian posterior (shared trunk, two
linear heads); the decoder is a deterministic map from latent to data
space, so repeated decodes of the same point are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor
from .errors import ConfigError
from .sampling import GaussianPosterior, Rng

LOGVAR_CLAMP = 20.0  # keeps exp(logvar) inside float64 range

_HIDDEN_ACTS = {"tanh": ad.tanh, "relu": ad.relu}
_OUTPUT_ACTS = {"sigmoid": ad.sigmoid, "identity": lambda t: t}


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    latent_dim: int
    encoder_hidden: tuple[int, ...] = (128, 128)
    decoder_hidden: tuple[int, ...] = (128, 128)
    hidden_activation: str = "tanh"
    output_activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(self.decoder_hidden))
        if self.input_dim < 1 or self.latent_dim < 1:
            raise ConfigError("input_dim and latent_dim must be at least 1")
        if any(w < 1 for w in self.encoder_hidden + self.decoder_hidden):
            raise ConfigError("hidden widths must be positive")
        if self.hidden_activation not in _HIDDEN_ACTS:
            raise ConfigError(f"unknown hidden_activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT_ACTS:
            raise ConfigError(f"unknown output_activation {self.output_activation!r}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "latent_dim": self.latent_dim,
            "encoder_hidden": list(self.encoder_hidden),
            "decoder_hidden": list(self.decoder_hidden),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArch":
        return cls(
            input_dim=d["input_dim"],
            latent_dim=d["latent_dim"],
            encoder_hidden=tuple(d["encoder_hidden"]),
            decoder_hidden=tuple(d["decoder_hidden"]),
            hidden_activation=d["hidden_activation"],
            output_activation=d["output_activation"],
        )


class Params:
    """Named weight/bias arrays, iterated in sorted-name order.

    Encoder entries are prefixed ``enc.``, decoder entries ``dec.``.
    """

    def __init__(self, arch: ModelArch, values: dict[str, np.ndarray]):
        self.arch = arch
        self.values = {name: np.asarray(values[name], dtype=np.float64) for name in sorted(values)}

    def names(self) -> list[str]:
        return list(self.values)

    def copy(self) -> "Params":
        return Params(self.arch, {k: v.copy() for k, v in self.values.items()})


@dataclass
class BoundParams:
    """Params viewed as tensors, optionally recorded as leaves on a tape."""

    arch: ModelArch
    tensors: dict[str, Tensor]
    nodes: dict[str, int] = field(default_factory=dict)


def bind(params: Params, tape: Tape | None = None) -> BoundParams:
    """Expose params to the tensor ops; with a tape, each entry becomes a leaf."""
    tensors: dict[str, Tensor] = {}
    nodes: dict[str, int] = {}
    for name, value in params.values.items():
        if tape is None:
            tensors[name] = Tensor.const(value)
        else:
            leaf = tape.leaf(value)
            tensors[name] = leaf
            nodes[name] = leaf.node
    return BoundParams(arch=params.arch, tensors=tensors, nodes=nodes)


def _encoder_layer_dims(arch: ModelArch) -> list[tuple[str, int, int]]:
    dims = [arch.input_dim, *arch.encoder_hidden]
    layers = [(f"enc.h{i:02d}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    layers.append(("enc.mu", dims[-1], arch.latent_dim))
    layers.append(("enc.lv", dims[-1], arch.latent_dim))
    return layers


def _decoder_layer_dims(arch: ModelArch) -> list[tuple[str, int, int]]:
    dims = [arch.latent_dim, *arch.decoder_hidden]
    layers = [(f"dec.h{i:02d}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    layers.append(("dec.out", dims[-1], arch.input_dim))
    return layers


def init_params(arch: ModelArch, rng: Rng) -> Params:
    """Weights ~ N(0, 1/fan_in), biases zero; deterministic per rng state."""
    values: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in _encoder_layer_dims(arch) + _decoder_layer_dims(arch):
        values[name + ".w"] = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
        values[name + ".b"] = np.zeros(fan_out)
    return Params(arch, values)


def _bound(model: Params | BoundParams) -> BoundParams:
    return model if isinstance(model, BoundParams) else bind(model)


def _as_batch(x, dim: int, what: str) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor.const(x)
    if t.data.ndim != 2 or t.shape[1] != dim:
        raise ShapeError(f"{what} expects shape [B, {dim}], got {t.shape}")
    return t


def encoder_forward(model: Params | BoundParams, x) -> GaussianPosterior:
    """Posterior heads from a shared trunk; logvar clamped to +-LOGVAR_CLAMP."""
    bp = _bound(model)
    arch = bp.arch
    h = _as_batch(x, arch.input_dim, "encoder_forward")
    act = _HIDDEN_ACTS[arch.hidden_activation]
    for i in range(len(arch.encoder_hidden)):
        name = f"enc.h{i:02d}"
        h = act(h @ bp.tensors[name + ".w"] + bp.tensors[name + ".b"])
    mu = h @ bp.tensors["enc.mu.w"] + bp.tensors["enc.mu.b"]
    logvar = ad.clamp(h @ bp.tensors["enc.lv.w"] + bp.tensors["enc.lv.b"],
                      -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return GaussianPosterior(mu=mu, logvar=logvar)


def decoder_forward(model: Params | BoundParams, z) -> Tensor:
    """Deterministic decode; a pure function of (params, z)."""
    bp = _bound(model)
    arch = bp.arch
    h = _as_batch(z, arch.latent_dim, "decoder_forward")
    act = _HIDDEN_ACTS[arch.hidden_activation]
    for i in range(len(arch.decoder_hidden)):
        name = f"dec.h{i:02d}"
        h = act(h @ bp.tensors[name + ".w"] + bp.tensors[name + ".b"])
    out = h @ bp.tensors["dec.out.w"] + bp.tensors["dec.out.b"]
    return _OUTPUT_ACTS[arch.output_activation](out)
