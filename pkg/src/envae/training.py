"""Adam optimizer, minibatch training loop, step trace, checkpoint wiring.

The loop is single-threaded and bitwise deterministic given (seed, config,
dataset): one PCG64 stream drives parameter init, epoch shuffles, and all
noise draws, in a fixed call order, and its state is persisted in the
checkpoint so a resumed run replays the exact continuation of a straight
run.

Setting the environment variable ENVAE_THREADS > 1 decodes the EnVAE
sample batch in parallel chunks. Forward values are unchanged up to BLAS
blocking, but gradient accumulation order across chunks is interleaved, so
bitwise determinism is relaxed to a relative loss deviation of at most
about 1e-9 per step.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Tape, backward
from .checkpoint import Checkpoint
from .errors import ConfigError
from .losses import LossConfig, compute_loss
from .nets import ModelArch, Params, bind, init_params
from .sampling import Rng


class ContractViolation(RuntimeError):
    """Gradients and parameters fell out of alignment."""


class TrainingDiverged(RuntimeError):
    """The loss went non-finite; carries step diagnostics."""

    def __init__(self, step: int, epoch: int, detail: str):
        super().__init__(f"non-finite loss at step {step} (epoch {epoch}): {detail}")
        self.step = step
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    loss: LossConfig
    arch: ModelArch
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    log_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not (0.0 <= b < 1.0):
                raise ConfigError("adam betas must lie in [0, 1)")
        if self.log_every < 1:
            raise ConfigError("log_every must be positive")
        self.loss.validate()
        return self


@dataclass
class StepRecord:
    step: int
    epoch: int
    total: float
    recon: float
    dispersion: float
    kl: float
    ms: float


@dataclass
class TrainTrace:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_ms: list[float] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,epoch,total,recon,dispersion,kl,ms\n")
            for r in self.steps:
                fh.write(f"{r.step},{r.epoch},{r.total!r},{r.recon!r},"
                         f"{r.dispersion!r},{r.kl!r},{r.ms!r}\n")

    def median_epoch_ms(self, last: int = 3) -> float:
        """Median wall-clock per epoch over the trailing `last` epochs."""
        tail = self.epoch_ms[-last:]
        return float(np.median(tail)) if tail else 0.0


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Params) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in params.values.items()},
                   v={k: np.zeros_like(a) for k, a in params.values.items()})


def adam_step(params: Params, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float, beta2: float, eps: float) -> tuple[Params, AdamState]:
    """Standard Adam with bias correction; updates params and state in place."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, value in params.values.items():
        if name not in grads:
            raise ContractViolation(f"missing gradient for parameter {name!r}")
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def _workers_from_env() -> int:
    try:
        return max(1, int(os.environ.get("ENVAE_THREADS", "1")))
    except ValueError:
        return 1


def train(config: TrainConfig, dataset, resume: Checkpoint | None = None,
          workers: int | None = None) -> tuple[Checkpoint, TrainTrace]:
    """Run the configured variant over the dataset; returns checkpoint and trace.

    ``dataset`` is anything with an ``x`` array of shape [N, input_dim].
    With ``resume`` the saved parameters, optimizer moments, rng state and
    epoch counter continue exactly where the checkpoint left off.
    """
    config.validate()
    x = np.asarray(dataset.x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.arch.input_dim:
        raise ConfigError(f"dataset shape {x.shape} does not match input_dim "
                          f"{config.arch.input_dim}")
    if workers is None:
        workers = _workers_from_env()

    if resume is None:
        rng = Rng(config.seed)
        params = init_params(config.arch, rng)
        state = AdamState.zeros(params)
        step, start_epoch = 0, 0
    else:
        if resume.arch != config.arch:
            raise ConfigError("checkpoint architecture does not match the config")
        rng = Rng.from_state(resume.rng_state)
        params = resume.to_params()
        state = AdamState(m={k: v.copy() for k, v in resume.adam_m.items()},
                          v={k: v.copy() for k, v in resume.adam_v.items()},
                          t=resume.adam_t)
        step, start_epoch = resume.step, resume.epoch

    n = x.shape[0]
    trace = TrainTrace()
    for epoch in range(start_epoch, config.epochs):
        epoch_t0 = time.perf_counter()
        perm = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = x[perm[lo: lo + config.batch_size]]
            t0 = time.perf_counter()
            tape = Tape()
            bound = bind(params, tape)
            try:
                terms = compute_loss(bound, batch, config.loss, rng, workers=workers)
            except NonFiniteError as exc:
                raise TrainingDiverged(step + 1, epoch, str(exc)) from exc
            total = terms.total.item()
            if not math.isfinite(total):
                raise TrainingDiverged(
                    step + 1, epoch,
                    f"total={total} recon={terms.recon} dispersion={terms.dispersion} "
                    f"kl={terms.kl}")
            grads = backward(tape, terms.total)
            by_name = {name: grads[bound.nodes[name]] for name in params.values}
            adam_step(params, by_name, state, config.learning_rate,
                      config.adam_beta1, config.adam_beta2, config.adam_eps)
            step += 1
            ms = (time.perf_counter() - t0) * 1e3
            if step % config.log_every == 0:
                trace.steps.append(StepRecord(step, epoch, total, terms.recon,
                                              terms.dispersion, terms.kl, ms))
        trace.epoch_ms.append((time.perf_counter() - epoch_t0) * 1e3)

    ckpt = Checkpoint(
        version=1,
        arch=config.arch,
        params={k: v.copy() for k, v in params.values.items()},
        adam_m={k: v.copy() for k, v in state.m.items()},
        adam_v={k: v.copy() for k, v in state.v.items()},
        adam_t=state.t,
        step=step,
        epoch=config.epochs,
        rng_state=rng.state(),
        loss=config.loss,
    )
    return ckpt, trace
