"""Run configuration: JSON documents with defaults, validation, and builders.

A document has five sections (data, arch, loss, train, eval). Unknown keys
are rejected; missing keys take the documented defaults below. The fully
resolved document is echoed into every output directory so a run can be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import copy
import json

from .data import Dataset, gen_bars, gen_gmm2d, load_idx
from .errors import ConfigError
from .losses import LossConfig
from .nets import ModelArch
from .training import TrainConfig

_DATA_DEFAULTS = {
    "gmm2d": {"components": 8, "spread": 1.0, "n_points": 2000},
    "bars": {"h": 8, "w": 8, "n_points": 4000},
    "idx": {"images_path": None, "labels_path": None},
}
_DATA_COMMON = {"seed": 7, "test_fraction": 0.2}

_ARCH_DEFAULTS = {
    "input_dim": None,  # derived from the data when omitted
    "latent_dim": 2,
    "encoder_hidden": [128, 128],
    "decoder_hidden": [128, 128],
    "hidden_activation": "tanh",
    "output_activation": None,  # identity for vector data, sigmoid for images
}

_LOSS_DEFAULTS = {
    "variant": "envae",
    "beta": 1.0,
    "alpha": 1.0,
    "m_samples": 50,
    "share_noise": True,
}

_TRAIN_DEFAULTS = {
    "epochs": 200,
    "batch_size": 64,
    "learning_rate": 1e-3,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "seed": 1,
    "log_every": 1,
}

_EVAL_DEFAULTS = {
    "gen_samples": 500,
    "variance_k": 50,
    "lipschitz_pairs": 1000,
    "lipschitz_points": 1000,
    "lipschitz_map": "decoder",
    "corr_points": 200,
    "corr_m_ref": 100,
    "corr_noise_draws": 32,
}

_SECTIONS = ("data", "arch", "loss", "train", "eval")


def _merge(section: str, doc: dict, defaults: dict) -> dict:
    unknown = set(doc) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    merged = copy.deepcopy(defaults)
    merged.update(doc)
    return merged


def resolve_config(doc: dict, seed_override: int | None = None) -> dict:
    """Validate a raw document and fill every default; returns the resolved dict."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    data_doc = dict(doc.get("data", {}))
    kind = data_doc.pop("kind", "gmm2d")
    if kind not in _DATA_DEFAULTS:
        raise ConfigError(f"unknown data kind {kind!r}")
    common = {k: data_doc.pop(k) for k in list(_DATA_COMMON) if k in data_doc}
    data = _merge("data", data_doc, _DATA_DEFAULTS[kind])
    data.update(_merge("data", common, _DATA_COMMON))
    data["kind"] = kind
    if kind == "idx" and not data["images_path"]:
        raise ConfigError("idx data requires images_path")

    arch = _merge("arch", doc.get("arch", {}), _ARCH_DEFAULTS)
    if arch["output_activation"] is None:
        arch["output_activation"] = "identity" if kind == "gmm2d" else "sigmoid"

    loss = _merge("loss", doc.get("loss", {}), _LOSS_DEFAULTS)
    train = _merge("train", doc.get("train", {}), _TRAIN_DEFAULTS)
    eval_cfg = _merge("eval", doc.get("eval", {}), _EVAL_DEFAULTS)
    if seed_override is not None:
        train["seed"] = int(seed_override)
    return {"data": data, "arch": arch, "loss": loss, "train": train, "eval": eval_cfg}


def load_config(path, seed_override: int | None = None) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return resolve_config(doc, seed_override)


def build_dataset(resolved: dict) -> Dataset:
    d = resolved["data"]
    if d["kind"] == "gmm2d":
        return gen_gmm2d(d["components"], d["spread"], d["n_points"], d["seed"])
    if d["kind"] == "bars":
        return gen_bars(d["h"], d["w"], d["n_points"], d["seed"])
    return load_idx(d["images_path"], d["labels_path"])


def build_arch(resolved: dict, dataset: Dataset) -> ModelArch:
    a = dict(resolved["arch"])
    if a["input_dim"] is None:
        a["input_dim"] = dataset.n
    elif a["input_dim"] != dataset.n:
        raise ConfigError(f"arch input_dim {a['input_dim']} does not match data "
                          f"dimension {dataset.n}")
    resolved["arch"]["input_dim"] = a["input_dim"]
    return ModelArch(
        input_dim=a["input_dim"],
        latent_dim=a["latent_dim"],
        encoder_hidden=tuple(a["encoder_hidden"]),
        decoder_hidden=tuple(a["decoder_hidden"]),
        hidden_activation=a["hidden_activation"],
        output_activation=a["output_activation"],
    )


def build_loss(resolved: dict) -> LossConfig:
    return LossConfig.from_dict(resolved["loss"])


def build_train(resolved: dict, arch: ModelArch, loss: LossConfig) -> TrainConfig:
    t = resolved["train"]
    return TrainConfig(
        epochs=t["epochs"], batch_size=t["batch_size"], loss=loss, arch=arch,
        learning_rate=t["learning_rate"], adam_beta1=t["adam_beta1"],
        adam_beta2=t["adam_beta2"], adam_eps=t["adam_eps"], seed=t["seed"],
        log_every=t["log_every"],
    ).validate()


def write_resolved(resolved: dict, out_dir) -> None:
    path = out_dir / "resolved_config.json" if hasattr(out_dir, "joinpath") else out_dir
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
