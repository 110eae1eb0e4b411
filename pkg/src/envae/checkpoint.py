"""Binary checkpoint format.

Little-endian layout:

    magic   8 bytes  b"ENVAECKP"
    version u32      currently 1
    hlen    u64      byte length of the JSON header
    header  hlen bytes of UTF-8 JSON: arch, loss config, step/epoch,
            optimizer step count, rng state, and a tensor manifest
            (name, shape, byte offset, element count) in payload order
    payload raw float64 tensor data, contiguous, manifest order

The header is diffable; the payload round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .losses import LossConfig
from .nets import ModelArch, Params

MAGIC = b"ENVAECKP"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class VersionMismatchError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class TruncatedCheckpointError(CheckpointError):
    """File ends before the header or payload is complete."""


@dataclass
class Checkpoint:
    version: int
    arch: ModelArch
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    step: int
    epoch: int
    rng_state: dict
    loss: LossConfig

    def to_params(self) -> Params:
        return Params(self.arch, {k: v.copy() for k, v in self.params.items()})


def _tensor_groups(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = []
    for prefix, group in (("param", ckpt.params), ("adam_m", ckpt.adam_m),
                          ("adam_v", ckpt.adam_v)):
        for name in sorted(group):
            out.append((f"{prefix}/{name}", np.ascontiguousarray(group[name], dtype=np.float64)))
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors = _tensor_groups(ckpt)
    manifest = []
    offset = 0
    for name, arr in tensors:
        manifest.append({"name": name, "shape": list(arr.shape),
                         "offset": offset, "count": int(arr.size)})
        offset += arr.size * 8
    header = {
        "arch": ckpt.arch.to_dict(),
        "loss": ckpt.loss.to_dict(),
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "adam_t": ckpt.adam_t,
        "rng_state": ckpt.rng_state,
        "manifest": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC):
        raise TruncatedCheckpointError("file shorter than the magic")
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:len(MAGIC)]!r}")
    if len(raw) < len(MAGIC) + 12:
        raise TruncatedCheckpointError("file ends inside the fixed header")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC) + 4)
    body = len(MAGIC) + 12
    if len(raw) < body + hlen:
        raise TruncatedCheckpointError("file ends inside the JSON header")
    header = json.loads(raw[body: body + hlen].decode("utf-8"))
    payload = raw[body + hlen:]

    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["manifest"]:
        start, count = entry["offset"], entry["count"]
        end = start + count * 8
        if end > len(payload):
            raise TruncatedCheckpointError(f"payload truncated inside {entry['name']!r}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arr = arr.astype(np.float64).reshape(entry["shape"])
        prefix, name = entry["name"].split("/", 1)
        groups[prefix][name] = arr
    return Checkpoint(
        version=version,
        arch=ModelArch.from_dict(header["arch"]),
        params=groups["param"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        adam_t=header["adam_t"],
        step=header["step"],
        epoch=header["epoch"],
        rng_state=header["rng_state"],
        loss=LossConfig.from_dict(header["loss"]),
    )
