"""Synthetic datasets, IDX ingestion, splitting, and raster export.

All construction paths leave values in [0, 1] and are pure functions of
their seed and parameters.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .sampling import Rng


class IdxError(ValueError):
    """Base class for IDX parse failures."""


class IdxMagicError(IdxError):
    """Wrong magic constant for the requested record type."""


class IdxCountMismatchError(IdxError):
    """Image and label files disagree on the record count."""


class IdxTruncatedError(IdxError):
    """File ends before the declared payload is complete."""


@dataclass
class Dataset:
    x: np.ndarray                      # [N, n], values in [0, 1]
    kind: str                          # "vector" or "image"
    name: str
    image_shape: tuple[int, int, int] | None = None   # (h, w, c) when kind == "image"
    norm_min: np.ndarray | None = None  # per-dimension pre-normalization minima
    norm_max: np.ndarray | None = None
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.kind == "image":
            h, w, c = self.image_shape
            if self.x.shape[1] != h * w * c:
                raise ConfigError(f"image dataset width {self.x.shape[1]} != {h}*{w}*{c}")
        if self.x.size and (self.x.min() < 0.0 or self.x.max() > 1.0):
            raise ConfigError("dataset values must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        """Map normalized values back to the generator's raw coordinates."""
        if self.norm_min is None:
            return x
        return x * (self.norm_max - self.norm_min) + self.norm_min


def gen_gmm2d(components: int, spread: float, n_points: int, seed: int) -> Dataset:
    """Equal-weight Gaussian mixture with means on a circle of radius ``spread``.

    Component std is spread/10; output is min-max normalized to [0, 1]^2
    per dimension with the affine record kept on the dataset.
    """
    if components < 1:
        raise ConfigError("components must be >= 1")
    if n_points < components:
        raise ConfigError("need at least one point per component")
    rng = Rng(seed)
    angles = 2.0 * math.pi * np.arange(components) / components
    means = spread * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    assignment = rng.integers(0, components, size=n_points)
    raw = means[assignment] + (spread / 10.0) * rng.standard_normal((n_points, 2))
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    x = (raw - lo) / (hi - lo)
    return Dataset(x=x, kind="vector", name=f"gmm2d-k{components}",
                   norm_min=lo, norm_max=hi, labels=assignment)


def gen_bars(h: int, w: int, n_points: int, seed: int) -> Dataset:
    """One bright 1-2 px bar per image on a dark background plus faint noise."""
    if h < 4 or w < 4:
        raise ConfigError("bars images must be at least 4x4")
    rng = Rng(seed)
    imgs = np.zeros((n_points, h, w))
    horizontal = rng.integers(0, 2, size=n_points)
    widths = rng.integers(1, 3, size=n_points)
    for i in range(n_points):
        extent = h if horizontal[i] else w
        pos = int(rng.integers(0, extent - widths[i] + 1))
        if horizontal[i]:
            imgs[i, pos: pos + widths[i], :] = 1.0
        else:
            imgs[i, :, pos: pos + widths[i]] = 1.0
    imgs += 0.01 * rng.standard_normal(imgs.shape)
    np.clip(imgs, 0.0, 1.0, out=imgs)
    return Dataset(x=imgs.reshape(n_points, h * w), kind="image",
                   name=f"bars-{h}x{w}", image_shape=(h, w, 1),
                   norm_min=np.zeros(h * w), norm_max=np.ones(h * w))


_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


def _read_u32s(raw: bytes, offset: int, count: int, what: str) -> tuple[int, ...]:
    end = offset + 4 * count
    if len(raw) < end:
        raise IdxTruncatedError(f"{what}: header truncated")
    return struct.unpack_from(f">{count}I", raw, offset)


def load_idx(images_path, labels_path=None) -> Dataset:
    """Parse big-endian IDX image (and optional label) files; pixels scale by /255."""
    with open(images_path, "rb") as fh:
        raw = fh.read()
    magic, = _read_u32s(raw, 0, 1, "images")
    if magic != _IDX_IMAGE_MAGIC:
        raise IdxMagicError(f"images magic 0x{magic:08x} != 0x{_IDX_IMAGE_MAGIC:08x}")
    count, rows, cols = _read_u32s(raw, 4, 3, "images")
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise IdxTruncatedError(f"images payload truncated ({len(raw)} < {need} bytes)")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    x = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0

    labels = None
    if labels_path is not None:
        with open(labels_path, "rb") as fh:
            lraw = fh.read()
        lmagic, = _read_u32s(lraw, 0, 1, "labels")
        if lmagic != _IDX_LABEL_MAGIC:
            raise IdxMagicError(f"labels magic 0x{lmagic:08x} != 0x{_IDX_LABEL_MAGIC:08x}")
        lcount, = _read_u32s(lraw, 4, 1, "labels")
        if lcount != count:
            raise IdxCountMismatchError(f"{count} images but {lcount} labels")
        if len(lraw) < 8 + lcount:
            raise IdxTruncatedError("labels payload truncated")
        labels = np.frombuffer(lraw, dtype=np.uint8, count=lcount, offset=8).copy()

    return Dataset(x=x, kind="image", name="idx", image_shape=(rows, cols, 1),
                   norm_min=np.zeros(rows * cols), norm_max=np.ones(rows * cols),
                   labels=labels)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then disjoint, exhaustive train/test split."""
    if not (0.0 < test_fraction < 1.0):
        raise ConfigError("test_fraction must lie strictly between 0 and 1")
    n = dataset.x.shape[0]
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ConfigError(f"split of {n} points at fraction {test_fraction} is degenerate")
    perm = Rng(seed).permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    def take(idx):
        return Dataset(x=dataset.x[idx], kind=dataset.kind, name=dataset.name,
                       image_shape=dataset.image_shape, norm_min=dataset.norm_min,
                       norm_max=dataset.norm_max,
                       labels=None if dataset.labels is None else dataset.labels[idx])

    return take(train_idx), take(test_idx)


def export_raster(image: np.ndarray, path) -> None:
    """Write binary PGM (P5) for [h, w] or PPM (P6) for [h, w, 3], maxval 255.

    Values must already lie in [0, 1]; quantization rounds half up.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0 or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("raster values must lie in [0, 1]; clamp before export")
    if img.ndim == 2:
        magic = b"P5"
        h, w = img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
        h, w = img.shape[:2]
    else:
        raise ValueError(f"expected [h, w] or [h, w, 3], got {img.shape}")
    quantized = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(quantized.tobytes())
