"""Matplotlib rendering of the report artifacts.

Every CSV/JSON the CLI writes gets a PNG sibling so runs can be eyeballed
without further tooling. Figures are rendered headless and with metadata
stripped so re-runs are reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["figure.dpi"] = 110
plt.rcParams["savefig.bbox"] = "tight"
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3

_PNG_META = {"metadata": {"Software": None}}


def _save(fig, path):
    fig.savefig(path, **_PNG_META)
    plt.close(fig)


def render_trace(steps, path) -> None:
    """Loss decomposition over training steps."""
    xs = [r.step for r in steps]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(xs, [r.total for r in steps], label="total", lw=1.2)
    ax.plot(xs, [r.recon for r in steps], label="recon", lw=0.8)
    ax.plot(xs, [r.dispersion for r in steps], label="dispersion", lw=0.8)
    ax.plot(xs, [r.kl for r in steps], label="kl", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    _save(fig, path)


def render_variance_map(values: np.ndarray, image_shape, path) -> None:
    fig, ax = plt.subplots(figsize=(4, 3.2))
    if image_shape is not None:
        h, w, _ = image_shape
        im = ax.imshow(values.reshape(h, w), cmap="magma")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_xticks([])
        ax.set_yticks([])
    else:
        ax.bar(np.arange(values.size), values)
        ax.set_xlabel("coordinate")
    ax.set_title("reconstruction variance", fontsize=9)
    _save(fig, path)


def render_residuals(counts: np.ndarray, edges: np.ndarray, path) -> None:
    centers = 0.5 * (edges[:-1] + edges[1:])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(centers, counts, width=edges[1] - edges[0])
    ax.axvspan(-0.2, 0.2, color="green", alpha=0.1)
    ax.set_xlabel("normalized residual")
    ax.set_ylabel("count")
    _save(fig, path)


def render_spectrum(radii: np.ndarray, curves: dict[str, np.ndarray], path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, curve in curves.items():
        ax.plot(radii, curve, marker="o", ms=3, label=label)
    ax.set_xlabel("ring radius")
    ax.set_ylabel("log10(1 + magnitude)")
    ax.legend(fontsize=8)
    _save(fig, path)


def render_correlation(ref: np.ndarray, approx: np.ndarray, r: float, path) -> None:
    fig, ax = plt.subplots(figsize=(4, 3.6))
    ax.scatter(ref, approx, s=8, alpha=0.6)
    lim = [min(ref.min(), approx.min()), max(ref.max(), approx.max())]
    ax.plot(lim, lim, "k--", lw=0.8)
    ax.set_xlabel("reference dispersion term")
    ax.set_ylabel("single-sample term")
    ax.set_title(f"r = {r:.3f}", fontsize=9)
    _save(fig, path)


def render_sweep(values, columns: dict[str, list[float]], param: str, path) -> None:
    keys = [k for k in columns if k != "value"]
    fig, axes = plt.subplots(1, len(keys), figsize=(3.2 * len(keys), 3.0), squeeze=False)
    for ax, key in zip(axes[0], keys):
        ax.plot(values, columns[key], marker="o", ms=4)
        ax.set_xlabel(param)
        ax.set_ylabel(key)
    fig.tight_layout()
    _save(fig, path)


def render_bench(labels: list[str], epoch_ms: list[float], path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(np.arange(len(labels)), epoch_ms)
    ax.set_xticks(np.arange(len(labels)), labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("median epoch ms")
    _save(fig, path)
