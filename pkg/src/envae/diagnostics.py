"""Model diagnostics: two-sample energy distance (the FID stand-in here),
variance maps, residual distributions, Lipschitz estimates, latent
statistics, uncertainty-term correlation, decoder Jacobians, radial
spectra, and latent walks.

Everything is pure given (params, data, rng); outputs are plain numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .nets import Params, decoder_forward, encoder_forward
from .sampling import Rng


class DegenerateSampleError(ValueError):
    """The statistic is undefined on the provided points."""


@dataclass
class MetricReport:
    """Named diagnostic outputs; metrics that do not apply are listed as skipped."""

    scalars: dict[str, float] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def validate(self) -> "MetricReport":
        for key, value in self.scalars.items():
            if not math.isfinite(value):
                raise ValueError(f"metric {key!r} is not finite")
        for key, arr in self.arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"array metric {key!r} has non-finite entries")
        return self


@dataclass
class JacobianMatrix:
    matrix: np.ndarray  # [n, m]


# ---------------------------------------------------------------------------
# energy distance


def _mean_pow_dist(a: np.ndarray, b: np.ndarray, beta: float, block: int = 128) -> float:
    """Mean of ||a_i - b_j||^beta over all (i, j) pairs, in row blocks."""
    b_sq = np.sum(b * b, axis=1)
    total = 0.0
    for lo in range(0, a.shape[0], block):
        chunk = a[lo: lo + block]
        sq = np.sum(chunk * chunk, axis=1)[:, None] + b_sq[None, :] - 2.0 * chunk @ b.T
        np.maximum(sq, 0.0, out=sq)
        total += float(np.sum(np.sqrt(sq) ** beta))
    return total / (a.shape[0] * b.shape[0])


def energy_distance(a: np.ndarray, b: np.ndarray, beta: float = 1.0) -> float:
    """2 E||A - B||^b - E||A - A'||^b - E||B - B'||^b over the sample sets.

    Within-set terms use the V-statistic normalization (all pairs over N^2,
    the zero diagonal included), which makes the statistic symmetric,
    nonnegative, and exactly zero when the two sets coincide.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("energy_distance expects [N, n] sample sets")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DegenerateSampleError("each sample set needs at least 2 points")
    cross = _mean_pow_dist(a, b, beta)
    return 2.0 * cross - _mean_pow_dist(a, a, beta) - _mean_pow_dist(b, b, beta)


# ---------------------------------------------------------------------------
# reconstruction statistics


def _posterior_draws(params: Params, x: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    """k decoded posterior draws for a single example x [n] -> [k, n]."""
    post = encoder_forward(params, x[None, :])
    mu = post.mu.data[0]
    sigma = np.exp(0.5 * post.logvar.data[0])
    z = mu + sigma * rng.standard_normal((k, mu.shape[0]))
    return decoder_forward(params, z).data


def variance_map(params: Params, x: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    """Per-coordinate unbiased variance across k posterior-draw reconstructions."""
    if k < 2:
        raise ValueError("variance_map needs k >= 2")
    decoded = _posterior_draws(params, np.asarray(x, dtype=np.float64), k, rng)
    return decoded.var(axis=0, ddof=1)


@dataclass
class ResidualReport:
    counts: np.ndarray
    bin_edges: np.ndarray
    mean: float
    std: float
    central_fraction: float   # mass inside [-0.2, 0.2]


def residual_distribution(params: Params, x: np.ndarray, k: int, bins: int,
                          rng: Rng) -> ResidualReport:
    """Pooled reconstruction residuals over k draws, histogrammed on [-1, 1].

    Data is [0, 1]-normalized, so residuals span [-1, 1] by construction.
    """
    if k < 1:
        raise ValueError("residual_distribution needs k >= 1")
    if bins < 3:
        raise ValueError("residual_distribution needs bins >= 3")
    x = np.asarray(x, dtype=np.float64)
    decoded = _posterior_draws(params, x, k, rng)
    residuals = (decoded - x[None, :]).ravel()
    counts, edges = np.histogram(residuals, bins=bins, range=(-1.0, 1.0))
    central = float(np.mean((residuals >= -0.2) & (residuals <= 0.2)))
    return ResidualReport(counts=counts, bin_edges=edges,
                          mean=float(residuals.mean()), std=float(residuals.std()),
                          central_fraction=central)


# ---------------------------------------------------------------------------
# smoothness and latent statistics


def lipschitz_estimate(map_fn, points: np.ndarray, pairs: int, rng: Rng) -> float:
    """Max ||f(x1) - f(x2)|| / ||x1 - x2|| over seeded random point pairs.

    ``map_fn`` maps a [K, d] batch to a [K, p] batch. Pairs closer than
    1e-9 in the input space are skipped.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2:
        raise DegenerateSampleError("need at least 2 points")
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    n = points.shape[0]
    i = rng.integers(0, n, size=pairs)
    j = rng.integers(0, n - 1, size=pairs)
    j = j + (j >= i)  # distinct indices
    outputs = np.asarray(map_fn(points))
    dx = np.linalg.norm(points[i] - points[j], axis=1)
    keep = dx >= 1e-9
    if not np.any(keep):
        raise DegenerateSampleError("all sampled pairs were degenerate")
    dy = np.linalg.norm(outputs[i][keep] - outputs[j][keep], axis=1)
    return float(np.max(dy / dx[keep]))


def latent_variance_mean(params: Params, dataset) -> float:
    """Mean posterior variance exp(logvar) over the dataset and latent dims."""
    post = encoder_forward(params, np.asarray(dataset.x, dtype=np.float64))
    return float(np.exp(post.logvar.data).mean())


def _uncertainty_pairs(params: Params, x: np.ndarray, m_ref: int, rng: Rng,
                       beta: float, noise_draws: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-point (reference pairwise dispersion, single-sample uncertainty term).

    The reference is the M-sample energy-score dispersion term at M = m_ref;
    the single-sample term is averaged over ``noise_draws`` draws to tame
    estimator noise before correlating.
    """
    post = encoder_forward(params, x)
    mu = post.mu.data
    sigma = np.exp(0.5 * post.logvar.data)
    n_points, latent = mu.shape

    ref = np.empty(n_points)
    approx = np.empty(n_points)
    sqrt2 = math.sqrt(2.0)
    for p in range(n_points):
        z_ref = mu[p] + sigma[p] * rng.standard_normal((m_ref, latent))
        decoded = decoder_forward(params, z_ref).data
        ii, jj = np.triu_indices(m_ref, k=1)
        dists = np.linalg.norm(decoded[ii] - decoded[jj], axis=1) ** beta
        # 1/(2 M (M-1)) over ordered pairs = 1/(M (M-1)) over unordered ones
        ref[p] = dists.sum() / (m_ref * (m_ref - 1))

        eps = rng.standard_normal((noise_draws, latent))
        perturbed = mu[p] + sqrt2 * sigma[p] * eps
        batch = np.vstack([perturbed, mu[p][None, :]])
        out = decoder_forward(params, batch).data
        diffs = np.linalg.norm(out[:-1] - out[-1], axis=1) ** beta
        approx[p] = 0.5 * diffs.mean()
    return ref, approx


def uncertainty_term_correlation(params: Params, dataset, m_ref: int, rng: Rng,
                                 beta: float = 1.0, n_points: int | None = None,
                                 noise_draws: int = 32) -> tuple[float, float]:
    """Pearson r (and r^2) of the single-sample uncertainty term against the
    m_ref-sample pairwise dispersion term across test points."""
    if m_ref < 2:
        raise ValueError("m_ref must be >= 2")
    x = np.asarray(dataset.x, dtype=np.float64)
    if n_points is not None and n_points < x.shape[0]:
        idx = rng.permutation(x.shape[0])[:n_points]
        x = x[idx]
    ref, approx = _uncertainty_pairs(params, x, m_ref, rng, beta, noise_draws)
    if np.std(ref) == 0.0 or np.std(approx) == 0.0:
        raise DegenerateSampleError("dispersion terms are constant across points")
    r = float(np.corrcoef(ref, approx)[0, 1])
    return r, r * r


# ---------------------------------------------------------------------------
# local geometry


def decoder_jacobian(params: Params, z: np.ndarray) -> JacobianMatrix:
    """d g / d z at a single latent point, via one reverse pass per output."""
    z = np.asarray(z, dtype=np.float64)
    tape = Tape()
    zt = tape.leaf(z[None, :])
    y = decoder_forward(params, zt)
    n = y.shape[1]
    rows = []
    for k in range(n):
        one_hot = np.zeros((1, n))
        one_hot[0, k] = 1.0
        root = ad.sum_(y * Tensor.const(one_hot))
        rows.append(backward(tape, root)[zt.node][0])
    return JacobianMatrix(matrix=np.stack(rows, axis=0))


def latent_walk(params: Params, z1: np.ndarray, z2: np.ndarray, steps: int) -> np.ndarray:
    """Decode (1-t) z1 + t z2 at t = i/(steps+1), i = 0..steps+1 -> [steps+2, n]."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"endpoint shapes differ: {z1.shape} vs {z2.shape}")
    t = np.arange(steps + 2) / (steps + 1)
    zs = (1.0 - t)[:, None] * z1[None, :] + t[:, None] * z2[None, :]
    return decoder_forward(params, zs).data


# ---------------------------------------------------------------------------
# spectra


def radial_spectrum(images) -> tuple[np.ndarray, np.ndarray]:
    """Ring-averaged log magnitude of the centered 2-D DFT over an image set.

    Returns (radii 0..h//2, curve of log10(1 + mean magnitude)). Uses a
    plain DFT-matrix transform; image sizes here are tiny.
    """
    stack = np.asarray(images, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None, ...]
    if stack.ndim != 3:
        raise ValueError("expected one [h, w] image or a stack [K, h, w]")
    h, w = stack.shape[1:]
    if h != w:
        raise ValueError(f"radial spectrum needs square images, got {h}x{w}")
    if h < 4:
        raise ValueError("images must be at least 4x4")

    idx = np.arange(h)
    dft = np.exp(-2j * np.pi * np.outer(idx, idx) / h)
    mags = np.abs(dft[None, :, :] @ stack @ dft.T[None, :, :])
    # center the zero frequency
    mags = np.roll(mags, (h // 2, h // 2), axis=(1, 2))

    center = h // 2
    yy, xx = np.meshgrid(idx - center, idx - center, indexing="ij")
    ring = np.rint(np.sqrt(yy * yy + xx * xx)).astype(int)
    max_r = h // 2
    radii = np.arange(max_r + 1)
    curve = np.empty(max_r + 1)
    mean_mag = mags.mean(axis=0)
    for r in radii:
        curve[r] = mean_mag[ring == r].mean()
    return radii, np.log10(1.0 + curve)
