"""Expected counts, Bayesian losses, and the Gaussian density-map baseline.

Every loss returns a :class:`LossValue` holding the scalar and its gradient
with respect to the estimated density grid.  The Bayesian losses stream over
posterior tiles twice: once to accumulate expected counts, once to spread the
(now fixed) residual derivatives back onto cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .posterior import TILE_SIZE, iter_posterior
from .scene import DensityGrid, ShapeMismatchError, cell_centers

ADAPTIVE_K = 3
ADAPTIVE_MIN_SIGMA = 0.5


@dataclass(frozen=True, eq=False)
class ExpectedCounts:
    per_head: np.ndarray
    background: float = 0.0

    @property
    def total(self):
        return math.fsum(self.per_head) + self.background


@dataclass(frozen=True, eq=False)
class LossValue:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class FixedKernel:
    sigma: float = 8.0


@dataclass(frozen=True)
class AdaptiveKernel:
    """Geometry-adaptive kernel: ``sigma_n = beta * mean distance to k nearest heads``."""

    beta: float = 0.3
    k: int = ADAPTIVE_K


def _values(density):
    return density.values if isinstance(density, DensityGrid) else np.asarray(density, dtype=np.float64)


def _check_shape(scene, values):
    if values.shape != (scene.height, scene.width):
        raise ShapeMismatchError(
            f"density shape {values.shape} does not match scene {scene.height}x{scene.width}")


def total_count(density):
    """Estimated count: compensated sum over all cells."""
    return math.fsum(_values(density).ravel().tolist())


def _blocks(scene, cfg, tile_size, blocks):
    return iter_posterior(scene, cfg, tile_size) if blocks is None else blocks


def expected_counts(scene, density, cfg, tile_size=TILE_SIZE, blocks=None):
    """Posterior-weighted mass per head (and for the background label).

    ``blocks`` may carry precomputed posterior tiles for ``(scene, cfg)``;
    posteriors do not depend on the density, so training reuses them.
    """
    d = _values(density)
    _check_shape(scene, d)
    flat = d.ravel()
    acc = np.zeros(cfg.n_labels(scene))
    for block in _blocks(scene, cfg, tile_size, blocks):
        acc += (block.probs * flat[block.start:block.stop]).sum(axis=1)
    if cfg.background:
        return ExpectedCounts(acc[:-1].copy(), float(acc[-1]))
    return ExpectedCounts(acc, 0.0)


def _penalty(residual, distance):
    """Penalty ``F(r)`` and its derivative ``F'(r)``; ``sign(0) = 0``."""
    if distance == "abs":
        return np.abs(residual), np.sign(residual)
    return residual * residual, 2.0 * residual


def bayes_loss(scene, density, cfg, tile_size=TILE_SIZE, blocks=None):
    """Bayesian loss (``cfg.background`` off) or its background-aware variant.

    Each head's expected count is pulled towards one and, with background
    modelling, the background's expected count towards zero.  A scene with
    no heads instead penalises the total mass directly.
    """
    d = _values(density)
    _check_shape(scene, d)
    if scene.n == 0:
        total = total_count(d)
        value, slope = _penalty(np.array([0.0 - total]), cfg.distance)
        return LossValue(float(value[0]), np.full(d.shape, -float(slope[0])))

    counts = expected_counts(scene, d, cfg, tile_size, blocks)
    residual = 1.0 - counts.per_head
    values, slopes = _penalty(residual, cfg.distance)
    terms = values.tolist()
    # dL/dE[c_n] = -F'(1 - E[c_n]); background: dL/dE[c_0] = -F'(0 - E[c_0])
    coef = -slopes
    if cfg.background:
        bg_value, bg_slope = _penalty(np.array([0.0 - counts.background]), cfg.distance)
        terms.append(float(bg_value[0]))
        coef = np.append(coef, -bg_slope[0])

    grad = np.empty(d.size)
    for block in _blocks(scene, cfg, tile_size, blocks):
        grad[block.start:block.stop] = coef @ block.probs
    return LossValue(math.fsum(terms), grad.reshape(d.shape))


def _kernel_sigmas(heads, kernel, shorter_side):
    n = heads.shape[0]
    if isinstance(kernel, FixedKernel):
        return np.full(n, float(kernel.sigma))
    upper = shorter_side / 4.0
    sigmas = np.full(n, upper)
    if n < 2:
        return sigmas
    diff = heads[:, None, :] - heads[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    k = min(kernel.k, n - 1)
    nearest = np.sort(dist, axis=1)[:, :k]
    sigmas = kernel.beta * nearest.mean(axis=1)
    return np.clip(sigmas, ADAPTIVE_MIN_SIGMA, max(upper, ADAPTIVE_MIN_SIGMA))


def baseline_density(scene, kernel=FixedKernel()):
    """Gaussian "ground-truth" density with each head's kernel summing to one."""
    out = np.zeros(scene.height * scene.width)
    if scene.n == 0:
        return DensityGrid(out.reshape(scene.shape), scene.stride)
    heads = scene.points_array()
    sigmas = _kernel_sigmas(heads, kernel, min(scene.height, scene.width))
    rows, cols = cell_centers(scene.height, scene.width)
    for (zr, zc), s in zip(heads, sigmas):
        dr = rows - zr
        dc = cols - zc
        logk = -(dr * dr + dc * dc) / (2.0 * s * s)
        k = np.exp(logk - logk.max())
        out += k / math.fsum(k.tolist())
    return DensityGrid(out.reshape(scene.shape), scene.stride)


def baseline_loss(density_gt, density_est):
    """Pixel-wise squared error between the two density grids."""
    gt = _values(density_gt)
    est = _values(density_est)
    if gt.shape != est.shape:
        raise ShapeMismatchError(f"shapes differ: {gt.shape} vs {est.shape}")
    diff = est - gt
    return LossValue(math.fsum((diff * diff).ravel().tolist()), 2.0 * diff)
