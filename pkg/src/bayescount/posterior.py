"""Posterior label probabilities over density-grid cells.

Each cell center ``x`` gets a Gaussian log-likelihood per annotated head,

    logit_n(x) = -|x - z_n|^2 / (2 sigma^2),

and, with background modelling on, one extra background label whose
likelihood is centred on a dummy point at distance ``d`` beyond the nearest
head.  Its logit only depends on the nearest-head distance ``r``:

    logit_0(x) = -(d - r)^2 / (2 sigma^2).

The shared Gaussian normalizer is dropped because it cancels in the softmax.
Label rows are ordered heads first (index ``0..N-1``), background last.

Grids are processed in tiles of at most :data:`TILE_SIZE` cells.  Every
cell's column is computed independently with elementwise operations and a
fixed label-order reduction, so a cell's result does not depend on which
tile it was computed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import DensityGrid, Point2, ValidationError, cell_centers

TILE_SIZE = 4096
TRUNCATE_LOGIT = -700.0


class DegenerateDirectionError(ValueError):
    """The pixel coincides with its nearest head, so no direction exists."""


@dataclass(frozen=True, eq=False)
class PosteriorBlock:
    """Posteriors for cells ``start..stop-1`` (flat, row-major).

    ``probs`` has shape ``(n_labels, stop - start)``; the background row, if
    any, is last.
    """

    start: int
    stop: int
    probs: np.ndarray

    @property
    def n_labels(self):
        return self.probs.shape[0]


def iter_tiles(n_cells, tile_size=TILE_SIZE):
    """Yield ``(start, stop)`` ranges covering ``range(n_cells)`` in order."""
    if tile_size < 1:
        raise ValueError("tile_size must be positive")
    for start in range(0, n_cells, tile_size):
        yield start, min(start + tile_size, n_cells)


def nearest_heads(rows, cols, heads):
    """Index of and distance to the nearest head for each query location.

    Ties resolve to the lowest head index.
    """
    dr = rows[None, :] - heads[:, 0:1]
    dc = cols[None, :] - heads[:, 1:2]
    sq = dr * dr + dc * dc
    idx = np.argmin(sq, axis=0)
    return idx, np.sqrt(sq[idx, np.arange(sq.shape[1])])


def _require_heads(scene):
    if scene.n < 1:
        raise ValidationError("posterior needs at least one annotated head")


def logits_at(rows, cols, scene, cfg):
    """Label logits, shape ``(n_labels, len(rows))``, for arbitrary locations."""
    _require_heads(scene)
    heads = scene.points_array()
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma)
    dr = rows[None, :] - heads[:, 0:1]
    dc = cols[None, :] - heads[:, 1:2]
    sq = dr * dr + dc * dc
    if not cfg.background:
        return -sq * inv
    out = np.empty((scene.n + 1, rows.shape[0]))
    out[:-1] = -sq * inv
    nearest = np.sqrt(sq.min(axis=0))
    gap = cfg.margin(scene) - nearest
    out[-1] = -(gap * gap) * inv
    return out


def _softmax_columns(logits, log_priors, truncate):
    z = logits if log_priors is None else logits + log_priors[:, None]
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    if truncate:
        e[z < TRUNCATE_LOGIT] = 0.0
    total = e[0].copy()
    for k in range(1, e.shape[0]):
        total += e[k]
    return e / total


def _log_priors(scene, cfg):
    if cfg.priors is None:
        return None
    n_labels = cfg.n_labels(scene)
    if len(cfg.priors) != n_labels:
        raise ValidationError(f"{len(cfg.priors)} priors given for {n_labels} labels")
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(cfg.priors, dtype=np.float64))


def posterior_at(rows, cols, scene, cfg):
    """Posterior matrix ``(n_labels, len(rows))`` at arbitrary locations."""
    logits = logits_at(rows, cols, scene, cfg)
    return _softmax_columns(logits, _log_priors(scene, cfg), cfg.truncate)


def label_logits(pixel, scene, cfg):
    """Logit vector (heads, then background if enabled) at one location."""
    return logits_at([pixel.row], [pixel.col], scene, cfg)[:, 0]


def posterior(scene, cfg, pixel_range=None):
    """Posterior probabilities for the cells in ``pixel_range`` (default: all).

    ``pixel_range`` is a ``(start, stop)`` pair of flat row-major indices.
    """
    n_cells = scene.height * scene.width
    start, stop = (0, n_cells) if pixel_range is None else pixel_range
    if not (0 <= start <= stop <= n_cells):
        raise ValidationError(f"tile [{start}, {stop}) outside grid of {n_cells} cells")
    rows, cols = cell_centers(scene.height, scene.width, start, stop)
    return PosteriorBlock(start, stop, posterior_at(rows, cols, scene, cfg))


def iter_posterior(scene, cfg, tile_size=TILE_SIZE):
    for start, stop in iter_tiles(scene.height * scene.width, tile_size):
        yield posterior(scene, cfg, (start, stop))


def dummy_background_point(pixel, scene, d):
    """Dummy background point at distance ``d`` from the pixel's nearest head,
    on the ray from that head through the pixel."""
    _require_heads(scene)
    heads = scene.points_array()
    idx, dist = nearest_heads(np.array([pixel.row]), np.array([pixel.col]), heads)
    n, r = int(idx[0]), float(dist[0])
    if r == 0.0:
        raise DegenerateDirectionError(
            f"pixel ({pixel.row}, {pixel.col}) coincides with head {n}")
    z = heads[n]
    return Point2(z[0] + d * (pixel.row - z[0]) / r, z[1] + d * (pixel.col - z[1]) / r)


def entropy_map(scene, cfg, tile_size=TILE_SIZE):
    """Per-cell Shannon entropy (nats) of the label posterior, ``0 ln 0 = 0``."""
    n_cells = scene.height * scene.width
    out = np.empty(n_cells)
    upper = math.log(cfg.n_labels(scene))
    for block in iter_posterior(scene, cfg, tile_size):
        p = block.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(p), 0.0)
        ent = -terms[0]
        for k in range(1, terms.shape[0]):
            ent -= terms[k]
        out[block.start:block.stop] = np.clip(ent, 0.0, upper)
    return out.reshape(scene.height, scene.width)


def entropy_grid(scene, cfg):
    """:func:`entropy_map` wrapped as a :class:`DensityGrid` (same stride)."""
    return DensityGrid(entropy_map(scene, cfg), scene.stride)
