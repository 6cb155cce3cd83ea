"""Fully connected CRF refinement by mean-field iteration.

Pairwise terms use two Gaussian kernels with Potts compatibility: a spatial
smoothness kernel and a color-spatial bilateral kernel. Messages are
kernel-weighted averages of the current marginals; the spatial kernel is a
normalized Gaussian blur and the bilateral kernel is approximated with a
bilateral grid (splat, blur, slice). Both include the pixel's own
contribution, a small self-reinforcement that does not affect any of the
exact contracts (identity at zero iterations, mass conservation, argmax
preservation at zero pairwise weight).
"""

import math

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import CrfSettings
from .core import ImageRecord, ScoreMap

PROB_FLOOR = 1e-8
# Refuse bilateral grids past this cell count; they signal sigmas far too
# small for the image.
MAX_GRID_CELLS = 1 << 26


def _spatial_messages(q: np.ndarray, sigma: float) -> np.ndarray:
    """Per-class normalized Gaussian blur of q (h, w, C)."""
    norm = gaussian_filter(np.ones(q.shape[:2], dtype=np.float64), sigma)
    out = np.empty_like(q)
    for c in range(q.shape[2]):
        out[:, :, c] = gaussian_filter(q[:, :, c], sigma) / norm
    return out


def _bilateral_messages(q: np.ndarray, image: np.ndarray, sigma_xy: float,
                        sigma_rgb: float) -> np.ndarray:
    h, w, num_classes = q.shape
    yy, xx = np.mgrid[0:h, 0:w]
    axes = [
        np.rint(yy / sigma_xy).astype(np.intp),
        np.rint(xx / sigma_xy).astype(np.intp),
        np.rint(image[:, :, 0] / sigma_rgb).astype(np.intp),
        np.rint(image[:, :, 1] / sigma_rgb).astype(np.intp),
        np.rint(image[:, :, 2] / sigma_rgb).astype(np.intp),
    ]
    dims = tuple(int(a.max()) + 1 for a in axes)
    # math.prod keeps Python-int precision; np.prod would wrap at int64 for
    # absurd sigmas and defeat the guard below
    cells = math.prod(dims)
    if cells > MAX_GRID_CELLS:
        raise ValueError(
            f"bilateral grid of {cells} cells exceeds the {MAX_GRID_CELLS} "
            f"limit; increase bilateral_sigma_xy/bilateral_sigma_rgb")
    flat = np.ravel_multi_index([a.ravel() for a in axes], dims)

    norm = np.bincount(flat, minlength=cells).astype(np.float64)
    norm = gaussian_filter(norm.reshape(dims), 1.0).reshape(-1)
    sliced_norm = np.maximum(norm[flat], 1e-12)

    out = np.empty_like(q)
    for c in range(num_classes):
        grid = np.bincount(flat, weights=q[:, :, c].ravel(), minlength=cells)
        grid = gaussian_filter(grid.reshape(dims), 1.0).reshape(-1)
        out[:, :, c] = (grid[flat] / sliced_norm).reshape(h, w)
    return out


def crf_refine(image: ImageRecord, probs: ScoreMap,
               settings: CrfSettings) -> ScoreMap:
    """Mean-field refinement of per-pixel class distributions.

    Unaries are -log of the input probabilities (floored at 1e-8); each
    iteration recomputes pairwise messages from the current marginals and
    renormalizes with a softmax, so outputs always sum to one per pixel.
    Zero iterations return the input untouched.
    """
    if probs.space != "probabilities":
        raise ValueError("crf_refine expects probabilities, got logits")
    if image.pixels.shape[:2] != probs.scores.shape[:2]:
        raise ValueError(
            f"image {image.pixels.shape[:2]} and score map "
            f"{probs.scores.shape[:2]} disagree on resolution")
    if settings.iterations == 0:
        return probs

    pixels = image.pixels.astype(np.float64)
    floored = np.maximum(probs.scores.astype(np.float64), PROB_FLOOR)
    log_unary = np.log(floored)
    pairwise_free = settings.gaussian_weight == 0 and settings.bilateral_weight == 0
    q = floored / floored.sum(axis=2, keepdims=True)

    for _ in range(settings.iterations):
        if pairwise_free:
            # No pairwise term: the update is softmax(log p), i.e. plain
            # renormalization of the floored input, already held in q.
            continue
        logit = log_unary.copy()
        if settings.gaussian_weight > 0:
            logit += settings.gaussian_weight * _spatial_messages(
                q, settings.gaussian_sigma_xy)
        if settings.bilateral_weight > 0:
            logit += settings.bilateral_weight * _bilateral_messages(
                q, pixels, settings.bilateral_sigma_xy,
                settings.bilateral_sigma_rgb)
        logit -= logit.max(axis=2, keepdims=True)
        q = np.exp(logit)
        q /= q.sum(axis=2, keepdims=True)

    return ScoreMap(q, "probabilities")
