"""Test-time scoring: route, adapt, and score against stored knowledge.

The detector never updates anything.  A test image is routed by its raw
key-layer features, adapted with the routed task's prompt and fusion
weights, and its fused patches scored by exact nearest-neighbor distance to
that task's knowledge coreset.  Per-patch distances roll up to an image
score by max; an optional pixel map comes from bilinear upsampling plus
Gaussian smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .attention import fuse_multimodal, identity_weights, prefix_attention
from .backbone import BackboneConfig, PatchFeatureMap
from .bank import MemoryBank, nn_min_distances, retrieve_knowledge, route
from .errors import ShapeError


@dataclass
class AnomalyResult:
    routed_task: int
    image_score: float
    patch_scores: np.ndarray
    pixel_map: np.ndarray | None = None


def detect(
    features: PatchFeatureMap,
    bank: MemoryBank,
    backbone: BackboneConfig,
    out_hw: tuple[int, int] | None = None,
) -> AnomalyResult:
    """Score one test image against the bank.

    When `out_hw` is given the patch scores are also rendered as a smoothed
    pixel map of that size.
    """
    task = route(features.tap(backbone.key_layer), bank)
    entry = bank.entry(task)

    frozen_w = identity_weights(entry.dim, bank.config.head_count)
    prompted = prefix_attention(
        features.tap(backbone.score_layer), entry.prompt, frozen_w
    )
    fused = fuse_multimodal(prompted, entry.text, entry.w_t2i, entry.w_i2t)

    patch_scores = nn_min_distances(fused.image_enhanced, retrieve_knowledge(bank, task))
    pixel_map = None
    if out_hw is not None:
        pixel_map = upsample_scores(
            patch_scores,
            features.grid_h,
            features.grid_w,
            out_hw[0],
            out_hw[1],
            bank.config.sigma,
        )
    return AnomalyResult(
        routed_task=task,
        image_score=float(patch_scores.max()),
        patch_scores=patch_scores,
        pixel_map=pixel_map,
    )


def _bilinear_axis(out_n: int, src_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center-aligned source coordinates for 1-d bilinear resampling."""
    pos = (np.arange(out_n) + 0.5) * (src_n / out_n) - 0.5
    pos = np.clip(pos, 0.0, src_n - 1.0)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, src_n - 1)
    hi = np.minimum(lo + 1, src_n - 1)
    frac = pos - lo
    return lo, hi, frac


def upsample_scores(
    patch_scores,
    grid_h: int,
    grid_w: int,
    out_h: int,
    out_w: int,
    sigma: float = 4.0,
) -> np.ndarray:
    """Bilinear upsampling of a patch-score grid, then Gaussian smoothing.

    Interpolation is center-aligned (each patch's value sits at its cell
    center), so a constant patch map comes back as the same constant for any
    sigma.
    """
    scores = np.asarray(patch_scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] != grid_h * grid_w:
        raise ShapeError(
            f"patch_scores must have {grid_h * grid_w} entries, got {scores.shape}"
        )
    if out_h < grid_h or out_w < grid_w:
        raise ShapeError("output size must be at least the patch grid size")
    grid = scores.reshape(grid_h, grid_w)

    rlo, rhi, rfrac = _bilinear_axis(out_h, grid_h)
    clo, chi, cfrac = _bilinear_axis(out_w, grid_w)
    top = grid[rlo][:, clo] * (1 - cfrac) + grid[rlo][:, chi] * cfrac
    bot = grid[rhi][:, clo] * (1 - cfrac) + grid[rhi][:, chi] * cfrac
    dense = top * (1 - rfrac[:, None]) + bot * rfrac[:, None]

    if sigma > 0:
        dense = gaussian_filter(dense, sigma=sigma, mode="nearest", truncate=4.0)
    return dense
