"""Evaluation metrics: AUROC, AUPR, PRO, and the forgetting measure.

All four are rank-based and exact (dense sweeps over distinct score values,
no fixed-step grids), which keeps them invariant under monotone rescaling
of the scores -- important here because anomaly scores are raw distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .errors import DegenerateLabelsError, ShapeError, SizeError


def _binary_pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"scores/labels length mismatch: {scores.shape} vs {labels.shape}")
    if scores.size == 0:
        raise SizeError("empty score vector")
    uniq = np.unique(labels)
    if not np.all(np.isin(uniq, (0, 1))):
        raise DegenerateLabelsError(f"labels must be 0/1, got {uniq}")
    return scores, labels.astype(np.int64)


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties count 1/2)."""
    scores, labels = _binary_pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("auroc needs both classes present")
    ranks = rankdata(scores)  # average ranks give the half-credit tie rule
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Average precision with step interpolation over distinct thresholds."""
    scores, labels = _binary_pair(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise DegenerateLabelsError("aupr needs both classes present")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # evaluate only at the last index of each distinct score block
    block_end = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    precision = tp[block_end] / (tp[block_end] + fp[block_end])
    recall = tp[block_end] / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * precision))


_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.int64)


def pro(pixel_maps, masks, fpr_cap: float = 0.3) -> float:
    """Per-region overlap, integrated over thresholds up to an FPR cap.

    `pixel_maps` and `masks` are parallel sequences of equally shaped 2-d
    arrays; masks are binary.  Regions are 8-connected components.  The area
    under the (FPR, mean-overlap) curve up to `fpr_cap` is normalized by the
    cap, so the result lives in [0, 1].
    """
    if not 0.0 < fpr_cap <= 1.0:
        raise ShapeError(f"fpr_cap must be in (0, 1], got {fpr_cap}")
    if isinstance(pixel_maps, np.ndarray) and pixel_maps.ndim == 2:
        pixel_maps = [pixel_maps]
        masks = [masks]
    if len(pixel_maps) != len(masks):
        raise ShapeError("pixel_maps and masks must pair up")

    all_scores = []
    all_weights = []  # per-pixel contribution to mean region overlap
    all_neg = []
    n_regions = 0
    region_labels = []
    for pm, mk in zip(pixel_maps, masks):
        pm = np.asarray(pm, dtype=np.float64)
        mk = np.asarray(mk)
        if pm.shape != mk.shape or pm.ndim != 2:
            raise ShapeError(f"map/mask shape mismatch: {pm.shape} vs {mk.shape}")
        binary = mk > 0
        lab, n = ndimage.label(binary, structure=_EIGHT_CONNECTED)
        region_labels.append((pm, lab, n))
        n_regions += n
    if n_regions == 0:
        raise DegenerateLabelsError("no anomalous regions in any mask")

    for pm, lab, n in region_labels:
        weights = np.zeros(pm.shape, dtype=np.float64)
        for r in range(1, n + 1):
            inside = lab == r
            weights[inside] = 1.0 / (n_regions * inside.sum())
        all_scores.append(pm.ravel())
        all_weights.append(weights.ravel())
        all_neg.append((lab == 0).ravel())

    scores = np.concatenate(all_scores)
    weights = np.concatenate(all_weights)
    neg = np.concatenate(all_neg).astype(np.float64)
    n_neg = neg.sum()
    if n_neg == 0:
        raise DegenerateLabelsError("no normal pixels to measure FPR against")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    cum_pro = np.cumsum(weights[order])
    cum_fpr = np.cumsum(neg[order]) / n_neg
    block_end = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    fpr = np.concatenate(([0.0], cum_fpr[block_end]))
    overlap = np.concatenate(([0.0], cum_pro[block_end]))

    if fpr[-1] < fpr_cap:
        cap = fpr[-1]
    else:
        cap = fpr_cap
        # insert the exact cap point by linear interpolation
        idx = int(np.searchsorted(fpr, fpr_cap, side="left"))
        if fpr[idx] > fpr_cap:
            f0, f1 = fpr[idx - 1], fpr[idx]
            p0, p1 = overlap[idx - 1], overlap[idx]
            pc = p0 + (p1 - p0) * (fpr_cap - f0) / (f1 - f0)
            fpr = np.concatenate((fpr[:idx], [fpr_cap]))
            overlap = np.concatenate((overlap[:idx], [pc]))
        else:
            fpr = fpr[: idx + 1]
            overlap = overlap[: idx + 1]
    if cap == 0.0:
        return 0.0
    return float(np.trapezoid(overlap, fpr) / cap)


@dataclass
class TaskResultMatrix:
    """Lower-triangular checkpoint-by-task metric matrix.

    values[l, j] = metric on task j measured after training task l; cells
    with j > l are undefined and held as NaN.
    """

    metric: str
    k: int
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.k < 1:
            raise SizeError("matrix needs k >= 1")
        if self.values is None:
            self.values = np.full((self.k, self.k), np.nan)
        else:
            self.values = np.asarray(self.values, dtype=np.float64)
            if self.values.shape != (self.k, self.k):
                raise ShapeError(f"values must be ({self.k}, {self.k})")

    def set(self, checkpoint: int, task: int, value: float):
        if not 0 <= task <= checkpoint < self.k:
            raise ShapeError(f"cell ({checkpoint}, {task}) outside the lower triangle")
        self.values[checkpoint, task] = float(value)

    def get(self, checkpoint: int, task: int) -> float:
        if not 0 <= task <= checkpoint < self.k:
            raise ShapeError(f"cell ({checkpoint}, {task}) outside the lower triangle")
        return float(self.values[checkpoint, task])


def forgetting_measure(matrix, paper_normalization: bool = False) -> float:
    """Average drop from each task's best past score to its final score.

    Default normalization divides by (k-1); `paper_normalization` divides by
    (k-1)*k instead.  Negative values (final improvement) are not clamped.
    """
    values = matrix.values if isinstance(matrix, TaskResultMatrix) else np.asarray(matrix)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ShapeError(f"matrix must be square, got {values.shape}")
    k = values.shape[0]
    if k < 2:
        raise SizeError("forgetting measure needs at least 2 checkpoints")
    total = 0.0
    for j in range(k - 1):
        best = np.nanmax(values[j : k - 1, j])
        total += best - values[k - 1, j]
    denom = (k - 1) * k if paper_normalization else (k - 1)
    return float(total / denom)
