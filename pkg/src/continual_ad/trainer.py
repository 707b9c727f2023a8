"""Per-task training: pseudo-label projection and the optimization loop.

`train_task` owns the full life of one task: seed-controlled initialization
of the prompt, fusion weights and learnable key; full-batch gradient descent
on the combined objective; and condensation of the trained features into a
memory-bank entry.  Full-batch updates keep the loop free of batching
nondeterminism, so a fixed (seed, data, config) triple reproduces the entry
bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import (
    AttentionWeights,
    PromptParams,
    identity_weights,
    fuse_multimodal,
    prefix_attention,
)
from .backbone import BackboneConfig, PatchFeatureMap, TextFeature
from .bank import TaskMemoryEntry, build_entry
from .errors import ConfigError, NumericError, ShapeError, SizeError
from .losses import (
    LossBreakdown,
    TrainableParams,
    TrainingBatch,
    TrainingItem,
    grad_total_loss,
)


@dataclass
class PseudoLabelGrid:
    """Pixel-level region ids for one training image."""

    h: int
    w: int
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.h, self.w):
            raise ShapeError(f"labels must be ({self.h}, {self.w})")
        if self.h < 1 or self.w < 1:
            raise SizeError("empty pseudo-label grid")
        if self.labels.min() < 0:
            raise ShapeError("region ids must be non-negative")


@dataclass
class LabeledImage:
    """One training image: extracted features plus its pseudo-label grid."""

    features: PatchFeatureMap
    labels: PseudoLabelGrid


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.05
    tau: float = 0.07
    lam: float = 1.0
    prompt_length: int = 5
    key_ratio: float = 0.1
    coreset_ratio: float = 0.1
    seed: int = 0
    head_count: int = 1
    batch_wide_contrast: bool = False
    exclude_self_pairs: bool = False
    freeze_fusion: bool = False
    fps_start: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.prompt_length < 0:
            raise ConfigError(f"prompt_length must be >= 0, got {self.prompt_length}")
        if self.head_count < 1:
            raise ConfigError(f"head_count must be >= 1, got {self.head_count}")


def _cell_slices(total: int, cells: int):
    """Floor partition of `total` pixels into `cells` runs; last absorbs the rest."""
    if cells < 1 or cells > total:
        raise SizeError(f"cannot split {total} pixels into {cells} cells")
    size = total // cells
    edges = [i * size for i in range(cells)] + [total]
    return [(edges[i], edges[i + 1]) for i in range(cells)]


def patchify_labels(grid: PseudoLabelGrid, grid_h: int, grid_w: int) -> np.ndarray:
    """Project a pixel label grid to patch labels by per-cell majority vote.

    Ties go to the smallest region id.  Returns a length grid_h*grid_w int
    array in row-major patch order.
    """
    rows = _cell_slices(grid.h, grid_h)
    cols = _cell_slices(grid.w, grid_w)
    out = np.empty(grid_h * grid_w, dtype=np.int64)
    i = 0
    for r0, r1 in rows:
        for c0, c1 in cols:
            cell = grid.labels[r0:r1, c0:c1].ravel()
            ids, counts = np.unique(cell, return_counts=True)
            out[i] = ids[np.argmax(counts)]  # unique() sorts, so ties pick smallest
            i += 1
    return out


def _init_params(dim: int, cfg: TrainConfig, key_rows: np.ndarray) -> TrainableParams:
    rng = np.random.default_rng(cfg.seed)
    p_key = rng.uniform(-0.02, 0.02, (cfg.prompt_length, dim))
    p_value = rng.uniform(-0.02, 0.02, (cfg.prompt_length, dim))

    def noisy_identity():
        return np.eye(dim) + rng.uniform(-0.02, 0.02, (dim, dim))

    w_t2i = AttentionWeights(
        noisy_identity(), noisy_identity(), noisy_identity(), cfg.head_count
    )
    w_i2t = AttentionWeights(
        noisy_identity(), noisy_identity(), noisy_identity(), cfg.head_count
    )
    return TrainableParams(
        prompt=PromptParams(p_key=p_key, p_value=p_value),
        w_t2i=w_t2i,
        w_i2t=w_i2t,
        learnable_key=key_rows.mean(axis=0),
    )


def _fused_stack(items, params, frozen_w, text, score_layer):
    rows = []
    for item in items:
        prompted = prefix_attention(
            item.features.tap(score_layer), params.prompt, frozen_w
        )
        fused = fuse_multimodal(prompted, text, params.w_t2i, params.w_i2t)
        rows.append(fused.image_enhanced)
    return np.concatenate(rows, axis=0)


def train_task(
    task_id: int,
    name: str,
    items: list[LabeledImage],
    text: TextFeature,
    cfg: TrainConfig,
    backbone: BackboneConfig,
) -> tuple[TaskMemoryEntry, list[LossBreakdown]]:
    """Optimize one task's trainable parameters and condense its memory entry."""
    if not items:
        raise SizeError("no training items")
    dim = items[0].features.dim
    for item in items:
        if item.features.dim != dim:
            raise ShapeError("training items disagree on feature dim")

    key_stacks = [item.features.tap(backbone.key_layer) for item in items]
    all_key_rows = np.concatenate(key_stacks, axis=0)

    batch_items = []
    for item, key_rows in zip(items, key_stacks):
        labels = patchify_labels(
            item.labels, item.features.grid_h, item.features.grid_w
        )
        batch_items.append(
            TrainingItem(
                features=item.features.tap(backbone.score_layer),
                labels=labels,
                key_query=key_rows.mean(axis=0),
            )
        )
    batch = TrainingBatch(items=batch_items, text=text.values)

    params = _init_params(dim, cfg, all_key_rows)
    frozen_w = identity_weights(dim, cfg.head_count)
    lr = cfg.learning_rate

    trace: list[LossBreakdown] = []
    for epoch in range(cfg.epochs):
        try:
            breakdown, grads = grad_total_loss(
                params, batch, frozen_w, cfg.tau, cfg.lam,
                exclude_self_pairs=cfg.exclude_self_pairs,
                batch_wide_contrast=cfg.batch_wide_contrast,
            )
        except NumericError as err:
            raise NumericError(f"epoch {epoch}: {err}") from err
        trace.append(breakdown)

        params.prompt.p_key -= lr * grads.p_key
        params.prompt.p_value -= lr * grads.p_value
        if not cfg.freeze_fusion:
            params.w_t2i.w_q -= lr * grads.t2i[0]
            params.w_t2i.w_k -= lr * grads.t2i[1]
            params.w_t2i.w_v -= lr * grads.t2i[2]
            params.w_i2t.w_q -= lr * grads.i2t[0]
            params.w_i2t.w_k -= lr * grads.i2t[1]
            params.w_i2t.w_v -= lr * grads.i2t[2]
        params.learnable_key -= lr * grads.learnable_key

    fused_knowledge = _fused_stack(
        items, params, frozen_w, text.values, backbone.score_layer
    )
    entry = build_entry(
        task_id=task_id,
        name=name,
        key_feats=all_key_rows,
        fused_knowledge=fused_knowledge,
        prompt=params.prompt,
        learnable_key=params.learnable_key,
        text=text.values,
        w_t2i=params.w_t2i,
        w_i2t=params.w_i2t,
        key_ratio=cfg.key_ratio,
        coreset_ratio=cfg.coreset_ratio,
        start=cfg.fps_start,
    )
    return entry, trace


def save_loss_trace(path, trace: list[LossBreakdown]):
    """Write a per-epoch loss trace as CSV."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_contra", "l_cross", "l_kp", "l_all"])
        for epoch, row in enumerate(trace):
            writer.writerow(
                [epoch, repr(row.l_contra), repr(row.l_cross), repr(row.l_kp), repr(row.l_all)]
            )
