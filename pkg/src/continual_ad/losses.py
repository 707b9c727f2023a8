"""Training losses and their gradients.

Three terms make up the training objective for one task:

  * a region-level contrastive loss over patch features, where patches with
    the same pseudo-label attract (linear reward on similarity) and patches
    with different labels repel (exponential penalty on similarity);
  * a cross-modal loss pushing every patch feature toward the task's text
    feature under a softmax over patch/text cosines;
  * a key-match loss, the cosine distance between a query vector and the
    task's learnable key.

All cosines are temperature-scaled by `tau`.  Gradients are hand-derived;
`grad_total_loss` composes them through the attention stack and is checked
against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionWeights,
    PromptParams,
    fuse_forward,
    fuse_backward,
    prefix_attention_forward,
    prefix_attention_backward,
)
from .errors import ConfigError, NumericError, ShapeError
from .linalg import as_matrix, as_vector, unit_rows


@dataclass
class LossBreakdown:
    """One evaluation of the combined objective."""

    l_contra: float
    l_cross: float
    l_kp: float
    lam: float
    l_all: float


def total_loss(l_contra: float, l_cross: float, l_kp: float, lam: float) -> LossBreakdown:
    """Combine the three terms; the total is exactly contra + cross + lam * kp."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    return LossBreakdown(
        l_contra=float(l_contra),
        l_cross=float(l_cross),
        l_kp=float(l_kp),
        lam=float(lam),
        l_all=float(l_contra) + float(l_cross) + float(lam) * float(l_kp),
    )


def _check_tau(tau: float) -> float:
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    return float(tau)


def _cosine_core(f: np.ndarray, tau: float):
    """Row norms, unit rows, cosine matrix (diagonal pinned to 1), scaled matrix."""
    norms, u = unit_rows(f, "similarity rows")
    c = u @ u.T
    np.fill_diagonal(c, 1.0)
    return norms, u, c, c / tau


def similarity_matrix(f, tau: float) -> np.ndarray:
    """Pairwise cosine similarities of the rows of f, divided by tau."""
    f = as_matrix(f, "f")
    tau = _check_tau(tau)
    return _cosine_core(f, tau)[3]


def region_mask(labels) -> np.ndarray:
    """Binary M x M matrix: 1 where two patches share a region label."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-d, got ndim={labels.ndim}")
    if labels.size and labels.min() < 0:
        raise ShapeError("labels must be non-negative region ids")
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def region_contrastive_loss(f, labels, tau: float, exclude_self_pairs: bool = False) -> float:
    """Mean over all ordered patch pairs of -S*mask + (1-mask)*exp(S).

    Self-pairs are included by default; each contributes a constant -1/tau.
    The 1/M^2 normalization is kept either way.
    """
    loss, _ = region_contrastive_grad(f, labels, tau, exclude_self_pairs)
    return loss


def region_contrastive_grad(f, labels, tau: float, exclude_self_pairs: bool = False):
    """Returns (loss, dloss/df)."""
    f = as_matrix(f, "f")
    tau = _check_tau(tau)
    m = f.shape[0]
    mask = region_mask(labels)
    if mask.shape[0] != m:
        raise ShapeError(f"labels length {mask.shape[0]} != patch count {m}")

    norms, u, c, s = _cosine_core(f, tau)
    e = np.exp(s)
    terms = -s * mask + (1.0 - mask) * e
    g = (-mask + (1.0 - mask) * e) / (tau * m * m)
    if exclude_self_pairs:
        np.fill_diagonal(terms, 0.0)
        np.fill_diagonal(g, 0.0)
    loss = float(terms.sum() / (m * m))

    # d cos(f_i, f_j) / d f_i = (u_j - c_ij u_i) / |f_i|; the diagonal drops
    # out on its own because c_ii is exactly 1.
    h = g + g.T
    coef = np.sum(h * c, axis=1)
    df = (h @ u - coef[:, None] * u) / norms[:, None]
    return loss, df


def cross_modal_loss(f, t, tau: float) -> float:
    """Mean negative log-softmax of patch/text cosine scores over one image."""
    loss, _, _ = cross_modal_grad(f, t, tau)
    return loss


def cross_modal_grad(f, t, tau: float):
    """Returns (loss, dloss/df, dloss/dt)."""
    f = as_matrix(f, "f")
    t = as_vector(t, "t")
    tau = _check_tau(tau)
    if f.shape[1] != t.shape[0]:
        raise ShapeError(f"cross_modal: dims {f.shape[1]} vs {t.shape[0]}")
    norms, u = unit_rows(f, "cross_modal rows")
    nt = np.linalg.norm(t)
    if nt == 0.0:
        from .errors import DegenerateVectorError

        raise DegenerateVectorError("cross_modal: zero-norm text feature")
    that = t / nt

    m = f.shape[0]
    c = u @ that
    z = c / tau
    zmax = z.max()
    expz = np.exp(z - zmax)
    sumexp = expz.sum()
    loss = float(zmax + np.log(sumexp) - z.mean())

    p = expz / sumexp
    gz = (p - 1.0 / m) / tau
    df = gz[:, None] * (that[None, :] - c[:, None] * u) / norms[:, None]
    dt = (gz[:, None] * (u - c[:, None] * that[None, :])).sum(axis=0) / nt
    return loss, df, dt


def key_prompt_loss(query, matched_key) -> float:
    """Cosine distance between a routing query and its matched key."""
    loss, _ = key_prompt_grad(query, matched_key)
    return loss


def key_prompt_grad(query, matched_key):
    """Returns (loss, dloss/dkey); the query is treated as data."""
    from .linalg import cosine_similarity

    q = as_vector(query, "query")
    k = as_vector(matched_key, "matched_key")
    c = cosine_similarity(q, k)
    nq = np.linalg.norm(q)
    nk = np.linalg.norm(k)
    dkey = -(q / nq - c * (k / nk)) / nk
    return 1.0 - c, dkey


# ---------------------------------------------------------------------------
# Composed objective over the attention stack
# ---------------------------------------------------------------------------


@dataclass
class TrainingItem:
    """One training image, reduced to what the objective needs."""

    features: np.ndarray   # (M, D) raw score-layer patch features
    labels: np.ndarray     # (M,) region ids
    key_query: np.ndarray  # (D,) routing query (mean key-layer feature)


@dataclass
class TrainingBatch:
    items: list[TrainingItem]
    text: np.ndarray  # (D,) task text feature


@dataclass
class TrainableParams:
    prompt: PromptParams
    w_t2i: AttentionWeights
    w_i2t: AttentionWeights
    learnable_key: np.ndarray

    def copy(self) -> "TrainableParams":
        return TrainableParams(
            prompt=self.prompt.copy(),
            w_t2i=self.w_t2i.copy(),
            w_i2t=self.w_i2t.copy(),
            learnable_key=self.learnable_key.copy(),
        )


@dataclass
class ParamGrads:
    p_key: np.ndarray
    p_value: np.ndarray
    t2i: tuple[np.ndarray, np.ndarray, np.ndarray]
    i2t: tuple[np.ndarray, np.ndarray, np.ndarray]
    learnable_key: np.ndarray


def _forward_image(item: TrainingItem, params: TrainableParams, frozen_w: AttentionWeights, text):
    prompted, cache_pa = prefix_attention_forward(item.features, params.prompt, frozen_w)
    fused, cache_fu = fuse_forward(prompted, text, params.w_t2i, params.w_i2t)
    return fused, (cache_pa, cache_fu)


def _require_finite(value: float, term: str):
    if not np.isfinite(value):
        raise NumericError(f"non-finite value in {term}")
    return value


def evaluate_total_loss(
    params: TrainableParams,
    batch: TrainingBatch,
    frozen_w: AttentionWeights,
    tau: float,
    lam: float,
    exclude_self_pairs: bool = False,
    batch_wide_contrast: bool = False,
) -> LossBreakdown:
    """Forward-only evaluation of the combined objective on a batch."""
    breakdown, _ = _objective(
        params, batch, frozen_w, tau, lam,
        exclude_self_pairs, batch_wide_contrast, with_grads=False,
    )
    return breakdown


def grad_total_loss(
    params: TrainableParams,
    batch: TrainingBatch,
    frozen_w: AttentionWeights,
    tau: float,
    lam: float,
    exclude_self_pairs: bool = False,
    batch_wide_contrast: bool = False,
) -> tuple[LossBreakdown, ParamGrads]:
    """Loss plus gradients wrt prompt entries, fusion weights, learnable key."""
    breakdown, grads = _objective(
        params, batch, frozen_w, tau, lam,
        exclude_self_pairs, batch_wide_contrast, with_grads=True,
    )
    return breakdown, grads


def _objective(
    params, batch, frozen_w, tau, lam,
    exclude_self_pairs, batch_wide_contrast, with_grads,
):
    if not batch.items:
        raise ShapeError("empty training batch")
    tau = _check_tau(tau)
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    n = len(batch.items)

    fused_all = []
    caches = []
    for item in batch.items:
        fused, cache = _forward_image(item, params, frozen_w, batch.text)
        fused_all.append(fused)
        caches.append(cache)

    d_image = [None] * n
    d_text_refined = [None] * n

    # region-level contrast, per image or over the whole batch
    if batch_wide_contrast:
        stacked = np.concatenate([fz.image_enhanced for fz in fused_all], axis=0)
        all_labels = np.concatenate([item.labels for item in batch.items])
        l_contra, d_stacked = region_contrastive_grad(
            stacked, all_labels, tau, exclude_self_pairs
        )
        offset = 0
        for i, fz in enumerate(fused_all):
            m = fz.image_enhanced.shape[0]
            d_image[i] = d_stacked[offset : offset + m].copy()
            offset += m
    else:
        l_contra = 0.0
        for i, (item, fz) in enumerate(zip(batch.items, fused_all)):
            lc, dfc = region_contrastive_grad(
                fz.image_enhanced, item.labels, tau, exclude_self_pairs
            )
            l_contra += lc / n
            d_image[i] = dfc / n
    _require_finite(l_contra, "region contrastive loss")

    # cross-modal term against each image's refined text
    l_cross = 0.0
    for i, fz in enumerate(fused_all):
        lx, dfx, dtx = cross_modal_grad(fz.image_enhanced, fz.text_refined, tau)
        l_cross += lx / n
        d_image[i] = d_image[i] + dfx / n
        d_text_refined[i] = dtx / n
    _require_finite(l_cross, "cross-modal loss")

    # key-match term
    l_kp = 0.0
    dkey = np.zeros_like(params.learnable_key)
    for item in batch.items:
        lk, dk = key_prompt_grad(item.key_query, params.learnable_key)
        l_kp += lk / n
        dkey += dk / n
    _require_finite(l_kp, "key-match loss")

    breakdown = total_loss(l_contra, l_cross, l_kp, lam)
    _require_finite(breakdown.l_all, "total loss")
    if not with_grads:
        return breakdown, None

    d = params.learnable_key.shape[0]
    g_pk = np.zeros_like(params.prompt.p_key)
    g_pv = np.zeros_like(params.prompt.p_value)
    g_t2i = [np.zeros((d, d)) for _ in range(3)]
    g_i2t = [np.zeros((d, d)) for _ in range(3)]

    for i, (cache_pa, cache_fu) in enumerate(caches):
        d_prompted, _d_text, gt2i, gi2t = fuse_backward(
            cache_fu, d_image[i], d_text_refined[i]
        )
        for acc, g in zip(g_t2i, gt2i):
            acc += g
        for acc, g in zip(g_i2t, gi2t):
            acc += g
        _dx, dp_key, dp_value, _dwq, _dwk, _dwv = prefix_attention_backward(
            cache_pa, d_prompted
        )
        g_pk += dp_key
        g_pv += dp_value

    grads = ParamGrads(
        p_key=g_pk,
        p_value=g_pv,
        t2i=tuple(g_t2i),
        i2t=tuple(g_i2t),
        learnable_key=lam * dkey,
    )
    return breakdown, grads
