"""Prefix-tuned self-attention and bidirectional cross-modal attention.

Forward passes are pure functions; each has a matching backward that
propagates an upstream gradient to the inputs and projection weights.  The
backward code is hand-derived and checked against central finite differences
in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .linalg import as_matrix

__all__ = [
    "PromptParams",
    "AttentionWeights",
    "FusedFeatures",
    "prefix_attention",
    "cross_attention",
    "fuse_multimodal",
    "prefix_attention_forward",
    "prefix_attention_backward",
    "cross_attention_forward",
    "cross_attention_backward",
    "fuse_forward",
    "fuse_backward",
    "identity_weights",
]


@dataclass
class PromptParams:
    """Trainable prefix rows prepended to attention keys and values."""

    p_key: np.ndarray    # (length, dim)
    p_value: np.ndarray  # (length, dim)

    def __post_init__(self):
        self.p_key = np.asarray(self.p_key, dtype=np.float64)
        self.p_value = np.asarray(self.p_value, dtype=np.float64)
        if self.p_key.shape != self.p_value.shape or self.p_key.ndim != 2:
            raise ShapeError(
                f"prompt key/value shapes differ: {self.p_key.shape} vs {self.p_value.shape}"
            )
        if not (np.all(np.isfinite(self.p_key)) and np.all(np.isfinite(self.p_value))):
            raise ShapeError("prompt entries must be finite")

    @property
    def length(self) -> int:
        return self.p_key.shape[0]

    @property
    def dim(self) -> int:
        return self.p_key.shape[1]

    def copy(self) -> "PromptParams":
        return PromptParams(self.p_key.copy(), self.p_value.copy())


@dataclass
class AttentionWeights:
    """Query/key/value projection matrices for one attention block."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    head_count: int = 1

    def __post_init__(self):
        self.w_q = as_matrix(self.w_q, "w_q")
        self.w_k = as_matrix(self.w_k, "w_k")
        self.w_v = as_matrix(self.w_v, "w_v")
        d = self.w_q.shape[0]
        for name, w in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            if w.shape != (d, d):
                raise ShapeError(f"{name}: expected square ({d},{d}), got {w.shape}")
        if self.head_count < 1 or d % self.head_count != 0:
            raise ShapeError(
                f"dim {d} not divisible by head_count {self.head_count}"
            )

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    def copy(self) -> "AttentionWeights":
        return AttentionWeights(
            self.w_q.copy(), self.w_k.copy(), self.w_v.copy(), self.head_count
        )


@dataclass
class FusedFeatures:
    """Outputs of the bidirectional text/image fusion block."""

    image_enhanced: np.ndarray  # (M, D)
    text_refined: np.ndarray    # (D,)


def identity_weights(dim: int, head_count: int = 1) -> AttentionWeights:
    """Identity projections; the frozen stand-in for a pretrained block."""
    eye = np.eye(dim)
    return AttentionWeights(eye.copy(), eye.copy(), eye.copy(), head_count)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)  # (H, n, dh)


def _merge_heads(xh: np.ndarray) -> np.ndarray:
    h, n, dh = xh.shape
    return xh.transpose(1, 0, 2).reshape(n, h * dh)


def _softmax_last(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(a: np.ndarray, da: np.ndarray) -> np.ndarray:
    # a is the softmax output; returns gradient wrt the pre-softmax scores
    inner = np.sum(a * da, axis=-1, keepdims=True)
    return a * (da - inner)


def _attend(q, k, v, w: AttentionWeights):
    """Shared scaled-dot-product core; q/k/v are already projected (+prefixed)."""
    h = w.head_count
    dh = w.dim // h
    qh = _split_heads(q, h)
    kh = _split_heads(k, h)
    vh = _split_heads(v, h)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    attn = _softmax_last(scores)
    out = _merge_heads(attn @ vh)
    cache = (qh, kh, vh, attn, dh)
    return out, cache


def _attend_backward(cache, dout, heads):
    qh, kh, vh, attn, dh = cache
    doh = _split_heads(dout, heads)
    dattn = doh @ vh.transpose(0, 2, 1)
    dvh = attn.transpose(0, 2, 1) @ doh
    dscores = _softmax_backward(attn, dattn)
    dqh = dscores @ kh / np.sqrt(dh)
    dkh = dscores.transpose(0, 2, 1) @ qh / np.sqrt(dh)
    return _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)


# ---------------------------------------------------------------------------
# Prefix-tuned self-attention
# ---------------------------------------------------------------------------


def prefix_attention_forward(x, prompt: PromptParams, w: AttentionWeights):
    """Self-attention over x with prompt rows prepended to keys and values.

    Queries come from x alone, so the output keeps x's row count.  Returns
    (output, cache) where the cache feeds `prefix_attention_backward`.
    """
    x = as_matrix(x, "x_e")
    d = w.dim
    if x.shape[1] != d:
        raise ShapeError(f"prefix_attention: feature dim {x.shape[1]} != weight dim {d}")
    if prompt.length > 0 and prompt.dim != d:
        raise ShapeError(f"prefix_attention: prompt dim {prompt.dim} != weight dim {d}")

    q = x @ w.w_q
    kx = x @ w.w_k
    vx = x @ w.w_v
    k = np.concatenate([prompt.p_key, kx], axis=0) if prompt.length else kx
    v = np.concatenate([prompt.p_value, vx], axis=0) if prompt.length else vx
    out, core = _attend(q, k, v, w)
    cache = (x, w, prompt.length, core)
    return out, cache


def prefix_attention_backward(cache, dout):
    """Gradients of a prefix-attention output wrt x, prompt, and projections."""
    x, w, lp, core = cache
    dq, dk, dv = _attend_backward(core, dout, w.head_count)
    dp_key, dkx = dk[:lp], dk[lp:]
    dp_value, dvx = dv[:lp], dv[lp:]
    dx = dq @ w.w_q.T + dkx @ w.w_k.T + dvx @ w.w_v.T
    dw_q = x.T @ dq
    dw_k = x.T @ dkx
    dw_v = x.T @ dvx
    return dx, dp_key, dp_value, dw_q, dw_k, dw_v


def prefix_attention(x, prompt: PromptParams, w: AttentionWeights) -> np.ndarray:
    out, _ = prefix_attention_forward(x, prompt, w)
    return out


# ---------------------------------------------------------------------------
# Cross-modal attention
# ---------------------------------------------------------------------------


def cross_attention_forward(query_src, kv_src, w: AttentionWeights):
    """Attention with queries from one modality and keys/values from the other."""
    query_src = as_matrix(query_src, "query_src")
    kv_src = as_matrix(kv_src, "kv_src")
    d = w.dim
    if query_src.shape[1] != d or kv_src.shape[1] != d:
        raise ShapeError(
            f"cross_attention: dims {query_src.shape[1]}/{kv_src.shape[1]} != weight dim {d}"
        )
    q = query_src @ w.w_q
    k = kv_src @ w.w_k
    v = kv_src @ w.w_v
    out, core = _attend(q, k, v, w)
    cache = (query_src, kv_src, w, core)
    return out, cache


def cross_attention_backward(cache, dout):
    query_src, kv_src, w, core = cache
    dq, dk, dv = _attend_backward(core, dout, w.head_count)
    dquery = dq @ w.w_q.T
    dkv = dk @ w.w_k.T + dv @ w.w_v.T
    dw_q = query_src.T @ dq
    dw_k = kv_src.T @ dk
    dw_v = kv_src.T @ dv
    return dquery, dkv, dw_q, dw_k, dw_v


def cross_attention(query_src, kv_src, w: AttentionWeights) -> np.ndarray:
    out, _ = cross_attention_forward(query_src, kv_src, w)
    return out


# ---------------------------------------------------------------------------
# Bidirectional fusion
# ---------------------------------------------------------------------------


def fuse_forward(image, text, w_t2i: AttentionWeights, w_i2t: AttentionWeights):
    """Residual text->image and image->text attention.

    image is (M, D), text is a single (D,) vector treated as a one-row
    sequence.  Both outputs keep their input shape.
    """
    image = as_matrix(image, "image")
    text = np.asarray(text, dtype=np.float64)
    if text.ndim != 1 or text.shape[0] != image.shape[1]:
        raise ShapeError(f"fuse: text dim {text.shape} incompatible with image {image.shape}")
    text_row = text[None, :]
    t2i, cache_t2i = cross_attention_forward(image, text_row, w_t2i)
    i2t, cache_i2t = cross_attention_forward(text_row, image, w_i2t)
    fused = FusedFeatures(image_enhanced=image + t2i, text_refined=(text_row + i2t)[0])
    return fused, (cache_t2i, cache_i2t)


def fuse_backward(cache, d_image_enhanced, d_text_refined):
    """Gradients wrt the fusion inputs and both weight sets."""
    cache_t2i, cache_i2t = cache
    d_text_row = np.asarray(d_text_refined, dtype=np.float64)[None, :]

    # image->text branch: queries are the text row, keys/values are the image
    d_text_q, d_image_kv, dw_q2, dw_k2, dw_v2 = cross_attention_backward(
        cache_i2t, d_text_row
    )
    # text->image branch: queries are the image, keys/values are the text row
    d_image_q, d_text_kv, dw_q1, dw_k1, dw_v1 = cross_attention_backward(
        cache_t2i, d_image_enhanced
    )

    d_image = d_image_enhanced + d_image_q + d_image_kv
    d_text = d_text_row + d_text_q + d_text_kv

    grads_t2i = (dw_q1, dw_k1, dw_v1)
    grads_i2t = (dw_q2, dw_k2, dw_v2)
    return d_image, d_text[0], grads_t2i, grads_i2t


def fuse_multimodal(image, text, w_t2i: AttentionWeights, w_i2t: AttentionWeights) -> FusedFeatures:
    fused, _ = fuse_forward(image, text, w_t2i, w_i2t)
    return fused
