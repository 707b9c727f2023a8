"""Dense linear-algebra and similarity primitives.

Matrices are 2-d float64 numpy arrays in row-major layout, vectors are 1-d
float64 arrays.  Every public operation validates shapes and finiteness up
front so that downstream modules can assume clean operands.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVectorError, ShapeError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a finite 2-d float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected 2-d array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"{name}: entries must be finite")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Validate and return `v` as a finite 1-d float64 array."""
    u = np.asarray(v, dtype=np.float64)
    if u.ndim != 1:
        raise ShapeError(f"{name}: expected 1-d array, got ndim={u.ndim}")
    if not np.all(np.isfinite(u)):
        raise ShapeError(f"{name}: entries must be finite")
    return u


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b with explicit inner-dimension checking."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting each row's maximum."""
    m = as_matrix(m, "m")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between u and v; both must have nonzero norm."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape[0] != v.shape[0]:
        raise ShapeError(f"cosine_similarity: dims differ, {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine_similarity: zero-norm input")
    return float(np.dot(u, v) / (nu * nv))


def l2_distance(u, v) -> float:
    """Euclidean distance between u and v."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape[0] != v.shape[0]:
        raise ShapeError(f"l2_distance: dims differ, {u.shape[0]} vs {v.shape[0]}")
    return float(np.sqrt(np.sum((u - v) ** 2)))


def unit_rows(f: np.ndarray, context: str = "rows") -> tuple[np.ndarray, np.ndarray]:
    """Return (row norms, row-normalized copy); rejects zero-norm rows."""
    norms = np.sqrt(np.sum(f * f, axis=1))
    if np.any(norms == 0.0):
        raise DegenerateVectorError(f"{context}: zero-norm row")
    return norms, f / norms[:, None]
