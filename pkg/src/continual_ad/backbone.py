"""Feature extraction stand-ins for the pretrained image/text backbones.

Two kinds of extractor are supported:

  * ``synthetic``   -- a fixed-seed per-layer linear projection of raw patch
    pixels followed by tanh.  Each patch is mapped independently, so changing
    one patch changes exactly one feature row (an exact locality property the
    tests rely on).
  * ``precomputed`` -- features read back from a tensor file written by the
    benchmark generator or by an external exporter.  Rank-3 files carry one
    slab per tapped layer (a sidecar JSON names the layer indices); rank-2
    files carry a single tap that is served for every requested layer.

Routing always consumes raw tap features; prompts only enter downstream in
the attention stack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateVectorError, ShapeError, TapError
from .tensor_store import read_tensor_f64


@dataclass
class PatchFeatureMap:
    """Multi-layer patch features for one image on a grid_h x grid_w grid."""

    grid_h: int
    grid_w: int
    dim: int
    layer_taps: dict[int, np.ndarray]

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ShapeError(f"bad grid {self.grid_h}x{self.grid_w}")
        m = self.grid_h * self.grid_w
        for layer, feats in self.layer_taps.items():
            feats = np.asarray(feats, dtype=np.float64)
            if feats.shape != (m, self.dim):
                raise ShapeError(
                    f"tap {layer} has shape {feats.shape}, expected {(m, self.dim)}"
                )
            self.layer_taps[layer] = feats

    @property
    def patch_count(self) -> int:
        return self.grid_h * self.grid_w

    def tap(self, layer: int) -> np.ndarray:
        if layer not in self.layer_taps:
            raise TapError(
                f"layer {layer} not extracted (have {sorted(self.layer_taps)})"
            )
        return self.layer_taps[layer]


@dataclass
class TextFeature:
    dim: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.shape[0] != self.dim:
            raise ShapeError(f"text feature must be ({self.dim},)")
        if np.linalg.norm(self.values) == 0.0:
            raise DegenerateVectorError("zero-norm text feature")


@dataclass
class BackboneConfig:
    kind: str = "synthetic"
    seed: int = 0
    key_layer: int = 5
    score_layer: int = 5
    dim: int = 32

    def __post_init__(self):
        if self.kind not in ("synthetic", "precomputed"):
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.key_layer < 0 or self.score_layer < 0:
            raise ConfigError("layer taps must be non-negative")

    @property
    def tap_layers(self) -> tuple[int, ...]:
        return tuple(sorted({self.key_layer, self.score_layer}))


def _projection(seed: int, layer: int, pixels_per_patch: int, dim: int) -> np.ndarray:
    """The per-layer projection matrix, regenerated deterministically on demand."""
    rng = np.random.default_rng([seed, layer])
    return rng.normal(0.0, 1.0 / np.sqrt(pixels_per_patch), (pixels_per_patch, dim))


def synthetic_features(patch_pixels: np.ndarray, cfg: BackboneConfig) -> PatchFeatureMap:
    """Project per-patch pixel vectors into feature space, layer by layer.

    `patch_pixels` is (grid_h, grid_w, P): one flattened pixel vector per
    patch cell.
    """
    px = np.asarray(patch_pixels, dtype=np.float64)
    if px.ndim != 3:
        raise ShapeError(f"patch pixels must be rank 3, got rank {px.ndim}")
    gh, gw, p = px.shape
    flat = px.reshape(gh * gw, p)
    taps = {}
    for layer in cfg.tap_layers:
        w = _projection(cfg.seed, layer, p, cfg.dim)
        taps[layer] = np.tanh(flat @ w)
    return PatchFeatureMap(grid_h=gh, grid_w=gw, dim=cfg.dim, layer_taps=taps)


def _load_sidecar(path: Path) -> tuple[list[int], tuple[int, int] | None]:
    sidecar = path.with_name(path.name + ".layers.json")
    if not sidecar.exists():
        return [], None
    meta = json.loads(sidecar.read_text())
    layers = [int(x) for x in meta.get("layers", [])]
    grid = meta.get("grid")
    if grid is not None:
        grid = (int(grid[0]), int(grid[1]))
    return layers, grid


def _infer_grid(m: int, grid: tuple[int, int] | None) -> tuple[int, int]:
    if grid is not None:
        if grid[0] * grid[1] != m:
            raise ShapeError(f"grid {grid} does not cover {m} patches")
        return grid
    side = int(round(np.sqrt(m)))
    if side * side != m:
        raise ShapeError(f"cannot infer a square grid from {m} patches")
    return side, side


def precomputed_features(path, cfg: BackboneConfig) -> PatchFeatureMap:
    """Read a feature tensor written by the generator or an external exporter."""
    path = Path(path)
    arr = read_tensor_f64(path)
    layers, grid = _load_sidecar(path)

    if arr.ndim == 2:
        m, d = arr.shape
        gh, gw = _infer_grid(m, grid)
        taps = {layer: arr for layer in cfg.tap_layers}
        return PatchFeatureMap(grid_h=gh, grid_w=gw, dim=d, layer_taps=taps)
    if arr.ndim != 3:
        raise ShapeError(f"feature tensor must be rank 2 or 3, got rank {arr.ndim}")

    n_layers, m, d = arr.shape
    if not layers:
        layers = list(range(n_layers))
    if len(layers) != n_layers:
        raise ShapeError(
            f"sidecar names {len(layers)} layers for {n_layers} slabs in {path.name}"
        )
    slab = {layer: arr[i] for i, layer in enumerate(layers)}
    for wanted in cfg.tap_layers:
        if wanted not in slab:
            raise TapError(f"layer {wanted} missing from {path.name} (have {layers})")
    gh, gw = _infer_grid(m, grid)
    taps = {layer: slab[layer] for layer in cfg.tap_layers}
    return PatchFeatureMap(grid_h=gh, grid_w=gw, dim=d, layer_taps=taps)


def extract_patches(source, cfg: BackboneConfig) -> PatchFeatureMap:
    """Dispatch on the configured backbone kind."""
    if cfg.kind == "synthetic":
        return synthetic_features(source, cfg)
    return precomputed_features(source, cfg)


def extract_text(path) -> TextFeature:
    """Load a rank-1 text feature tensor."""
    arr = read_tensor_f64(path)
    if arr.ndim != 1:
        raise ShapeError(f"text feature must be rank 1, got rank {arr.ndim}")
    return TextFeature(dim=arr.shape[0], values=arr)
