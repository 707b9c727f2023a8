"""Deterministic synthetic continual-AD benchmark.

Each task gets its own set of region prototype vectors in patch-pixel space
and a region tiling over the patch grid (vertical stripes, horizontal
stripes, or diagonal bands, cycling by task).  Normal images are the tiled
prototypes plus Gaussian noise; anomalous test images additionally shift a
contiguous block of patches along a held-out unit direction, with a pixel
mask marking exactly that block.  Pseudo-label masks are the region tiling
rendered at pixel resolution.

Everything is derived from the SynthSpec seed through named substreams, so
a given SynthSpec generates byte-identical files on every run.  Features are written
already extracted (rank-3 layer stacks plus a sidecar naming the layers) so
downstream consumers exercise the precomputed-backbone path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig, synthetic_features
from .errors import ConfigError
from .tensor_store import DatasetManifest, load_manifest, tensor_from_array, write_tensor

# substream tags for the per-task RNGs
_PROTO, _DIRECTION, _TEXT, _TRAIN, _TEST_NORMAL, _TEST_ANOM = range(6)


@dataclass
class SynthSpec:
    tasks: int = 5
    train_per_task: int = 10
    test_normal_per_task: int = 10
    test_anomalous_per_task: int = 10
    image_h: int = 128
    image_w: int = 128
    grid_h: int = 8
    grid_w: int = 8
    regions: int = 4
    noise_std: float = 0.1
    anomaly_magnitude: float = 0.5
    anomaly_block: int = 3
    dim: int = 32
    key_layer: int = 5
    score_layer: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.tasks < 1:
            raise ConfigError(f"tasks must be >= 1, got {self.tasks}")
        if self.regions < 1:
            raise ConfigError(f"regions must be >= 1, got {self.regions}")
        if self.anomaly_magnitude < 0:
            raise ConfigError(
                f"anomaly_magnitude must be >= 0, got {self.anomaly_magnitude}"
            )
        if self.train_per_task < 1:
            raise ConfigError("need at least one training image per task")
        if self.image_h % self.grid_h or self.image_w % self.grid_w:
            raise ConfigError(
                f"image {self.image_h}x{self.image_w} must tile evenly into "
                f"{self.grid_h}x{self.grid_w} patches"
            )
        if self.anomaly_block > min(self.grid_h, self.grid_w):
            raise ConfigError("anomaly block larger than the patch grid")
        if self.regions > self.grid_h + self.grid_w - 1:
            raise ConfigError("more regions than the tilings can render")

    @property
    def patch_h(self) -> int:
        return self.image_h // self.grid_h

    @property
    def patch_w(self) -> int:
        return self.image_w // self.grid_w

    @property
    def pixels_per_patch(self) -> int:
        return self.patch_h * self.patch_w


def _rng(spec: SynthSpec, task: int, stream: int, item: int | None = None):
    key = [spec.seed, task, stream]
    if item is not None:
        key.append(item)
    return np.random.default_rng(key)


def region_tiling(spec: SynthSpec, task: int) -> np.ndarray:
    """Region id per patch cell; the tiling style cycles with the task index."""
    gh, gw, r = spec.grid_h, spec.grid_w, spec.regions
    rows = np.arange(gh)[:, None]
    cols = np.arange(gw)[None, :]
    style = task % 3
    if style == 0:
        grid = (cols * r) // gw + np.zeros((gh, 1), dtype=np.int64)
    elif style == 1:
        grid = (rows * r) // gh + np.zeros((1, gw), dtype=np.int64)
    else:
        grid = ((rows + cols) * r) // (gh + gw - 1)
    return grid.astype(np.int64)


def task_prototypes(spec: SynthSpec, task: int) -> np.ndarray:
    """The (regions, pixels-per-patch) prototype matrix of one task."""
    rng = _rng(spec, task, _PROTO)
    return rng.normal(0.0, 1.0, (spec.regions, spec.pixels_per_patch))


def anomaly_direction(spec: SynthSpec, task: int) -> np.ndarray:
    """Unit pixel-space direction along which anomalies shift patches."""
    rng = _rng(spec, task, _DIRECTION)
    v = rng.normal(0.0, 1.0, spec.pixels_per_patch)
    return v / np.linalg.norm(v)


def task_text(spec: SynthSpec, task: int) -> np.ndarray:
    rng = _rng(spec, task, _TEXT)
    v = rng.normal(0.0, 1.0, spec.dim)
    return v / np.linalg.norm(v)


def _normal_patches(spec: SynthSpec, task: int, rng) -> np.ndarray:
    """One normal image as (grid_h, grid_w, P) patch pixel vectors."""
    protos = task_prototypes(spec, task)
    tiling = region_tiling(spec, task)
    noise = rng.normal(0.0, spec.noise_std, (spec.grid_h, spec.grid_w, spec.pixels_per_patch))
    return protos[tiling] + noise


def _anomalous_patches(spec: SynthSpec, task: int, rng):
    """A normal image with one patch block shifted; returns (patches, pixel mask).

    The shift is scaled so its per-pixel RMS displacement equals
    anomaly_magnitude, making it directly comparable to noise_std.
    """
    patches = _normal_patches(spec, task, rng)
    b = spec.anomaly_block
    r0 = int(rng.integers(0, spec.grid_h - b + 1))
    c0 = int(rng.integers(0, spec.grid_w - b + 1))
    scale = spec.anomaly_magnitude * np.sqrt(spec.pixels_per_patch)
    patches[r0 : r0 + b, c0 : c0 + b] += scale * anomaly_direction(spec, task)

    mask = np.zeros((spec.image_h, spec.image_w), dtype=np.uint32)
    mask[
        r0 * spec.patch_h : (r0 + b) * spec.patch_h,
        c0 * spec.patch_w : (c0 + b) * spec.patch_w,
    ] = 1
    return patches, mask


def _pixel_labels(spec: SynthSpec, task: int) -> np.ndarray:
    tiling = region_tiling(spec, task)
    return np.repeat(np.repeat(tiling, spec.patch_h, axis=0), spec.patch_w, axis=1)


def _backbone(spec: SynthSpec) -> BackboneConfig:
    return BackboneConfig(
        kind="synthetic",
        seed=spec.seed,
        key_layer=spec.key_layer,
        score_layer=spec.score_layer,
        dim=spec.dim,
    )


def _write_features(path: Path, patches: np.ndarray, spec: SynthSpec, backbone: BackboneConfig):
    fmap = synthetic_features(patches, backbone)
    layers = sorted(fmap.layer_taps)
    stack = np.stack([fmap.layer_taps[layer] for layer in layers])
    write_tensor(path, tensor_from_array(stack.astype(np.float32)))
    sidecar = {"layers": layers, "grid": [fmap.grid_h, fmap.grid_w]}
    path.with_name(path.name + ".layers.json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n"
    )


def _write_mask(path: Path, grid: np.ndarray):
    write_tensor(path, tensor_from_array(np.asarray(grid, dtype=np.uint32)))


def generate(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write the full benchmark under out_dir and return its loaded manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    backbone = _backbone(spec)

    tasks_doc = []
    for t in range(spec.tasks):
        tdir = out / f"task_{t:03d}"
        tdir.mkdir(exist_ok=True)
        rel = tdir.name

        text_path = tdir / "text.mtns"
        write_tensor(text_path, tensor_from_array(task_text(spec, t).astype(np.float32)))

        label_grid = _pixel_labels(spec, t)
        train_items = []
        for i in range(spec.train_per_task):
            rng = _rng(spec, t, _TRAIN, i)
            patches = _normal_patches(spec, t, rng)
            feat = tdir / f"train_{i:03d}.mtns"
            mask = tdir / f"train_{i:03d}_mask.mtns"
            _write_features(feat, patches, spec, backbone)
            _write_mask(mask, label_grid)
            train_items.append(
                {"features": f"{rel}/{feat.name}", "mask": f"{rel}/{mask.name}"}
            )

        test_items = []
        for i in range(spec.test_normal_per_task):
            rng = _rng(spec, t, _TEST_NORMAL, i)
            patches = _normal_patches(spec, t, rng)
            feat = tdir / f"test_normal_{i:03d}.mtns"
            mask = tdir / f"test_normal_{i:03d}_mask.mtns"
            _write_features(feat, patches, spec, backbone)
            _write_mask(mask, np.zeros((spec.image_h, spec.image_w), dtype=np.uint32))
            test_items.append(
                {
                    "features": f"{rel}/{feat.name}",
                    "image_label": 0,
                    "pixel_mask": f"{rel}/{mask.name}",
                }
            )
        for i in range(spec.test_anomalous_per_task):
            rng = _rng(spec, t, _TEST_ANOM, i)
            patches, pixel_mask = _anomalous_patches(spec, t, rng)
            feat = tdir / f"test_anom_{i:03d}.mtns"
            mask = tdir / f"test_anom_{i:03d}_mask.mtns"
            _write_features(feat, patches, spec, backbone)
            _write_mask(mask, pixel_mask)
            test_items.append(
                {
                    "features": f"{rel}/{feat.name}",
                    "image_label": 1,
                    "pixel_mask": f"{rel}/{mask.name}",
                }
            )

        tasks_doc.append(
            {
                "name": f"task_{t:03d}",
                "text_feature": f"{rel}/{text_path.name}",
                "train_items": train_items,
                "test_items": test_items,
            }
        )

    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps({"tasks": tasks_doc}, indent=2, sort_keys=True) + "\n"
    )
    return load_manifest(manifest_path)
