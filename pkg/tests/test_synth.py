"""Synthetic benchmark generator: byte determinism, manifest shape, mask
alignment, and the anomaly-injection contract.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from continual_ad.bank import nn_min_distances
from continual_ad.errors import ConfigError
from continual_ad.synth import (
    SynthSpec,
    anomaly_direction,
    generate,
    region_tiling,
    task_prototypes,
    task_text,
)
from continual_ad.tensor_store import load_manifest, read_label_grid, read_tensor_f64


def small_spec(**kwargs):
    base = dict(
        tasks=3,
        train_per_task=2,
        test_normal_per_task=2,
        test_anomalous_per_task=2,
        image_h=32,
        image_w=32,
        grid_h=4,
        grid_w=4,
        regions=3,
        anomaly_block=2,
        dim=8,
        seed=0,
    )
    base.update(kwargs)
    return SynthSpec(**base)


def tree_bytes(root):
    root = Path(root)
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


# -- spec validation ---------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ConfigError):
        small_spec(image_h=30)  # not divisible by grid_h
    with pytest.raises(ConfigError):
        small_spec(anomaly_block=5)  # larger than the grid
    with pytest.raises(ConfigError):
        small_spec(regions=8)  # more than gh + gw - 1 = 7
    with pytest.raises(ConfigError):
        small_spec(anomaly_magnitude=-0.1)
    with pytest.raises(ConfigError):
        small_spec(tasks=0)
    small_spec(anomaly_magnitude=0.0)  # zero-strength anomalies are allowed


def test_tiling_styles_cycle_by_task():
    spec = small_spec()
    vert = region_tiling(spec, 0)
    horiz = region_tiling(spec, 1)
    diag = region_tiling(spec, 2)
    assert all(len(set(col)) == 1 for col in vert.T)  # vertical stripes
    assert all(len(set(row)) == 1 for row in horiz)   # horizontal stripes
    assert np.array_equal(horiz, vert.T)
    rows, cols = np.indices(diag.shape)
    flat_sum = (rows + cols).ravel()
    assert len({(s, v) for s, v in zip(flat_sum, diag.ravel())}) == len(set(flat_sum))
    for tiling in (vert, horiz, diag):
        assert set(np.unique(tiling)) == set(range(spec.regions))
    assert np.array_equal(region_tiling(spec, 3), vert)  # style cycles mod 3


def test_helper_streams_deterministic_and_distinct():
    spec = small_spec()
    assert np.array_equal(task_prototypes(spec, 1), task_prototypes(spec, 1))
    assert not np.array_equal(task_prototypes(spec, 1), task_prototypes(spec, 2))
    d = anomaly_direction(spec, 0)
    assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(task_text(spec, 0)) == pytest.approx(1.0, abs=1e-12)
    assert task_prototypes(spec, 0).shape == (3, 64)


# -- generation --------------------------------------------------------------


def test_generate_is_byte_deterministic(tmp_path):
    spec = small_spec()
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)


def test_generate_manifest_shape(tmp_path):
    spec = small_spec()
    manifest = generate(spec, tmp_path)
    assert len(manifest.tasks) == 3
    for t, task in enumerate(manifest.tasks):
        assert task.name == f"task_{t:03d}"
        assert len(task.train_items) == 2
        assert len(task.test_items) == 4
        labels = [item.image_label for item in task.test_items]
        assert labels == [0, 0, 1, 1]
    reloaded = load_manifest(tmp_path / "manifest.json")
    assert [t.name for t in reloaded.tasks] == [t.name for t in manifest.tasks]


def test_generated_features_and_sidecar(tmp_path):
    manifest = generate(small_spec(), tmp_path)
    feat_path = manifest.tasks[0].train_items[0].features
    stack = read_tensor_f64(feat_path)
    assert stack.shape == (1, 16, 8)  # one tapped layer, 4x4 grid, dim 8
    sidecar = json.loads(Path(str(feat_path) + ".layers.json").read_text())
    assert sidecar == {"grid": [4, 4], "layers": [5]}
    text = read_tensor_f64(manifest.tasks[0].text_feature)
    assert text.shape == (8,)
    assert np.linalg.norm(text) == pytest.approx(1.0, abs=1e-6)  # f32 round trip


def test_generated_masks(tmp_path):
    spec = small_spec()
    manifest = generate(spec, tmp_path)
    for task in manifest.tasks:
        tiling_px_count = None
        for item in task.train_items:
            grid = read_label_grid(item.mask)
            assert grid.shape == (32, 32)
            assert set(np.unique(grid)) == set(range(spec.regions))
            if tiling_px_count is None:
                tiling_px_count = np.bincount(grid.ravel())
            # every train mask of a task carries the same tiling
            assert np.array_equal(np.bincount(grid.ravel()), tiling_px_count)
        for item in task.test_items:
            mask = read_label_grid(item.pixel_mask)
            assert mask.shape == (32, 32)
            if item.image_label == 0:
                assert mask.sum() == 0
            else:
                # a 2x2 patch block at 8x8 pixels per patch
                assert mask.sum() == 16 * 16
                rows = np.nonzero(mask.any(axis=1))[0]
                cols = np.nonzero(mask.any(axis=0))[0]
                assert rows[0] % 8 == 0 and cols[0] % 8 == 0
                assert len(rows) == 16 and len(cols) == 16


def test_anomalous_block_features_stand_out(tmp_path):
    """Patch features under the anomaly mask must sit farther from the
    training set than the unmasked patches of the same image."""
    spec = small_spec(train_per_task=4)
    manifest = generate(spec, tmp_path)
    task = manifest.tasks[0]
    train_rows = np.vstack(
        [read_tensor_f64(item.features)[0] for item in task.train_items]
    )
    for item in task.test_items:
        if item.image_label != 1:
            continue
        rows = read_tensor_f64(item.features)[0]
        mask = read_label_grid(item.pixel_mask)
        patch_mask = mask[::8, ::8].astype(bool).ravel()  # one pixel per patch
        d = nn_min_distances(rows, train_rows)
        assert d[patch_mask].min() > d[~patch_mask].max()


def test_magnitude_zero_leaves_images_unshifted(tmp_path):
    """With magnitude 0 the anomalous stream degenerates to normal draws:
    normal/train files match the magnitude>0 run byte for byte, anomalous
    features differ only through the (now absent) shift."""
    spec_on = small_spec(anomaly_magnitude=0.5)
    spec_off = small_spec(anomaly_magnitude=0.0)
    generate(spec_on, tmp_path / "on")
    generate(spec_off, tmp_path / "off")
    on, off = tree_bytes(tmp_path / "on"), tree_bytes(tmp_path / "off")
    assert on.keys() == off.keys()
    for name in on:
        if "test_anom" in name and name.endswith(".mtns") and "mask" not in name:
            assert on[name] != off[name]
        else:
            assert on[name] == off[name]
