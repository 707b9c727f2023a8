"""Synthetic and precomputed feature extraction."""

import json

import numpy as np
import pytest

from continual_ad.backbone import (
    BackboneConfig,
    PatchFeatureMap,
    TextFeature,
    extract_patches,
    extract_text,
    precomputed_features,
    synthetic_features,
)
from continual_ad.errors import (
    ConfigError,
    DegenerateVectorError,
    ShapeError,
    TapError,
)
from continual_ad.tensor_store import tensor_from_array, write_tensor


def pixels(gh=3, gw=4, p=10, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(gh, gw, p))


def test_synthetic_deterministic():
    cfg = BackboneConfig(kind="synthetic", seed=5, dim=8)
    px = pixels()
    a = synthetic_features(px, cfg)
    b = synthetic_features(px, cfg)
    assert np.array_equal(a.tap(5), b.tap(5))
    # different seed, different features
    c = synthetic_features(px, BackboneConfig(kind="synthetic", seed=6, dim=8))
    assert not np.allclose(a.tap(5), c.tap(5))


def test_synthetic_locality_exact():
    """Editing one patch changes exactly that patch's feature row."""
    cfg = BackboneConfig(kind="synthetic", seed=1, dim=8)
    px = pixels()
    base = synthetic_features(px, cfg).tap(5)
    edited = px.copy()
    edited[1, 2] += 3.0
    out = synthetic_features(edited, cfg).tap(5)
    flat_index = 1 * 4 + 2
    changed = np.any(out != base, axis=1)
    assert changed[flat_index]
    assert changed.sum() == 1


def test_synthetic_does_not_mutate_input():
    cfg = BackboneConfig(kind="synthetic", seed=1, dim=4)
    px = pixels()
    snapshot = px.copy()
    synthetic_features(px, cfg)
    assert np.array_equal(px, snapshot)


def test_synthetic_distinct_layers_when_taps_differ():
    cfg = BackboneConfig(kind="synthetic", seed=1, key_layer=2, score_layer=5, dim=8)
    fmap = synthetic_features(pixels(), cfg)
    assert set(fmap.layer_taps) == {2, 5}
    assert not np.allclose(fmap.tap(2), fmap.tap(5))


def test_synthetic_rejects_bad_rank():
    cfg = BackboneConfig(kind="synthetic", dim=4)
    with pytest.raises(ShapeError):
        synthetic_features(np.zeros((4, 10)), cfg)


def test_patch_feature_map_validation():
    with pytest.raises(ShapeError):
        PatchFeatureMap(grid_h=2, grid_w=2, dim=3, layer_taps={5: np.zeros((3, 3))})
    fmap = PatchFeatureMap(grid_h=2, grid_w=2, dim=3, layer_taps={5: np.zeros((4, 3))})
    with pytest.raises(TapError):
        fmap.tap(7)


def test_precomputed_rank3_with_sidecar(tmp_path):
    rng = np.random.default_rng(2)
    stack = rng.normal(size=(2, 16, 32)).astype(np.float32)
    p = tmp_path / "f.mtns"
    write_tensor(p, tensor_from_array(stack))
    p.with_name("f.mtns.layers.json").write_text(json.dumps({"layers": [3, 5], "grid": [4, 4]}))
    cfg = BackboneConfig(kind="precomputed", key_layer=3, score_layer=5)
    fmap = precomputed_features(p, cfg)
    assert (fmap.grid_h, fmap.grid_w, fmap.dim) == (4, 4, 32)
    assert np.allclose(fmap.tap(3), stack[0])
    assert np.allclose(fmap.tap(5), stack[1])


def test_precomputed_missing_tap_layer(tmp_path):
    stack = np.zeros((1, 16, 8), dtype=np.float32)
    p = tmp_path / "f.mtns"
    write_tensor(p, tensor_from_array(stack))
    p.with_name("f.mtns.layers.json").write_text(json.dumps({"layers": [3], "grid": [4, 4]}))
    cfg = BackboneConfig(kind="precomputed", key_layer=5, score_layer=5)
    with pytest.raises(TapError):
        precomputed_features(p, cfg)


def test_precomputed_rank2_served_for_all_taps(tmp_path):
    arr = np.random.default_rng(0).normal(size=(9, 6)).astype(np.float32)
    p = tmp_path / "single.mtns"
    write_tensor(p, tensor_from_array(arr))
    cfg = BackboneConfig(kind="precomputed", key_layer=2, score_layer=5)
    fmap = precomputed_features(p, cfg)
    assert (fmap.grid_h, fmap.grid_w) == (3, 3)  # square grid inferred
    assert np.allclose(fmap.tap(2), fmap.tap(5))


def test_precomputed_nonsquare_needs_grid_sidecar(tmp_path):
    arr = np.zeros((12, 4), dtype=np.float32)
    p = tmp_path / "ns.mtns"
    write_tensor(p, tensor_from_array(arr))
    cfg = BackboneConfig(kind="precomputed")
    with pytest.raises(ShapeError):
        precomputed_features(p, cfg)
    p.with_name("ns.mtns.layers.json").write_text(json.dumps({"grid": [3, 4]}))
    fmap = precomputed_features(p, cfg)
    assert (fmap.grid_h, fmap.grid_w) == (3, 4)


def test_extract_patches_dispatch(tmp_path):
    cfg = BackboneConfig(kind="synthetic", dim=4)
    fmap = extract_patches(pixels(p=6), cfg)
    assert fmap.dim == 4
    arr = np.ones((4, 4), dtype=np.float32)
    p = tmp_path / "pre.mtns"
    write_tensor(p, tensor_from_array(arr))
    fmap2 = extract_patches(p, BackboneConfig(kind="precomputed"))
    assert fmap2.patch_count == 4


def test_extract_text(tmp_path):
    p = tmp_path / "t.mtns"
    write_tensor(p, tensor_from_array(np.arange(1, 33, dtype=np.float32)))
    tf = extract_text(p)
    assert tf.dim == 32

    p2 = tmp_path / "bad_rank.mtns"
    write_tensor(p2, tensor_from_array(np.ones((2, 2), dtype=np.float32)))
    with pytest.raises(ShapeError):
        extract_text(p2)

    p3 = tmp_path / "zeros.mtns"
    write_tensor(p3, tensor_from_array(np.zeros(8, dtype=np.float32)))
    with pytest.raises(DegenerateVectorError):
        extract_text(p3)


def test_text_feature_validation():
    with pytest.raises(DegenerateVectorError):
        TextFeature(dim=3, values=np.zeros(3))
    with pytest.raises(ShapeError):
        TextFeature(dim=3, values=np.ones(4))


def test_backbone_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(kind="quantum")
    with pytest.raises(ConfigError):
        BackboneConfig(dim=0)
