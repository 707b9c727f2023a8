"""From a trained task to an anomaly map, one step at a time.

Trains a single synthetic task, then walks a normal and an anomalous test
image through routing, prompt adaptation, fusion, nearest-neighbor scoring,
and the pixel map, printing the numbers at each stage.
"""

import tempfile
from pathlib import Path

import numpy as np

from continual_ad.backbone import BackboneConfig, extract_patches, extract_text
from continual_ad.bank import MemoryBank, route_scores
from continual_ad.detector import detect
from continual_ad.synth import SynthSpec, generate
from continual_ad.tensor_store import read_label_grid
from continual_ad.trainer import LabeledImage, PseudoLabelGrid, TrainConfig, train_task

np.set_printoptions(precision=4, suppress=True)

spec = SynthSpec(
    tasks=1,
    train_per_task=10,
    test_normal_per_task=1,
    test_anomalous_per_task=1,
    image_h=64,
    image_w=64,
    grid_h=8,
    grid_w=8,
    dim=16,
    seed=3,
)
cfg = TrainConfig(epochs=15, prompt_length=3, key_ratio=0.3, coreset_ratio=0.3)
backbone = BackboneConfig(kind="precomputed")

with tempfile.TemporaryDirectory() as tmp:
    manifest = generate(spec, Path(tmp) / "one_task")
    task = manifest.tasks[0]

    train_items = []
    for item in task.train_items:
        grid = read_label_grid(item.mask)
        train_items.append(
            LabeledImage(
                features=extract_patches(item.features, backbone),
                labels=PseudoLabelGrid(grid.shape[0], grid.shape[1], grid),
            )
        )
    text = extract_text(task.text_feature)

    entry, trace = train_task(0, task.name, train_items, text, cfg, backbone)
    print(f"trained '{task.name}': loss {trace[0].l_all:.4f} -> {trace[-1].l_all:.4f}")
    print(f"  keys coreset: {entry.keys.shape},  knowledge coreset: {entry.knowledge.shape}")

    bank = MemoryBank()
    bank.add_entry(entry)

    normal = next(i for i in task.test_items if i.image_label == 0)
    anomalous = next(i for i in task.test_items if i.image_label == 1)

    for label, item in (("normal", normal), ("anomalous", anomalous)):
        feats = extract_patches(item.features, backbone)
        _, scores = route_scores(feats.tap(backbone.key_layer), bank)
        result = detect(feats, bank, backbone, out_hw=(spec.image_h, spec.image_w))
        print(f"\n{label} test image:")
        print(f"  routing scores per task: {scores}  -> task {result.routed_task}")
        print(f"  patch score range: [{result.patch_scores.min():.4f}, "
              f"{result.patch_scores.max():.4f}]")
        print(f"  image score (max patch): {result.image_score:.4f}")
        print(f"  pixel map {result.pixel_map.shape}, "
              f"hottest pixel {result.pixel_map.max():.4f}")

        if item.pixel_mask is not None:
            mask = read_label_grid(item.pixel_mask)
            inside = result.pixel_map[mask > 0].mean()
            outside = result.pixel_map[mask == 0].mean()
            print(f"  mean map value inside true region {inside:.4f} "
                  f"vs outside {outside:.4f}")
