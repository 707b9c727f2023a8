"""A complete continual run on a small synthetic benchmark.

Generates three tasks, trains them in sequence, and prints the per-task
metric matrix, routing accuracy, and both forgetting normalizations.  The
frozen-per-task design means earlier columns of the matrix never move after
their own checkpoint — forgetting is structurally zero.
"""

import tempfile
from pathlib import Path

import numpy as np

from continual_ad.harness import run_continual
from continual_ad.synth import SynthSpec, generate
from continual_ad.trainer import TrainConfig

spec = SynthSpec(
    tasks=3,
    train_per_task=12,
    test_normal_per_task=8,
    test_anomalous_per_task=8,
    image_h=64,
    image_w=64,
    grid_h=8,
    grid_w=8,
    dim=16,
    seed=7,
)
cfg = TrainConfig(epochs=15, prompt_length=3, key_ratio=0.25, coreset_ratio=0.25)

with tempfile.TemporaryDirectory() as tmp:
    manifest = generate(spec, Path(tmp) / "bench")
    print(f"generated {len(manifest.tasks)} tasks under {manifest.root}")
    report, bank = run_continual(manifest, cfg)

print(f"\nwall clock: {report.wall_clock_seconds:.1f}s")
print(f"routing accuracy: {report.routing_accuracy:.3f}")

print("\nimage AUROC, checkpoints x tasks (rows grow as tasks arrive):")
matrix = report.matrices["image_auroc"].values
for t in range(matrix.shape[0]):
    cells = [
        f"{matrix[t, j]:.3f}" if np.isfinite(matrix[t, j]) else "  -  "
        for j in range(matrix.shape[1])
    ]
    print(f"  after task {t}: " + "  ".join(cells))

print("\nfinal per-task metrics:")
for name in ("image_auroc", "pixel_aupr", "pixel_pro"):
    row = ", ".join(
        "None" if v is None else f"{v:.3f}" for v in report.per_task[name]
    )
    print(f"  {name:12s}: {row}")

fm = report.forgetting["image_auroc"]
print(f"\nforgetting (standard): {fm['standard']:.6f}")
print(f"forgetting (paper):    {fm['paper']:.6f}")
print("\nmemory bank contents:")
for entry in bank.entries:
    print(
        f"  task {entry.task_id} ({entry.name}): "
        f"{entry.keys.shape[0]} keys, {entry.knowledge.shape[0]} knowledge rows, "
        f"prompt length {entry.prompt.length}"
    )
