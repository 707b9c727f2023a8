"""Continual protocol: sequential training, checkpoint evaluation, reports.

Tasks are trained in manifest order.  After each task the whole suite seen
so far is re-evaluated, filling one lower-triangular matrix per metric;
forgetting measures come from those matrices under both normalizations.
Reports serialize to JSON/CSV with wall-clock timing kept out of the main
report file so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig, extract_patches, extract_text
from .bank import BankConfig, MemoryBank
from .detector import detect
from .errors import DegenerateLabelsError, SizeError
from .metrics import TaskResultMatrix, auroc, aupr, forgetting_measure, pro
from .tensor_store import DatasetManifest, read_label_grid
from .trainer import LabeledImage, LossBreakdown, TrainConfig, train_task
from .trainer import PseudoLabelGrid

METRIC_NAMES = ("image_auroc", "image_aupr", "pixel_auroc", "pixel_aupr", "pixel_pro")


@dataclass
class BenchmarkReport:
    tasks: list[str]
    checkpoints: int
    per_task: dict[str, list[float | None]]
    averages: dict[str, float | None]
    forgetting: dict[str, dict[str, float] | None]
    routing_accuracy: float
    matrices: dict[str, TaskResultMatrix]
    traces: list[list[LossBreakdown]]
    wall_clock_seconds: float
    config: dict


@dataclass
class _TestData:
    features: list      # PatchFeatureMap per item
    labels: np.ndarray  # image labels
    masks: list         # pixel mask or None per item


def _load_task_data(task, backbone):
    train = []
    for item in task.train_items:
        fmap = extract_patches(item.features, backbone)
        grid = read_label_grid(item.mask)
        train.append(
            LabeledImage(
                features=fmap,
                labels=PseudoLabelGrid(h=grid.shape[0], w=grid.shape[1], labels=grid),
            )
        )
    feats, labels, masks = [], [], []
    for item in task.test_items:
        feats.append(extract_patches(item.features, backbone))
        labels.append(item.image_label)
        masks.append(read_label_grid(item.pixel_mask) if item.pixel_mask else None)
    text = extract_text(task.text_feature)
    return train, text, _TestData(feats, np.asarray(labels, dtype=np.int64), masks)


def _evaluate_task(bank, backbone, data: _TestData, true_task: int):
    """Metrics for one task's test set under the current bank."""
    out = {name: None for name in METRIC_NAMES}
    hits = 0
    n = len(data.features)
    if n == 0:
        return out, hits, 0

    scores = np.empty(n)
    maps, masks = [], []
    for i, fmap in enumerate(data.features):
        mask = data.masks[i]
        res = detect(fmap, bank, backbone, out_hw=mask.shape if mask is not None else None)
        scores[i] = res.image_score
        if res.routed_task == true_task:
            hits += 1
        if mask is not None:
            maps.append(res.pixel_map)
            masks.append(mask)

    def guarded(fn, *args):
        try:
            return fn(*args)
        except (DegenerateLabelsError, SizeError):
            return None

    out["image_auroc"] = guarded(auroc, scores, data.labels)
    out["image_aupr"] = guarded(aupr, scores, data.labels)
    if maps:
        flat_scores = np.concatenate([m.ravel() for m in maps])
        flat_labels = np.concatenate([(m > 0).astype(np.int64).ravel() for m in masks])
        out["pixel_auroc"] = guarded(auroc, flat_scores, flat_labels)
        out["pixel_aupr"] = guarded(aupr, flat_scores, flat_labels)
        out["pixel_pro"] = guarded(pro, maps, masks)
    return out, hits, n


def _bank_config(train_cfg, backbone, route_mode, route_with_learnable_key, sigma):
    return BankConfig(
        tau=train_cfg.tau,
        lam=train_cfg.lam,
        key_layer=backbone.key_layer,
        score_layer=backbone.score_layer,
        key_ratio=train_cfg.key_ratio,
        coreset_ratio=train_cfg.coreset_ratio,
        head_count=train_cfg.head_count,
        route_mode=route_mode,
        route_with_learnable_key=route_with_learnable_key,
        sigma=sigma,
    )


def continual_train(
    manifest: DatasetManifest,
    train_cfg: TrainConfig | None = None,
    backbone: BackboneConfig | None = None,
    route_mode: str = "max_cosine",
    route_with_learnable_key: bool = False,
    sigma: float = 4.0,
) -> tuple[MemoryBank, list[list[LossBreakdown]]]:
    """Train every task in manifest order; no checkpoint evaluation."""
    train_cfg = train_cfg or TrainConfig()
    backbone = backbone or BackboneConfig(kind="precomputed")
    bank = MemoryBank(
        config=_bank_config(train_cfg, backbone, route_mode, route_with_learnable_key, sigma)
    )
    traces = []
    for t, task in enumerate(manifest.tasks):
        train_items, text, _ = _load_task_data(task, backbone)
        entry, trace = train_task(t, task.name, train_items, text, train_cfg, backbone)
        bank.add_entry(entry)
        traces.append(trace)
    return bank, traces


def evaluate_suite(
    manifest: DatasetManifest,
    bank: MemoryBank,
    backbone: BackboneConfig | None = None,
) -> dict:
    """Score every task's test set against a frozen bank (single checkpoint)."""
    backbone = backbone or BackboneConfig(
        kind="precomputed",
        key_layer=bank.config.key_layer,
        score_layer=bank.config.score_layer,
    )
    per_task = {name: [] for name in METRIC_NAMES}
    names = []
    hits_total = n_total = 0
    for j, task in enumerate(manifest.tasks):
        _, _, test_data = _load_task_data(task, backbone)
        metrics, hits, n = _evaluate_task(bank, backbone, test_data, j)
        names.append(task.name)
        for name in METRIC_NAMES:
            per_task[name].append(metrics[name])
        hits_total += hits
        n_total += n
    averages = {}
    for name in METRIC_NAMES:
        present = [v for v in per_task[name] if v is not None]
        averages[name] = float(np.mean(present)) if present else None
    return {
        "format_version": 1,
        "tasks": names,
        "per_task": per_task,
        "averages": averages,
        "routing_accuracy": float(hits_total / n_total) if n_total else 0.0,
    }


def run_continual(
    manifest: DatasetManifest,
    train_cfg: TrainConfig | None = None,
    backbone: BackboneConfig | None = None,
    route_mode: str = "max_cosine",
    route_with_learnable_key: bool = False,
    sigma: float = 4.0,
) -> tuple[BenchmarkReport, MemoryBank]:
    """Train every task in order, evaluating the seen suite at each checkpoint."""
    t0 = time.perf_counter()
    train_cfg = train_cfg or TrainConfig()
    backbone = backbone or BackboneConfig(kind="precomputed")

    bank_cfg = _bank_config(
        train_cfg, backbone, route_mode, route_with_learnable_key, sigma
    )
    bank = MemoryBank(config=bank_cfg)

    k = len(manifest.tasks)
    matrices = {name: TaskResultMatrix(metric=name, k=k) for name in METRIC_NAMES}
    traces: list[list[LossBreakdown]] = []
    test_cache: list[_TestData] = []
    names: list[str] = []
    final_metrics: list[dict] = []
    routing_hits = routing_total = 0

    for t, task in enumerate(manifest.tasks):
        train_items, text, test_data = _load_task_data(task, backbone)
        test_cache.append(test_data)
        names.append(task.name)

        entry, trace = train_task(t, task.name, train_items, text, train_cfg, backbone)
        bank.add_entry(entry)
        traces.append(trace)

        at_final = t == k - 1
        if at_final:
            final_metrics = [None] * k
        for j in range(t + 1):
            metrics, hits, n = _evaluate_task(bank, backbone, test_cache[j], j)
            for name, value in metrics.items():
                if value is not None:
                    matrices[name].set(t, j, value)
            if at_final:
                final_metrics[j] = metrics
                routing_hits += hits
                routing_total += n

    per_task = {
        name: [m[name] if m else None for m in final_metrics] for name in METRIC_NAMES
    }
    averages = {}
    forgetting = {}
    for name in METRIC_NAMES:
        present = [v for v in per_task[name] if v is not None]
        averages[name] = float(np.mean(present)) if present else None
        forgetting[name] = None
        if k >= 2:
            values = matrices[name].values
            needed_ok = all(
                np.all(np.isfinite(values[j:, j])) for j in range(k - 1)
            )
            if needed_ok:
                forgetting[name] = {
                    "standard": forgetting_measure(matrices[name]),
                    "paper": forgetting_measure(matrices[name], paper_normalization=True),
                }

    report = BenchmarkReport(
        tasks=names,
        checkpoints=k,
        per_task=per_task,
        averages=averages,
        forgetting=forgetting,
        routing_accuracy=float(routing_hits / routing_total) if routing_total else 0.0,
        matrices=matrices,
        traces=traces,
        wall_clock_seconds=time.perf_counter() - t0,
        config={
            "train": _train_cfg_dict(train_cfg),
            "bank": bank_cfg.to_dict(),
            "backbone": {
                "kind": backbone.kind,
                "seed": backbone.seed,
                "key_layer": backbone.key_layer,
                "score_layer": backbone.score_layer,
                "dim": backbone.dim,
            },
        },
    )
    return report, bank


def _train_cfg_dict(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "tau": cfg.tau,
        "lam": cfg.lam,
        "prompt_length": cfg.prompt_length,
        "key_ratio": cfg.key_ratio,
        "coreset_ratio": cfg.coreset_ratio,
        "seed": cfg.seed,
        "head_count": cfg.head_count,
        "batch_wide_contrast": cfg.batch_wide_contrast,
        "exclude_self_pairs": cfg.exclude_self_pairs,
        "freeze_fusion": cfg.freeze_fusion,
        "fps_start": cfg.fps_start,
    }


def _clean(value):
    """NaN-free, JSON-ready rendering of report values."""
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def report_to_dict(report: BenchmarkReport) -> dict:
    """JSON-ready report; wall clock is deliberately excluded (see timing file)."""
    matrices = {}
    for name, matrix in report.matrices.items():
        matrices[name] = [
            [_clean(float(v)) for v in row] for row in matrix.values
        ]
    return {
        "format_version": 1,
        "tasks": report.tasks,
        "checkpoints": report.checkpoints,
        "per_task": {k: [_clean(v) for v in vs] for k, vs in report.per_task.items()},
        "averages": {k: _clean(v) for k, v in report.averages.items()},
        "forgetting": report.forgetting,
        "routing_accuracy": report.routing_accuracy,
        "matrices": matrices,
        "config": report.config,
    }


def write_report_json(path, report: BenchmarkReport):
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True, allow_nan=False)
        + "\n"
    )


def write_timing(path, report: BenchmarkReport):
    """Wall-clock sidecar; kept separate so report files stay byte-stable."""
    Path(path).write_text(
        json.dumps({"wall_clock_seconds": report.wall_clock_seconds}) + "\n"
    )


def write_report_csv(path, report: BenchmarkReport):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task"] + list(METRIC_NAMES))
        for j, name in enumerate(report.tasks):
            row = [name]
            for metric in METRIC_NAMES:
                v = report.per_task[metric][j]
                row.append("" if v is None else repr(v))
            writer.writerow(row)
        avg_row = ["average"]
        for metric in METRIC_NAMES:
            v = report.averages[metric]
            avg_row.append("" if v is None else repr(v))
        writer.writerow(avg_row)


def write_matrix_csv(path, matrix: TaskResultMatrix):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["checkpoint"] + [f"task_{j}" for j in range(matrix.k)])
        for l in range(matrix.k):
            row = [l]
            for j in range(matrix.k):
                v = matrix.values[l, j]
                row.append(repr(float(v)) if np.isfinite(v) else "")
            writer.writerow(row)
