"""Command-line surface: synth / train / eval / bench.

Exit codes are a stable contract: 0 on success, 1 when the invocation or
its inputs fail validation, 2 when a run fails at runtime.  Diagnostics go
to stderr; stdout carries only the path of the produced artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backbone import BackboneConfig
from .errors import (
    ConfigError,
    EngineError,
    ManifestError,
    TensorCorruptionError,
    TensorFormatError,
)
from .harness import (
    continual_train,
    evaluate_suite,
    run_continual,
    write_matrix_csv,
    write_report_csv,
    write_report_json,
    write_timing,
)
from .synth import SynthSpec, generate
from .tensor_store import load_bank, load_manifest, save_bank
from .trainer import TrainConfig, save_loss_trace


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports problems instead of exiting on its own."""

    def error(self, message):
        raise CliValidationError(message)


def _add_train_flags(p: _Parser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--prompt-len", type=int, default=5)
    p.add_argument("--key-ratio", type=float, default=0.1)
    p.add_argument("--coreset-ratio", type=float, default=0.1)
    p.add_argument("--route-mode", choices=("max_cosine", "sum_min_l2"), default="max_cosine")
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--batch-wide-contrast", action="store_true")
    p.add_argument("--exclude-self-pairs", action="store_true")
    p.add_argument("--freeze-fusion", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="continual-ad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--tasks", type=int, default=5)
    p_synth.add_argument("--train-per-task", type=int, default=10)
    p_synth.add_argument("--test-normal-per-task", type=int, default=10)
    p_synth.add_argument("--test-anomalous-per-task", type=int, default=10)
    p_synth.add_argument("--image-h", type=int, default=128)
    p_synth.add_argument("--image-w", type=int, default=128)
    p_synth.add_argument("--grid-h", type=int, default=8)
    p_synth.add_argument("--grid-w", type=int, default=8)
    p_synth.add_argument("--regions", type=int, default=4)
    p_synth.add_argument("--noise-std", type=float, default=0.1)
    p_synth.add_argument("--magnitude", type=float, default=0.5)
    p_synth.add_argument("--anomaly-block", type=int, default=3)
    p_synth.add_argument("--dim", type=int, default=32)

    p_train = sub.add_parser("train", help="train a bank from a manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--out", required=True)
    _add_train_flags(p_train)

    p_eval = sub.add_parser("eval", help="score a manifest against a saved bank")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--bank", required=True)
    p_eval.add_argument("--out", required=True)

    p_bench = sub.add_parser("bench", help="full continual run with report")
    p_bench.add_argument("--manifest", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--fm-normalization", choices=("standard", "paper"), default="standard")
    _add_train_flags(p_bench)
    return parser


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        tau=args.tau,
        lam=args.lam,
        prompt_length=args.prompt_len,
        key_ratio=args.key_ratio,
        coreset_ratio=args.coreset_ratio,
        seed=args.seed,
        batch_wide_contrast=args.batch_wide_contrast,
        exclude_self_pairs=args.exclude_self_pairs,
        freeze_fusion=args.freeze_fusion,
    )


def _cmd_synth(args) -> str:
    spec = SynthSpec(
        tasks=args.tasks,
        train_per_task=args.train_per_task,
        test_normal_per_task=args.test_normal_per_task,
        test_anomalous_per_task=args.test_anomalous_per_task,
        image_h=args.image_h,
        image_w=args.image_w,
        grid_h=args.grid_h,
        grid_w=args.grid_w,
        regions=args.regions,
        noise_std=args.noise_std,
        anomaly_magnitude=args.magnitude,
        anomaly_block=args.anomaly_block,
        dim=args.dim,
        seed=args.seed,
    )
    generate(spec, args.out)
    return str(Path(args.out) / "manifest.json")


def _cmd_train(args) -> str:
    manifest = load_manifest(args.manifest)
    bank, traces = continual_train(
        manifest,
        _train_config(args),
        route_mode=args.route_mode,
        sigma=args.sigma,
    )
    out = Path(args.out)
    save_bank(out, bank)
    for t, trace in enumerate(traces):
        save_loss_trace(out / f"loss_trace_task_{t:03d}.csv", trace)
    return str(out)


def _cmd_eval(args) -> str:
    manifest = load_manifest(args.manifest)
    bank = load_bank(args.bank)
    result = evaluate_suite(manifest, bank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "eval_report.json"
    report_path.write_text(
        json.dumps(result, indent=2, sort_keys=True, allow_nan=False) + "\n"
    )
    return str(report_path)


def _cmd_bench(args) -> str:
    manifest = load_manifest(args.manifest)
    report, bank = run_continual(
        manifest,
        _train_config(args),
        route_mode=args.route_mode,
        sigma=args.sigma,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    write_report_json(report_path, report)
    write_report_csv(out / "report.csv", report)
    write_timing(out / "timing.json", report)
    matrices_dir = out / "matrices"
    matrices_dir.mkdir(exist_ok=True)
    for name, matrix in report.matrices.items():
        write_matrix_csv(matrices_dir / f"{name}.csv", matrix)
    save_bank(out / "bank", bank)

    # headline forgetting values under the normalization the caller picked
    summary = {}
    for name, fm in report.forgetting.items():
        summary[name] = None if fm is None else fm[args.fm_normalization]
    (out / "forgetting.json").write_text(
        json.dumps(
            {"normalization": args.fm_normalization, "per_metric": summary},
            indent=2,
            sort_keys=True,
            allow_nan=False,
        )
        + "\n"
    )
    return str(report_path)


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
}

_VALIDATION_ERRORS = (
    CliValidationError,
    ConfigError,
    ManifestError,
    TensorFormatError,
    TensorCorruptionError,
)


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        artifact = _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (EngineError, OSError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 2
    print(artifact)
    return 0


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
