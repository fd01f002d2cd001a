"""Command-line entry point: gen, train, eval, ablate, localize, bench.

Exit codes: 0 on success, 2 for configuration or file-format problems,
3 when training diverges (non-finite loss).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import synth_data
from .checkpoint import load_model
from .errors import ConfigError, DataFormatError, DivergenceError
from .localization import export_heatmaps, localization_score
from .metrics import evaluate
from .trainer import (
    DEFAULT_SEEDS,
    DEFAULT_VARIANTS,
    RunConfig,
    ablate,
    load_run_config,
    train,
)

_SPLIT_CHOICES = ("none", "train", "val", "test")


def _select_split(dataset, which: str, fractions, split_seed: int):
    if which == "none":
        return dataset
    parts = synth_data.split(dataset, fractions, split_seed)
    return parts[("train", "val", "test").index(which)]


def _cmd_gen(args) -> int:
    ds = synth_data.generate(
        seed=args.seed,
        n_samples=args.samples,
        hw=args.hw,
        prevalences=tuple(args.prevalences),
        noise_level=args.noise,
    )
    synth_data.save(ds, args.out)
    counts = ", ".join(
        f"{name}={int(p)}" for name, p in zip(ds.label_names, ds.pos_counts)
    )
    print(f"wrote {args.out}: {len(ds)} samples, canvas {ds.hw}x{ds.hw}, positives {counts}")
    return 0


def _build_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    overrides = {}
    for name in (
        "epochs",
        "seed",
        "lr",
        "batch_size",
        "crop",
        "objective",
        "fusion_mode",
        "alpha",
        "gamma",
        "max_steps",
        "warmup_epochs",
        "patience",
        "split_seed",
        "dropout_rate",
    ):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "single_backbone", None):
        overrides["single_backbone"] = True
    if getattr(args, "no_concat_all", None):
        overrides["concat_all"] = False
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _cmd_train(args) -> int:
    cfg = _build_config(args)
    dataset = synth_data.load(args.data)
    train_set, val_set, test_set = synth_data.split(
        dataset, cfg.split_fractions, cfg.split_seed
    )
    result = train(cfg, train_set, val_set, out_dir=args.out, resume=args.resume)
    print(f"best val mean AUROC {result.best_metric:.4f} at epoch {result.best_epoch}")
    report = evaluate(result.model, test_set, crop=cfg.crop)
    print("test split:")
    print(report.to_table())
    out = Path(args.out)
    (out / "test_report.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
    )
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    dataset = synth_data.load(args.data)
    part = _select_split(dataset, args.split, tuple(args.fractions), args.split_seed)
    report = evaluate(model, part, crop=args.crop)
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
        )
    return 0


def _cmd_ablate(args) -> int:
    cfg = _build_config(args)
    dataset = synth_data.load(args.data)
    result = ablate(
        cfg,
        dataset,
        variants=args.variants,
        seeds=args.seeds,
        out_dir=args.out,
    )
    print(result.to_table())
    return 0


def _cmd_localize(args) -> int:
    model, _ = load_model(args.checkpoint)
    dataset = synth_data.load(args.data)
    part = _select_split(dataset, args.split, tuple(args.fractions), args.split_seed)
    report = localization_score(
        model, part, args.label, crop=args.crop, threshold=args.threshold
    )
    rate = "n/a" if report.hit_rate is None else f"{report.hit_rate:.3f}"
    print(
        f"label {args.label}: {report.positives} positives, "
        f"{report.classified} classified, {report.hits} hits, hit rate {rate}"
    )
    if args.out:
        paths = export_heatmaps(
            model, part, args.label, args.out, crop=args.crop, limit=args.limit
        )
        print(f"wrote {len(paths)} heat maps to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    from .bench import format_table, run_bench
    from .neural_core import kernels

    print(f"active backend: {kernels.backend_name()}")
    rows = run_bench(repeats=args.repeats)
    print(format_table(rows))
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags below override it")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--objective", choices=("balance", "bce"))
    p.add_argument("--fusion-mode", dest="fusion_mode", choices=("hadamard", "add", "max"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--single-backbone", dest="single_backbone", action="store_true", default=None)
    p.add_argument("--no-concat-all", dest="no_concat_all", action="store_true", default=None)


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split", choices=_SPLIT_CHOICES, default="none")
    p.add_argument(
        "--fractions", nargs=3, type=float, default=[0.8, 0.1, 0.1], metavar=("TR", "VA", "TE")
    )
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="can",
        description="Dual-backbone cross-attention classifier for imbalanced multi-label images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic glyph dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=4000)
    p.add_argument("--hw", type=int, default=64)
    p.add_argument(
        "--prevalences", nargs="+", type=float, default=[0.5, 0.2, 0.05, 0.02]
    )
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train one model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (per-label AUROC)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--crop", type=int, default=None)
    _add_split_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation grid over seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", nargs="+", choices=DEFAULT_VARIANTS, default=None)
    p.add_argument("--seeds", nargs="+", type=int, default=list(DEFAULT_SEEDS))
    _add_config_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("localize", help="pointing-game score and heat-map export")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--out", help="directory for PGM heat maps + JSON sidecars")
    p.add_argument("--limit", type=int, default=16)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    _add_split_flags(p)
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("bench", help="compare compiled and numpy kernel backends")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
