"""Command-line interface.

Subcommands: gen-data, train, eval, predict, ablate, folds, export-masks.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence. BL_NUM_WORKERS caps evaluation parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config, load_config
from .encoders import load_precomputed
from .errors import ConfigError, ConfigMismatch, DataError, DivergedLoss, NotScalar, OvsegError
from .folds import PASCAL_CATEGORIES, folds_to_json, make_fold
from .pgm import write_pgm
from .seg_head import predict_masks, write_prediction_pgms
from .synthetic import SynthConfig, gen_synthetic, load_dataset, save_dataset
from .train import evaluate, load_checkpoint, run_ablation, save_checkpoint, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ovseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic segmentation dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--num-images", type=int, default=280)
    gen.add_argument("--size", type=int, default=32, help="image side in pixels")
    gen.add_argument("--universe-size", type=int, default=20)
    gen.add_argument("--shapes", type=int, default=3)
    gen.add_argument("--encoder-seed", type=int, default=0)
    gen.add_argument("--text-dim", type=int, default=32)
    gen.add_argument("--noise-sigma", type=float, default=0.04)

    tr = sub.add_parser("train", help="train fusion + decoder on one fold's train split")
    tr.add_argument("--config", default=None)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--fold", type=int, default=None)
    tr.add_argument("--variant", default=None, choices=["B_L_0", "B_L_1", "B_L_2"])
    tr.add_argument("--precomputed", default=None, help="feature manifest path")

    ev = sub.add_parser("eval", help="zero-shot evaluation on one fold's test split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", default=None)
    ev.add_argument("--fold", type=int, default=None)
    ev.add_argument("--masks", action="store_true", help="also write prediction PGMs")
    ev.add_argument("--precomputed", default=None)

    pr = sub.add_parser("predict", help="write prediction masks for a dataset")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--categories", default=None, help="comma list; default: fold test set")
    pr.add_argument("--precomputed", default=None)

    ab = sub.add_parser("ablate", help="train and evaluate B_L_0/B_L_1/B_L_2 on shared folds")
    ab.add_argument("--config", default=None)
    ab.add_argument("--data", required=True)
    ab.add_argument("--out", default=None)
    ab.add_argument("--seed", type=int, default=None)
    ab.add_argument("--folds", default="0,1,2,3", help="comma list of fold indices")

    fo = sub.add_parser("folds", help="print fold definitions as JSON")
    fo.add_argument("--universe", default="pascal", help="'pascal', 'synth', or a comma list")

    ex = sub.add_parser("export-masks", help="dump ground-truth masks of a dataset as PGMs")
    ex.add_argument("--data", required=True)
    ex.add_argument("--out", required=True)

    return parser


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "fold", None) is not None:
        overrides["fold_index"] = args.fold
    if getattr(args, "variant", None) is not None:
        overrides["ablation_variant"] = args.variant
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _check_dataset_geometry(cfg: ExperimentConfig, ds) -> None:
    if (ds.cfg.height, ds.cfg.width) != (cfg.height, cfg.width):
        raise ConfigMismatch(
            f"dataset images are {ds.cfg.height}x{ds.cfg.width}, config wants "
            f"{cfg.height}x{cfg.width}"
        )


def _cmd_gen_data(args) -> int:
    cfg = SynthConfig(
        num_images=args.num_images,
        height=args.size,
        width=args.size,
        universe_size=args.universe_size,
        shapes_per_image=args.shapes,
        encoder_seed=args.encoder_seed,
        text_dim=args.text_dim,
        noise_sigma=args.noise_sigma,
    )
    ds = gen_synthetic(seed=args.seed, cfg=cfg)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.samples)} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_experiment(args)
    ds = load_dataset(args.data)
    _check_dataset_geometry(cfg, ds)
    fold = make_fold(cfg.fold_index, ds.universe)
    train_stream, _ = ds.split_for_fold(fold)
    precomputed = load_precomputed(args.precomputed) if args.precomputed else None
    model, log = train(cfg, train_stream, fold, precomputed=precomputed)
    out = Path(args.out)
    save_checkpoint(model, out)
    (out / "losses.txt").write_text(log.loss_log_text())
    (out / "train_log.json").write_text(
        json.dumps(
            {
                "epoch_losses": log.epoch_losses,
                "epoch_train_miou": log.epoch_train_miou,
                "wall_seconds": log.wall_seconds,
                "param_count": log.param_count,
                "fold": fold.fold_index,
                "train_images": len(train_stream),
            },
            indent=2,
        )
    )
    print(
        f"trained {cfg.ablation_variant} fold {fold.fold_index}: "
        f"final loss {log.epoch_losses[-1]:.4f}, checkpoint at {out}"
    )
    return 0


def _cmd_eval(args) -> int:
    precomputed = load_precomputed(args.precomputed) if args.precomputed else None
    model = load_checkpoint(args.checkpoint, precomputed=precomputed)
    ds = load_dataset(args.data)
    _check_dataset_geometry(model.cfg, ds)
    fold_index = args.fold if args.fold is not None else model.cfg.fold_index
    fold = make_fold(fold_index, ds.universe)
    _, test_stream = ds.split_for_fold(fold)
    report = evaluate(model, fold, test_stream, out_dir=args.out, write_masks=args.masks)
    payload = {
        "fold": fold.fold_index,
        "miou": report.miou,
        "per_class_iou": report.per_class_iou,
        "absent_classes": list(report.absent_classes),
    }
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.json").write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_predict(args) -> int:
    precomputed = load_precomputed(args.precomputed) if args.precomputed else None
    model = load_checkpoint(args.checkpoint, precomputed=precomputed)
    ds = load_dataset(args.data)
    _check_dataset_geometry(model.cfg, ds)
    if args.categories:
        categories = tuple(c.strip() for c in args.categories.split(",") if c.strip())
    else:
        categories = make_fold(model.cfg.fold_index, ds.universe).test_categories
    text = model.encode_categories(categories)
    out = Path(args.out)
    for start in range(0, len(ds.samples), 16):
        part = ds.samples[start : start + 16]
        cached = model.precompute_visual(part)
        logits = model.logits_for_batch(cached, text)
        for b, sample in enumerate(part):
            pred = predict_masks(logits.data[b], model.cfg.decoder, categories)
            write_prediction_pgms(pred, out / sample.sample_id)
    print(f"wrote predictions for {len(ds.samples)} samples to {out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_experiment(args)
    ds = load_dataset(args.data)
    _check_dataset_geometry(cfg, ds)
    folds = [int(v) for v in args.folds.split(",") if v.strip() != ""]
    result = run_ablation(cfg, ds, folds=folds, log_fn=lambda msg: print(msg, flush=True))
    table = result.format_table()
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.tsv").write_text(table)
        (out / "ablation.json").write_text(
            json.dumps(
                {
                    "per_variant_fold_miou": result.per_variant_fold_miou,
                    "per_variant_miou": result.per_variant_miou,
                    "folds": folds,
                    "seed": cfg.seed,
                },
                indent=2,
            )
        )
    return 0


def _cmd_folds(args) -> int:
    if args.universe == "pascal":
        universe = PASCAL_CATEGORIES
    elif args.universe == "synth":
        from .synthetic import synthetic_universe

        universe = synthetic_universe(20)
    else:
        universe = tuple(c.strip() for c in args.universe.split(","))
    print(folds_to_json(universe))
    return 0


def _cmd_export_masks(args) -> int:
    ds = load_dataset(args.data)
    out = Path(args.out)
    for s in ds.samples:
        sdir = out / s.sample_id
        sdir.mkdir(parents=True, exist_ok=True)
        write_pgm(sdir / "labelmap.pgm", s.label_map.astype(np.uint8))
        for i, name in enumerate(s.categories, start=1):
            safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
            write_pgm(sdir / f"gt_{i - 1:02d}_{safe}.pgm", (s.label_map == i).astype(np.uint8) * 255)
    print(f"wrote ground-truth masks for {len(ds.samples)} samples to {out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
    "folds": _cmd_folds,
    "export-masks": _cmd_export_masks,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DivergedLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, NotScalar) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OvsegError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
