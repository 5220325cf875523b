"""Command line interface.

Subcommands: gen-data, train, eval, ablate, infer, visualize, count, serve.
Usage errors exit with code 2 (argparse default); expected runtime errors
(bad files, bad config, unresolvable expressions ...) print one line to
stderr and exit with code 1.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .ablation import ABLATION_AXES, format_table, run_ablation
from .budget import count_params_flops
from .config import (RunConfig, apply_overrides, config_hash, load_config,
                     toy_run_config)
from .dataio import load_dataset, write_dataset, write_meta
from .errors import MissingFile, RefsegError
from .metrics import MetricsReport
from .model import build_model, checkpoint_id, model_from_checkpoint
from .rle import rle_encode
from .synthetic import ReferringSample, generate_dataset
from .training import evaluate_model, split_samples, train_model

# Published efficiency figures the budget gate compares against.
REFERENCE_PARAMS_M = 8.78
REFERENCE_FLOPS_G = 8.91


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--toy", action="store_true",
                   help="start from the small CPU-sized config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
        if args.toy:
            raise argparse.ArgumentTypeError("--toy and --config are exclusive")
    elif args.toy:
        cfg = toy_run_config()
    else:
        cfg = RunConfig()
    if args.set:
        apply_overrides(cfg, args.set)
    return cfg


def _load_split(root, split):
    return load_dataset(root, split)


def _load_train_val(root, cfg):
    train = _load_split(root, "train")
    try:
        val = _load_split(root, "val")
    except MissingFile:
        train, val = split_samples(train, cfg.train.val_fraction,
                                   cfg.train.seed)
    return train, val


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    counts = {"train": args.train, "val": args.val}
    rng_offsets = {"train": 0, "val": args.train}
    n_twin = 0
    for split, count in counts.items():
        samples = generate_dataset(cfg.data, args.seed, count,
                                   offset=rng_offsets[split])
        write_dataset(samples, args.out, split)
        twins = sum(s.disambiguation for s in samples)
        if split == "val":
            n_twin = twins
        print(f"{split}: {count} samples ({twins} disambiguation) "
              f"-> {os.path.join(args.out, split)}")
    write_meta(args.out, cfg.data, args.seed, counts)
    print(f"wrote {args.out} (seed {args.seed}, "
          f"{cfg.data.image_size}x{cfg.data.image_size}, "
          f"val disambiguation subset {n_twin})")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    train, val = _load_train_val(args.data, cfg)
    model = build_model(cfg, seed=cfg.train.seed)
    print(f"training on {len(train)} samples, validating on {len(val)} "
          f"(config {config_hash(cfg)})")
    train_model(model, train, cfg.train, val_samples=val,
                ckpt_path=args.out, resume_from=args.resume,
                eval_every=args.eval_every, log=print)
    report = evaluate_model(model, val, batch_size=cfg.train.batch_size,
                            config_hash=config_hash(cfg))
    print(f"final val dice {report.mean_dice:.4f} iou {report.mean_iou:.4f}")
    print(f"checkpoint -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, cfg, _ = model_from_checkpoint(args.ckpt)
    samples = _load_split(args.data, args.split)
    if args.subset == "disambiguation":
        samples = [s for s in samples if s.disambiguation]
    report = evaluate_model(
        model, samples, batch_size=cfg.train.batch_size,
        text_fraction=args.text_fraction, text_override=args.text_override,
        checkpoint_id=checkpoint_id(args.ckpt), config_hash=config_hash(cfg),
        dataset=args.data, subset=args.subset)
    print(f"samples {report.n_samples} (subset={args.subset}, "
          f"text_fraction={args.text_fraction})")
    print(f"mean dice {report.mean_dice:.4f}")
    print(f"mean iou  {report.mean_iou:.4f}")
    if report.n_empty_pairs:
        print(f"note: {report.n_empty_pairs} pairs were empty-vs-empty")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        print(f"report -> {args.json}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    train, val = _load_train_val(args.data, cfg)
    rows = run_ablation(cfg, args.axis, train, val, epochs=args.epochs,
                        seed=args.seed, log=print)
    print(format_table(rows))
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
        print(f"rows -> {args.json}")
    return 0


def cmd_infer(args) -> int:
    from PIL import Image

    from .service import _letterbox, _map_back

    model, cfg, _ = model_from_checkpoint(args.ckpt)
    arr = np.asarray(Image.open(args.image).convert("L"))
    canvas, box = _letterbox(arr, cfg.model.image_size)
    import torch

    with torch.no_grad():
        logits = model.forward_texts(
            torch.from_numpy(canvas[None, None]), [args.expression])
        probs = torch.sigmoid(logits[0, 0]).numpy()
    thr = args.threshold if args.threshold is not None else cfg.decoder.threshold
    mask = (_map_back(probs, box, arr.shape) > thr).astype(np.uint8)
    area = int(mask.sum())
    print(f"mask covers {area} px ({100.0 * area / mask.size:.2f}%)")
    if args.out:
        Image.fromarray(mask * 255, mode="L").save(args.out)
        print(f"mask -> {args.out}")
    if args.rle:
        with open(args.rle, "w", encoding="utf-8") as fh:
            json.dump(rle_encode(mask), fh)
            fh.write("\n")
        print(f"rle -> {args.rle}")
    return 0


def cmd_visualize(args) -> int:
    from PIL import Image

    from .visualize import visualize_prediction

    model, cfg, _ = model_from_checkpoint(args.ckpt)
    if args.image:
        if not args.expression:
            print("error: --expression is required with --image", file=sys.stderr)
            return 2
        arr = np.asarray(Image.open(args.image).convert("L"),
                         dtype=np.float32) / 255.0
        sample = ReferringSample(
            image=arr, mask=np.zeros(arr.shape, dtype=np.uint8),
            expression=args.expression, clauses=[args.expression],
            lesions=[], target_index=0, seed=0)
    else:
        if not args.data:
            print("error: pass --data or --image", file=sys.stderr)
            return 2
        samples = _load_split(args.data, args.split)
        sample = samples[args.index]
        if args.expression:
            sample.expression = args.expression
    paths = visualize_prediction(model, sample, args.out)
    for p in paths:
        print(p)
    return 0


def cmd_count(args) -> int:
    cfg = _resolve_config(args)
    rep = count_params_flops(cfg.model, cfg.decoder)
    print(rep.line())
    print(f"reference target: {REFERENCE_PARAMS_M:.2f} M params / "
          f"{REFERENCE_FLOPS_G:.2f} G flops")
    print(f"measured:         {rep.params / 1e6:.2f} M params / "
          f"{rep.flops / 1e9:.2f} G flops")
    for name, (p, f) in rep.breakdown.items():
        print(f"  {name:14s} {p / 1e6:8.3f} M {f / 1e9:9.3f} G")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint_path=args.ckpt, preload=not args.lazy_load)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="refseg",
        description="language-guided lesion segmentation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--val", type=int, default=100)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--subset", choices=("all", "disambiguation"), default="all")
    p.add_argument("--text-fraction", type=float, default=1.0)
    p.add_argument("--text-override", default=None,
                   help="replace every expression with this constant")
    p.add_argument("--json", help="also write the full report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score variants on one axis")
    _add_config_args(p)
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write rows as json here")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="segment one image file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--expression", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", help="write the mask png here")
    p.add_argument("--rle", help="write the run-length json here")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("visualize",
                       help="write stage heatmaps and an overlay")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="val")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--image", help="use this image instead of a dataset")
    p.add_argument("--expression")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("count", help="analytic parameter and flop budget")
    _add_config_args(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("serve", help="run the http service")
    p.add_argument("--ckpt", default=None,
                   help=f"checkpoint (default: ${'{'}REFSEG_CHECKPOINT{'}'})")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--lazy-load", action="store_true")
    p.set_defaults(func=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RefsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
