"""Ablation harness: build, train and score model variants on one axis.

Every variant trains from the same seed for the same budget on the same
samples, so rows are comparable.  Axes cover the strip-kernel length, the
attention branch subsets, decoder on/off, decoder wiring variants and the
stage subsets fed to the decoder.
"""
from __future__ import annotations

from .budget import count_params_flops
from .config import RunConfig, config_from_dict, config_to_dict
from .errors import ConfigError
from .model import build_model
from .training import evaluate_model, train_model

ABLATION_AXES = ("kernel-size", "attention-branches", "decoder-on-off",
                 "decoder-variant", "decoder-stages")


def _clone(cfg: RunConfig) -> RunConfig:
    return config_from_dict(config_to_dict(cfg))


def axis_variants(axis: str, base: RunConfig):
    """-> list of (label, RunConfig) for one ablation axis."""
    out = []

    def add(label, **edits):
        cfg = _clone(base)
        for path, value in edits.items():
            node = cfg
            *heads, leaf = path.split(".")
            for h in heads:
                node = getattr(node, h)
            setattr(node, leaf, value)
        cfg.model.attention.__post_init__()
        cfg.model.__post_init__()
        cfg.decoder.__post_init__()
        out.append((label, cfg))

    if axis == "kernel-size":
        for d in (5, 7, 11, 15, 19, 21):
            add(f"k{d}", **{"model.attention.kernel_sizes": (d,)})
    elif axis == "attention-branches":
        for label, kernels, pm in (
            ("u1+u2", (7, 11), False),
            ("u1+u3", (7, 21), False),
            ("u2+u3", (11, 21), False),
            ("u1+u2+u3", (7, 11, 21), False),
            ("u1+u2+u3+pixmap", (7, 11, 21), True),
        ):
            add(label, **{"model.attention.kernel_sizes": kernels,
                          "model.attention.use_pixel_map": pm})
    elif axis == "decoder-on-off":
        add("full-decoder")
        add("no-decoder", **{"decoder.variant": "none"})
    elif axis == "decoder-variant":
        add("s4-head-mlp", **{"decoder.variant": "s4-head-mlp"})
        for v in ("mlp-concat-mlp", "concat-head-mlp", "mlp-concat-head-mlp"):
            add(v, **{"decoder.variant": v,
                      "decoder.use_stages": (1, 2, 3, 4)})
    elif axis == "decoder-stages":
        for label, stages in (("s4", (4,)), ("s3+s4", (3, 4)),
                              ("s1+s2+s3", (1, 2, 3)), ("s2+s3+s4", (2, 3, 4)),
                              ("s1+s2+s3+s4", (1, 2, 3, 4))):
            add(label, **{"decoder.use_stages": stages})
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; "
                          f"choose from {ABLATION_AXES}")
    return out


def run_ablation(base: RunConfig, axis: str, train_samples, val_samples,
                 epochs=None, seed=0, log=None):
    """Train and evaluate every variant; returns a list of row dicts."""
    say = log if log is not None else (lambda *_: None)
    rows = []
    for label, cfg in axis_variants(axis, base):
        if epochs is not None:
            cfg.train.epochs = epochs
        cfg.train.seed = seed
        budget = count_params_flops(cfg.model, cfg.decoder)
        model = build_model(cfg, seed=seed)
        say(f"[{axis}] training variant {label} "
            f"({budget.params / 1e6:.2f} M params)")
        if cfg.train.epochs > 0:
            train_model(model, train_samples, cfg.train, log=None)
        report = evaluate_model(model, val_samples,
                                batch_size=cfg.train.batch_size)
        rows.append({
            "axis": axis,
            "label": label,
            "dice": report.mean_dice,
            "iou": report.mean_iou,
            "params": budget.params,
            "flops": budget.flops,
        })
        say(f"[{axis}] {label}: dice {report.mean_dice:.4f} "
            f"iou {report.mean_iou:.4f}")
    return rows


def format_table(rows) -> str:
    if not rows:
        return "(no rows)"
    lines = [f"{'variant':24s} {'dice':>8s} {'iou':>8s} {'params':>10s} {'flops':>10s}"]
    for r in rows:
        lines.append(
            f"{r['label']:24s} {r['dice']:8.4f} {r['iou']:8.4f} "
            f"{r['params'] / 1e6:9.2f}M {r['flops'] / 1e9:9.2f}G")
    return "\n".join(lines)
