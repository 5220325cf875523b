"""Training and evaluation loops.

Single-process CPU-friendly: tensors are prepared once up front, batches
are slices of a seeded per-epoch permutation, so a run is reproducible and
a resumed run continues bit for bit (optimizer state, RNG states and the
epoch counter all live in the checkpoint).
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .config import TrainConfig
from .errors import EmptyEvaluation, NonFiniteLoss
from .metrics import MetricsReport
from .model import (ReferringSegmenter, load_checkpoint, restore_rng_state,
                    save_checkpoint)
from .synthetic import partial_text
from .text import TextFeatures, batch_tokens, tokenize


def soft_dice_loss(logits, target, smooth=1.0):
    """Mean over the batch of 1 - soft Dice; exactly 0 when probabilities
    equal the target mask."""
    probs = torch.sigmoid(logits).flatten(1)
    target = target.flatten(1)
    inter = (probs * target).sum(dim=1)
    total = probs.sum(dim=1) + target.sum(dim=1)
    return (1.0 - (2.0 * inter + smooth) / (total + smooth)).mean()


def segmentation_loss(logits, target, bce_weight=1.0, dice_weight=1.0):
    """-> (total, bce part, dice part); logits (B,1,H,W), target (B,H,W)."""
    flat = logits[:, 0]
    bce = F.binary_cross_entropy_with_logits(flat, target)
    dice = soft_dice_loss(flat, target)
    return bce_weight * bce + dice_weight * dice, bce, dice


def poly_lr(base_lr, epoch, total_epochs, power):
    return base_lr * (1.0 - epoch / total_epochs) ** power


def prepare_tensors(samples, text_fraction=1.0, text_override=None, vocab=None,
                    max_tokens=24):
    """-> images (N,1,H,W), masks (N,H,W), token ids (N,T), token mask (N,T)."""
    from .text import Vocabulary

    vocab = vocab if vocab is not None else Vocabulary()
    images = torch.from_numpy(
        np.stack([s.image for s in samples])[:, None].astype(np.float32))
    masks = torch.from_numpy(
        np.stack([s.mask for s in samples]).astype(np.float32))
    texts = []
    for s in samples:
        if text_override is not None:
            texts.append(text_override)
        elif text_fraction < 1.0:
            texts.append(partial_text(s, text_fraction))
        else:
            texts.append(s.expression)
    seqs = [tokenize(t, vocab, max_tokens) for t in texts]
    ids, tmask = batch_tokens(seqs)
    return images, masks, ids, tmask


def assert_gradient_flow(model):
    """Every trainable parameter must have received a gradient."""
    dead = [n for n, p in model.named_parameters()
            if p.requires_grad and p.grad is None]
    if dead:
        raise RuntimeError(f"parameters with no gradient after backward: {dead}")


def split_samples(samples, val_fraction, seed):
    """Deterministic shuffled split into (train, val)."""
    n = len(samples)
    n_val = int(round(n * val_fraction))
    perm = np.random.default_rng(np.random.SeedSequence([seed, 911])).permutation(n)
    val_idx = set(int(i) for i in perm[:n_val])
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def train_model(model: ReferringSegmenter, train_samples, cfg: TrainConfig,
                val_samples=None, ckpt_path=None, resume_from=None,
                eval_every=0, log=None, check_gradients=False):
    """Run the training loop; returns the per-epoch history list.

    ``resume_from`` takes a checkpoint path; training continues from its
    stored epoch with restored optimizer and RNG state, producing the same
    bytes a single uninterrupted run would have produced.
    """
    if not train_samples:
        raise EmptyEvaluation("no training samples")
    say = log if log is not None else (lambda *_: None)
    vocab = getattr(model.text_encoder, "vocab", None)
    max_tokens = model.run_cfg.model.max_tokens
    images, masks, ids, tmask = prepare_tensors(
        train_samples, text_fraction=cfg.text_fraction, vocab=vocab,
        max_tokens=max_tokens)

    optimizer = torch.optim.AdamW(
        (p for p in model.parameters() if p.requires_grad),
        lr=cfg.lr, weight_decay=cfg.weight_decay)

    start_epoch = 0
    history = []
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        model.load_state_dict(payload["model_state"])
        if payload.get("optimizer_state"):
            optimizer.load_state_dict(payload["optimizer_state"])
        start_epoch = payload["epoch"]
        history = list(payload["meta"].get("history", []))
        restore_rng_state(payload["rng"])
        say(f"resumed from {resume_from} at epoch {start_epoch}")

    n = images.shape[0]
    steps = math.ceil(n / cfg.batch_size)
    first_step = True
    for epoch in range(start_epoch, cfg.epochs):
        lr = poly_lr(cfg.lr, epoch, cfg.epochs, cfg.poly_power)
        for group in optimizer.param_groups:
            group["lr"] = lr
        perm = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 7700 + epoch])).permutation(n)
        model.train()
        total = 0.0
        for b in range(steps):
            idx = torch.from_numpy(perm[b * cfg.batch_size:(b + 1) * cfg.batch_size])
            text = TextFeatures(
                features=model.text_encoder(ids[idx], tmask[idx]),
                mask=tmask[idx])
            logits = model(images[idx], text)
            loss, _, _ = segmentation_loss(
                logits, masks[idx], cfg.bce_weight, cfg.dice_weight)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss.item()} at epoch {epoch}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if check_gradients and first_step:
                assert_gradient_flow(model)
                first_step = False
            optimizer.step()
            total += float(loss.detach())
        entry = {"epoch": epoch, "lr": lr, "loss": total / steps}
        if val_samples and eval_every and (epoch + 1) % eval_every == 0:
            report = evaluate_model(model, val_samples,
                                    batch_size=cfg.batch_size)
            entry["val_dice"] = report.mean_dice
        history.append(entry)
        say(f"epoch {epoch + 1}/{cfg.epochs} lr {lr:.2e} loss {entry['loss']:.4f}"
            + (f" val dice {entry['val_dice']:.4f}" if "val_dice" in entry else ""))
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, model, optimizer=optimizer,
                            epoch=epoch + 1, extra={"history": history})
    return history


@torch.no_grad()
def evaluate_model(model: ReferringSegmenter, samples, batch_size=16,
                   text_fraction=1.0, text_override=None, threshold=None,
                   **provenance) -> MetricsReport:
    """Segment every sample and aggregate Dice / IoU."""
    if not samples:
        raise EmptyEvaluation("no evaluation samples")
    vocab = getattr(model.text_encoder, "vocab", None)
    images, masks, ids, tmask = prepare_tensors(
        samples, text_fraction=text_fraction, text_override=text_override,
        vocab=vocab, max_tokens=model.run_cfg.model.max_tokens)
    thr = model.run_cfg.decoder.threshold if threshold is None else threshold
    was_training = model.training
    model.eval()
    preds = []
    try:
        for b in range(math.ceil(len(samples) / batch_size)):
            sl = slice(b * batch_size, (b + 1) * batch_size)
            text = TextFeatures(features=model.text_encoder(ids[sl], tmask[sl]),
                                mask=tmask[sl])
            logits = model(images[sl], text)
            preds.append((torch.sigmoid(logits[:, 0]) > thr).to(torch.uint8))
    finally:
        model.train(was_training)
    pred = torch.cat(preds).numpy()
    gt = masks.numpy() > 0.5
    pairs = [(pred[i], gt[i]) for i in range(len(samples))]
    provenance.setdefault("text_fraction",
                          0.0 if text_override is not None else text_fraction)
    return MetricsReport.from_pairs(pairs, **provenance)
