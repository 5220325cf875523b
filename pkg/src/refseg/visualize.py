"""Stage heatmaps and prediction overlays as PNG files."""
from __future__ import annotations

import os

import numpy as np
import torch
from PIL import Image

from .text import TextFeatures

# Dark blue -> purple -> red -> yellow ramp, interpolated per channel.
_ANCHORS = np.array([
    [0.05, 0.03, 0.25],
    [0.35, 0.06, 0.50],
    [0.78, 0.22, 0.24],
    [0.98, 0.70, 0.08],
    [0.99, 0.99, 0.75],
])


def colormap(t: np.ndarray) -> np.ndarray:
    """Map values in [0,1] to uint8 RGB of shape t.shape + (3,)."""
    t = np.clip(t, 0.0, 1.0)
    xs = np.linspace(0.0, 1.0, len(_ANCHORS))
    out = np.stack([np.interp(t, xs, _ANCHORS[:, c]) for c in range(3)], axis=-1)
    return np.round(out * 255).astype(np.uint8)


def stage_heat(feat: torch.Tensor, out_size: int) -> np.ndarray:
    """Channel-mean of one stage map, min-max normalized, upsampled.

    feat: (C, h, w). Returns float array (out_size, out_size) in [0,1].
    """
    heat = feat.detach().float().mean(dim=0, keepdim=True)[None]
    heat = torch.nn.functional.interpolate(
        heat, size=(out_size, out_size), mode="bilinear", align_corners=False)
    heat = heat[0, 0].numpy()
    lo, hi = heat.min(), heat.max()
    if hi - lo < 1e-12:
        return np.zeros_like(heat)
    return (heat - lo) / (hi - lo)


def stage_peak(feat: torch.Tensor, out_size: int) -> tuple:
    """(row, col) of the hottest cell, in image coordinates.

    The argmax is taken on the native channel-mean map and reported at the
    center of that cell; upsampling first would smear edge cells into
    plateaus whose argmax lands on an arbitrary plateau pixel.
    """
    heat = feat.detach().float().mean(dim=0)
    h, w = heat.shape
    idx = int(torch.argmax(heat))
    row, col = idx // w, idx % w
    return (int((row + 0.5) * out_size / h), int((col + 0.5) * out_size / w))


def overlay(image: np.ndarray, pred: np.ndarray, gt=None,
            alpha=0.45) -> np.ndarray:
    """Grayscale image with prediction in green and ground truth in red."""
    rgb = np.stack([image, image, image], axis=-1).astype(np.float64)
    if gt is not None:
        m = gt.astype(bool)
        rgb[m] = (1 - alpha) * rgb[m] + alpha * np.array([1.0, 0.1, 0.1])
    m = pred.astype(bool)
    rgb[m] = (1 - alpha) * rgb[m] + alpha * np.array([0.1, 1.0, 0.1])
    return np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)


def visualize_prediction(model, sample, out_dir) -> list:
    """Write stage1..stage4 heatmaps and an overlay PNG for one sample.

    Returns the list of written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            image = torch.from_numpy(sample.image[None, None].astype(np.float32))
            feats_text = model.encode_expressions([sample.expression])
            text = TextFeatures(features=feats_text.features, mask=feats_text.mask)
            logits, stages = model(image, text, return_stages=True)
    finally:
        model.train(was_training)
    thr = model.run_cfg.decoder.threshold
    pred = (torch.sigmoid(logits[0, 0]) > thr).numpy().astype(np.uint8)
    size = sample.image.shape[0]
    paths = []
    for i, feat in enumerate(stages, start=1):
        heat = colormap(stage_heat(feat[0], size))
        path = os.path.join(out_dir, f"stage{i}.png")
        Image.fromarray(heat, mode="RGB").save(path)
        paths.append(path)
    over = overlay(sample.image, pred, sample.mask)
    path = os.path.join(out_dir, "overlay.png")
    Image.fromarray(over, mode="RGB").save(path)
    paths.append(path)
    return paths
