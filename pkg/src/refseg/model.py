"""Full model assembly and the checkpoint archive format."""
from __future__ import annotations

import datetime
import hashlib
import random

import numpy as np
import torch
import torch.nn as nn

from .config import RunConfig, config_from_dict, config_to_dict
from .decoder import FullScaleDecoder, predict_mask
from .encoder import VisionLanguageEncoder
from .errors import CheckpointFormatError
from .text import TextFeatures, build_text_encoder

CKPT_FORMAT = "refseg-checkpoint"
CKPT_VERSION = 1


class ReferringSegmenter(nn.Module):
    """Text encoder + vision-language encoder + full-scale decoder."""

    def __init__(self, cfg: RunConfig, vocab=None):
        super().__init__()
        self.run_cfg = cfg
        self.text_encoder = build_text_encoder(cfg.model, vocab=vocab)
        self.encoder = VisionLanguageEncoder(cfg.model)
        self.decoder = FullScaleDecoder(cfg.model, cfg.decoder)

    def forward(self, image, text: TextFeatures, return_stages=False):
        """-> logits (B, 1, H, W); optionally also the 4 stage maps."""
        feats = self.encoder(image, text)
        logits = self.decoder(feats, image.shape[-2:])
        if return_stages:
            return logits, feats
        return logits

    def encode_expressions(self, texts) -> TextFeatures:
        return self.text_encoder.encode(texts)

    def forward_texts(self, image, texts, return_stages=False):
        return self.forward(image, self.encode_expressions(texts), return_stages)

    @torch.no_grad()
    def segment(self, image, texts, threshold=None):
        """Binary masks (B, H, W) uint8 for a batch of image+expression."""
        was_training = self.training
        self.eval()
        try:
            logits = self.forward_texts(image, texts)
        finally:
            self.train(was_training)
        thr = self.run_cfg.decoder.threshold if threshold is None else threshold
        return predict_mask(logits, thr)[:, 0]


def build_model(cfg: RunConfig, seed: int = 0) -> ReferringSegmenter:
    """Construct with deterministic weight init."""
    torch.manual_seed(seed)
    return ReferringSegmenter(cfg)


def rng_state_blob() -> dict:
    return {
        "torch": torch.get_rng_state(),
        "numpy": np.random.get_state(),
        "python": random.getstate(),
    }


def restore_rng_state(blob: dict):
    torch.set_rng_state(blob["torch"])
    np.random.set_state(blob["numpy"])
    random.setstate(blob["python"])


def save_checkpoint(path, model: ReferringSegmenter, optimizer=None, epoch=0,
                    extra=None):
    payload = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "config": config_to_dict(model.run_cfg),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": int(epoch),
        "rng": rng_state_blob(),
        "meta": dict(extra or {}, created=datetime.datetime.now().isoformat()),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CKPT_FORMAT:
        raise CheckpointFormatError(
            f"{path} is not a {CKPT_FORMAT} archive (missing format tag)"
        )
    if payload.get("version") != CKPT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {payload.get('version')!r}, "
            f"this build reads version {CKPT_VERSION}"
        )
    return payload


def model_from_checkpoint(path):
    """-> (model in eval mode, RunConfig, full payload)."""
    payload = load_checkpoint(path)
    cfg = config_from_dict(payload["config"])
    model = ReferringSegmenter(cfg)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, cfg, payload


def checkpoint_id(path) -> str:
    """Hex digest of the checkpoint file bytes, for report provenance."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]
