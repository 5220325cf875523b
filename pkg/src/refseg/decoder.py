"""Multi-scale decoder.

Selected encoder stages are aligned to the highest-resolution stage grid,
concatenated, squeezed by a 1x1 conv and cleaned up by a low-rank
non-negative factorization of the flattened map (a cheap global-context
step).  A 1x1 conv head then produces one logit per pixel at full image
resolution.

Alternative wirings used by the ablation harness swap the order of the
per-stage projections, the concat and the factorization head, or bypass
the decoder entirely and read the mask off the last stage.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DecoderConfig, ModelConfig
from .errors import ShapeMismatch

NMF_EPS = 1e-9


def align_to(x, size):
    """Bilinearly resample a (B, C, H, W) map to ``size`` = (H', W').

    Channels are untouched.  When the map is already at the target size it
    is returned as-is, bit for bit.
    """
    size = (int(size[0]), int(size[1]))
    if x.dim() != 4:
        raise ShapeMismatch(f"expected a 4-D map, got shape {tuple(x.shape)}")
    if tuple(x.shape[-2:]) == size:
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class NmfContext(nn.Module):
    """Low-rank non-negative reconstruction of a flattened feature map.

    The factor matrices are refined with multiplicative updates.  All but
    the last update run without gradient tracking; the final update of the
    coefficient matrix participates in autograd, so backprop sees a single
    smooth step instead of the whole unrolled iteration.

    Setting ``pinned_factors`` freezes the starting factors, which turns the
    module into a plain differentiable function of its input; the gradient
    tests use this to compare autograd against finite differences.
    """

    def __init__(self, channels, rank, n_iter, seed=0, running_bases=False):
        super().__init__()
        self.channels = channels
        self.rank = rank
        self.n_iter = n_iter
        self.seed = seed
        self.running_bases = running_bases
        self.pinned_factors = None
        self.last_prefix_factors = None
        self.last_degenerate = False
        self.register_buffer("bases", torch.empty(0), persistent=True)

    def _init_factors(self, x):
        b, c, n = x.shape
        gen = torch.Generator(device="cpu").manual_seed(self.seed)
        h = torch.rand(b, self.rank, n, generator=gen, dtype=x.dtype) + 1e-4
        if self.running_bases and self.bases.numel() == b * c * self.rank:
            w = self.bases.reshape(b, c, self.rank).to(x.dtype).clone()
        else:
            w = torch.rand(b, c, self.rank, generator=gen, dtype=x.dtype) + 1e-4
        return w.to(x.device), h.to(x.device)

    @staticmethod
    def _update_h(x, w, h):
        numer = w.transpose(1, 2) @ x
        denom = w.transpose(1, 2) @ w @ h + NMF_EPS
        return h * numer / denom

    @staticmethod
    def _update_w(x, w, h):
        numer = x @ h.transpose(1, 2)
        denom = w @ (h @ h.transpose(1, 2)) + NMF_EPS
        return w * numer / denom

    def forward(self, x):
        """x (B, C, N) non-negative -> reconstruction of the same shape."""
        if x.dim() != 3 or x.shape[1] != self.channels:
            raise ShapeMismatch(
                f"expected (B, {self.channels}, N), got {tuple(x.shape)}"
            )
        self.last_degenerate = False
        zero_rows = x.abs().sum(dim=(1, 2)) == 0
        if bool(zero_rows.any()):
            # A fully silent map cannot be factorized; pass zeros through.
            self.last_degenerate = True
            warnings.warn("nmf context got an all-zero input; returning zeros")
            if bool(zero_rows.all()):
                return torch.zeros_like(x)
        if self.pinned_factors is not None:
            w, h = (f.detach().to(dtype=x.dtype, device=x.device)
                    for f in self.pinned_factors)
        else:
            with torch.no_grad():
                w, h = self._init_factors(x)
                for _ in range(self.n_iter - 1):
                    h = self._update_h(x, w, h)
                    w = self._update_w(x, w, h)
            if self.running_bases and self.training:
                self.bases = w.detach().reshape(-1).clone()
            self.last_prefix_factors = (w.detach().clone(), h.detach().clone())
        # One gradient-carrying coefficient update, bases held fixed.
        w = w.detach()
        h = self._update_h(x, h=h.detach(), w=w)
        recon = w @ h
        if bool(zero_rows.any()):
            recon = torch.where(zero_rows[:, None, None], torch.zeros_like(recon), recon)
        return recon


class InterScaleMixer(nn.Module):
    """Squeeze concatenated stages, apply the factorization, project back."""

    def __init__(self, in_channels, dec: DecoderConfig):
        super().__init__()
        self.squeeze = nn.Conv2d(in_channels, dec.squeeze_channels, 1)
        self.nmf = NmfContext(
            dec.squeeze_channels,
            dec.nmf_rank,
            dec.nmf_iters,
            seed=dec.nmf_seed,
            running_bases=dec.running_bases,
        )
        self.proj_out = nn.Conv2d(dec.squeeze_channels, dec.squeeze_channels, 1)

    def forward(self, x):
        b, _, h, w = x.shape
        z = F.relu(self.squeeze(x))
        ctx = self.nmf(z.flatten(2)).reshape(b, -1, h, w)
        return F.relu(z + self.proj_out(ctx))


class SegHead(nn.Module):
    """1x1 conv to one channel, then bilinear upsampling to image size."""

    def __init__(self, in_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, 1, 1)

    def forward(self, x, out_size):
        return align_to(self.conv(x), out_size)


class FullScaleDecoder(nn.Module):
    """Turns the encoder's stage maps into full-resolution logits."""

    def __init__(self, model_cfg: ModelConfig, dec: DecoderConfig):
        super().__init__()
        self.variant = dec.variant
        self.cfg = dec
        channels = model_cfg.channels
        stages = (4,) if dec.variant == "s4-head-mlp" else dec.use_stages
        self.use_stages = tuple(stages)
        picked = [channels[s - 1] for s in self.use_stages]

        if dec.variant == "none":
            self.head = SegHead(channels[3])
            return
        if dec.variant in ("concat-head-mlp", "s4-head-mlp"):
            self.mixer = InterScaleMixer(sum(picked), dec)
            self.head = SegHead(dec.squeeze_channels)
        elif dec.variant == "mlp-concat-mlp":
            self.stage_proj = nn.ModuleList(
                nn.Conv2d(c, dec.squeeze_channels, 1) for c in picked
            )
            self.fuse = nn.Conv2d(dec.squeeze_channels * len(picked),
                                  dec.squeeze_channels, 1)
            self.head = SegHead(dec.squeeze_channels)
        elif dec.variant == "mlp-concat-head-mlp":
            self.stage_proj = nn.ModuleList(
                nn.Conv2d(c, dec.squeeze_channels, 1) for c in picked
            )
            self.mixer = InterScaleMixer(dec.squeeze_channels * len(picked), dec)
            self.head = SegHead(dec.squeeze_channels)

    def forward(self, feats, out_size):
        """feats: list of 4 stage maps, coarse stages last.

        Returns logits (B, 1, H, W) at ``out_size``.
        """
        if len(feats) != 4:
            raise ShapeMismatch(f"expected 4 stage maps, got {len(feats)}")
        if self.variant == "none":
            return self.head(feats[3], out_size)
        grid = feats[0].shape[-2:]
        picked = [feats[s - 1] for s in self.use_stages]
        if self.variant in ("concat-head-mlp", "s4-head-mlp"):
            aligned = [align_to(f, grid) for f in picked]
            mixed = self.mixer(torch.cat(aligned, dim=1))
            return self.head(mixed, out_size)
        projected = [align_to(p(f), grid) for p, f in zip(self.stage_proj, picked)]
        stacked = torch.cat(projected, dim=1)
        if self.variant == "mlp-concat-mlp":
            return self.head(F.relu(self.fuse(stacked)), out_size)
        return self.head(self.mixer(stacked), out_size)


def predict_mask(logits, threshold=0.5):
    """Sigmoid + strict threshold; a probability equal to the threshold is
    background, so ties break consistently everywhere."""
    return (torch.sigmoid(logits) > threshold).to(torch.uint8)
