"""Vision-language attention block.

One block reweights a visual feature map with two context signals computed
from a shared depthwise pre-convolution:

* a visual map summed over strip-shaped depthwise conv units (1xd then dx1),
  which buys a large receptive field at small cost, and
* a language map where every pixel attends over the expression tokens and
  pulls back a per-pixel mixture of token features, optionally multiplied
  by a projected copy of the visual input.

Input and language maps are fused by a 1x1 conv into a gate that multiplies
the block input, so the block never changes the channel count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AttentionConfig
from .errors import AllTokensMasked, ShapeMismatch
from .text import TextFeatures

MASK_FILL = -1e9


def masked_softmax(logits, valid, dim=-1):
    """Softmax that assigns exactly zero weight to masked positions.

    Masked logits are replaced (not added to) with -1e9 before the softmax;
    after the usual max subtraction their exponent underflows to 0.0, so the
    result is bitwise independent of whatever values sat at masked slots.
    """
    if not bool(valid.any(dim=dim).all()):
        raise AllTokensMasked("softmax row with every position masked")
    filled = logits.masked_fill(~valid, MASK_FILL)
    return F.softmax(filled, dim=dim)


class StripConvUnit(nn.Module):
    """Depthwise 1xd conv followed by a depthwise dx1 conv."""

    def __init__(self, channels, d):
        super().__init__()
        self.conv_h = nn.Conv2d(
            channels, channels, (1, d), padding=(0, d // 2), groups=channels
        )
        self.conv_v = nn.Conv2d(
            channels, channels, (d, 1), padding=(d // 2, 0), groups=channels
        )

    def forward(self, x):
        return self.conv_v(self.conv_h(x))


class InstanceNorm(nn.Module):
    """Per-map normalization written out by hand.

    nn.InstanceNorm2d silently returns wrong input gradients for batch-1
    inputs on some CPU torch builds (the fused kernel drops the statistics
    terms), so the statistics are computed with plain tensor ops that
    autograd differentiates exactly.  Matches affine InstanceNorm2d
    numerics: biased variance over H, W and eps 1e-5.
    """

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        xn = (x - mu) / torch.sqrt(var + self.eps)
        return xn * self.weight[:, None, None] + self.bias[:, None, None]


def _proj_norm_2d(c_in, c_out):
    return nn.Sequential(nn.Conv2d(c_in, c_out, 1), InstanceNorm(c_out))


@dataclass
class CrossAttentionState:
    """Intermediates exposed for inspection and tests."""

    logits: torch.Tensor  # (B, HW, T), after masking
    weights: torch.Tensor  # (B, HW, T), rows sum to 1
    visual_map: torch.Tensor  # (B, C, H, W)
    language_map: torch.Tensor  # (B, C, H, W)
    gate: torch.Tensor  # (B, C, H, W)


class VisionLanguageAttention(nn.Module):
    """The attention block described in the module docstring.

    Args:
        channels: channel count of the visual feature map at this stage.
        text_channels: channel count of the encoded expression.
        cfg: kernel sizes and switches shared across stages.
    """

    def __init__(self, channels, text_channels, cfg: AttentionConfig = None):
        super().__init__()
        cfg = cfg if cfg is not None else AttentionConfig()
        self.channels = channels
        self.text_channels = text_channels
        self.cfg = cfg
        self.scale = (
            cfg.scale_divisor if cfg.scale_divisor is not None else float(text_channels)
        )
        self.pre_conv = nn.Conv2d(
            channels, channels, cfg.pre_kernel, padding=cfg.pre_kernel // 2,
            groups=channels,
        )
        self.units = nn.ModuleList(StripConvUnit(channels, d) for d in cfg.kernel_sizes)
        self.pix_query = _proj_norm_2d(channels, channels)
        self.pix_value = _proj_norm_2d(channels, channels) if cfg.use_pixel_map else None
        self.txt_key = nn.Conv1d(text_channels, channels, 1)
        self.txt_value = nn.Conv1d(text_channels, channels, 1)
        self.lang_out = _proj_norm_2d(channels, channels)
        self.fuse = nn.Conv2d(channels, channels, 1)

    def forward(self, v, text: TextFeatures, return_state=False):
        if v.dim() != 4 or v.shape[1] != self.channels:
            raise ShapeMismatch(
                f"expected visual input (B, {self.channels}, H, W), got {tuple(v.shape)}"
            )
        if text.features.shape[1] != self.text_channels:
            raise ShapeMismatch(
                f"expected {self.text_channels} text channels, "
                f"got {text.features.shape[1]}"
            )
        if text.features.shape[0] != v.shape[0]:
            raise ShapeMismatch("batch sizes of image and text disagree")
        b, c, h, w = v.shape
        pre = self.pre_conv(v)

        visual = pre.new_zeros(pre.shape)
        for unit in self.units:
            visual = visual + unit(pre)

        queries = self.pix_query(pre).flatten(2)          # (B, C, HW)
        keys = self.txt_key(text.features)                # (B, C, T)
        values = self.txt_value(text.features)            # (B, C, T)
        logits = torch.einsum("bcp,bct->bpt", queries, keys) / math.sqrt(self.scale)
        valid = text.mask[:, None, :].to(torch.bool)
        weights = masked_softmax(logits, valid)
        context = torch.einsum("bpt,bct->bcp", weights, values)
        language = self.lang_out(context.reshape(b, c, h, w))
        if self.pix_value is not None:
            language = language * self.pix_value(pre)

        gate = self.fuse(pre + visual + language)
        out = gate * v
        if not return_state:
            return out
        state = CrossAttentionState(
            logits=logits.masked_fill(~valid, MASK_FILL),
            weights=weights,
            visual_map=visual,
            language_map=language,
            gate=gate,
        )
        return out, state
