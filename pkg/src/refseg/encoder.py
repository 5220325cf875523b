"""Four-stage vision encoder with language-conditioned blocks.

The stem maps the image to 1/4 resolution; each later stage halves the
spatial size with a strided conv and doubles the channel budget per the
config.  Every block applies vision-language attention and a convolutional
FFN, both with post-norm residuals, so the expression steers features at
every scale.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from .attention import VisionLanguageAttention
from .config import ModelConfig
from .errors import BadImageShape
from .text import TextFeatures


def make_norm(kind, channels):
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    return nn.GroupNorm(1, channels)


class ConvFFN(nn.Module):
    """1x1 expand, depthwise 3x3, GELU, 1x1 project back."""

    def __init__(self, channels, expansion):
        super().__init__()
        hidden = channels * expansion
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.dw = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        return self.fc2(self.act(self.dw(self.fc1(x))))


class EncoderBlock(nn.Module):
    def __init__(self, channels, text_channels, cfg: ModelConfig):
        super().__init__()
        self.attn = VisionLanguageAttention(channels, text_channels, cfg.attention)
        self.norm1 = make_norm(cfg.norm, channels)
        self.ffn = ConvFFN(channels, cfg.ffn_expansion)
        self.norm2 = make_norm(cfg.norm, channels)

    def forward(self, x, text: TextFeatures):
        x = self.norm1(self.attn(x, text) + x)
        x = self.norm2(self.ffn(x) + x)
        return x


class ImageStem(nn.Module):
    """Two stride-2 3x3 convs: image -> (B, C1, H/4, W/4)."""

    def __init__(self, in_channels, out_channels, norm):
        super().__init__()
        half = max(out_channels // 2, 1)
        self.conv1 = nn.Conv2d(in_channels, half, 3, stride=2, padding=1)
        self.norm1 = make_norm(norm, half)
        self.act = nn.GELU()
        self.conv2 = nn.Conv2d(half, out_channels, 3, stride=2, padding=1)
        self.norm2 = make_norm(norm, out_channels)

    def forward(self, x):
        x = self.act(self.norm1(self.conv1(x)))
        return self.norm2(self.conv2(x))


class Downsample(nn.Module):
    def __init__(self, c_in, c_out, norm):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
        self.norm = make_norm(norm, c_out)

    def forward(self, x):
        return self.norm(self.conv(x))


class VisionLanguageEncoder(nn.Module):
    """Produces the four stage feature maps consumed by the decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = ImageStem(cfg.in_channels, cfg.channels[0], cfg.norm)
        self.downs = nn.ModuleList(
            Downsample(cfg.channels[i], cfg.channels[i + 1], cfg.norm) for i in range(3)
        )
        self.stages = nn.ModuleList(
            nn.ModuleList(
                EncoderBlock(cfg.channels[i], cfg.text_channels, cfg)
                for _ in range(cfg.depths[i])
            )
            for i in range(4)
        )

    def forward(self, image, text: TextFeatures):
        """image (B, C_in, H, W) with H, W divisible by 32 -> list of 4 maps."""
        if image.dim() != 4 or image.shape[1] != self.cfg.in_channels:
            raise BadImageShape(
                f"expected (B, {self.cfg.in_channels}, H, W), got {tuple(image.shape)}"
            )
        h, w = image.shape[-2:]
        if h % 32 != 0 or w % 32 != 0 or h == 0 or w == 0:
            raise BadImageShape(
                f"image sides must be positive multiples of 32, got {h}x{w}"
            )
        feats = []
        x = self.stem(image)
        for i in range(4):
            if i > 0:
                x = self.downs[i - 1](x)
            for block in self.stages[i]:
                x = block(x, text)
            feats.append(x)
        return feats
