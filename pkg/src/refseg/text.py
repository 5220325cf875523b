"""Text side: tokenization and the two expression encoders.

The toy backend is a small transformer over a closed vocabulary and is the
default; it trains from scratch together with the vision encoder.  The
pretrained backend wraps a HuggingFace BERT when the transformers package
and its weights are actually available, and raises BackendUnavailable
otherwise instead of silently downloading nothing.

Feature layout everywhere is (batch, channels, tokens) with a boolean
validity mask (batch, tokens); True marks a real token.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import AllTokensMasked, BackendUnavailable, ConfigError, EmptyExpression

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# Closed vocabulary of the synthetic benchmark grammar plus a few spare
# words so near-miss phrasings do not all collapse onto <unk>.
DEFAULT_WORDS = [
    "the", "a", "an", "lesion", "largest", "smallest", "biggest", "in",
    "upper", "lower", "left", "right", "half", "with", "sharp", "fuzzy",
    "border", "oval", "irregular", "shape", "round", "blob", "spot",
    "region", "area", "top", "bottom", "side", "corner", "center",
    "middle", "near", "of", "image", "and", "most", "is", "located",
    "at", "on", "bright", "dark", "small", "large", "tiny", "big",
    "one", "two", "three", "that", "this", "it", "its", "edge",
    "margin", "mass", "nodule", "patch", "zone", "part",
]


class Vocabulary:
    """Word <-> id mapping with fixed pad=0 and unk=1 slots."""

    def __init__(self, words=None):
        words = list(DEFAULT_WORDS if words is None else words)
        self.words = [PAD_TOKEN, UNK_TOKEN] + words
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ConfigError("vocabulary contains duplicate words")

    def __len__(self):
        return len(self.words)

    @property
    def pad_id(self):
        return 0

    @property
    def unk_id(self):
        return 1

    def id_of(self, word: str) -> int:
        return self.index.get(word, self.unk_id)


_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass
class TokenSequence:
    """One tokenized expression, padded to a fixed length."""

    ids: torch.Tensor  # long, (T,)
    mask: torch.Tensor  # bool, (T,), True = valid token
    text: str

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass
class TextFeatures:
    """Encoded batch of expressions: (B, C, T) features plus validity mask."""

    features: torch.Tensor  # (B, C, T)
    mask: torch.Tensor  # bool, (B, T)

    def __post_init__(self):
        if self.features.dim() != 3:
            raise ConfigError(
                f"text features must be (B, C, T), got {tuple(self.features.shape)}"
            )
        b, _, t = self.features.shape
        if self.mask.shape != (b, t):
            raise ConfigError(
                f"text mask shape {tuple(self.mask.shape)} does not match features"
            )
        if not bool(self.mask.any(dim=1).all()):
            raise AllTokensMasked("each sequence needs at least one valid token")


def tokenize(text: str, vocab: Vocabulary, max_tokens: int) -> TokenSequence:
    """Lowercase, strip punctuation, split, map to ids, pad/truncate.

    Raises EmptyExpression when nothing is left after trimming.  Longer
    expressions are truncated with a warning rather than rejected.
    """
    words = _WORD_RE.findall(text.lower())
    if not words:
        raise EmptyExpression(f"expression {text!r} contains no tokens")
    if len(words) > max_tokens:
        warnings.warn(
            f"expression truncated from {len(words)} to {max_tokens} tokens",
            stacklevel=2,
        )
        words = words[:max_tokens]
    ids = torch.full((max_tokens,), 0, dtype=torch.long)
    mask = torch.zeros(max_tokens, dtype=torch.bool)
    for i, w in enumerate(words):
        ids[i] = vocab.id_of(w)
        mask[i] = True
    return TokenSequence(ids=ids, mask=mask, text=text)


def batch_tokens(seqs) -> tuple:
    ids = torch.stack([s.ids for s in seqs])
    mask = torch.stack([s.mask for s in seqs])
    return ids, mask


class _SelfAttentionBlock(nn.Module):
    """Post-norm transformer block with key-padding masking.

    Written out by hand so padded positions provably never leak into valid
    ones, which the downstream invariance tests rely on bit for bit.
    """

    def __init__(self, dim, heads=4, expansion=2):
        super().__init__()
        if dim % heads != 0:
            raise ConfigError(f"text dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, expansion * dim), nn.GELU(), nn.Linear(expansion * dim, dim)
        )

    def forward(self, x, mask):
        b, t, c = x.shape
        d = c // self.heads
        qkv = self.qkv(x).reshape(b, t, 3, self.heads, d).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(d)
        scores = scores.masked_fill(~mask[:, None, None, :], -1e9)
        attn = F.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, c)
        x = self.norm1(x + self.proj(out))
        x = self.norm2(x + self.mlp(x))
        return x


class ToyTextEncoder(nn.Module):
    """Small from-scratch transformer over the closed vocabulary."""

    def __init__(self, channels, max_tokens, vocab=None, depth=2, heads=4):
        super().__init__()
        self.vocab = vocab if vocab is not None else Vocabulary()
        self.channels = channels
        self.max_tokens = max_tokens
        self.embed = nn.Embedding(len(self.vocab), channels, padding_idx=0)
        self.pos = nn.Parameter(torch.zeros(1, max_tokens, channels))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(
            _SelfAttentionBlock(channels, heads) for _ in range(depth)
        )

    def forward(self, ids, mask):
        """ids (B, T) long, mask (B, T) bool -> features (B, C, T)."""
        if not bool(mask.any(dim=1).all()):
            raise AllTokensMasked("a sequence in the batch has no valid token")
        x = self.embed(ids) + self.pos[:, : ids.shape[1]]
        for block in self.blocks:
            x = block(x, mask)
        return x.transpose(1, 2)

    def encode(self, texts) -> TextFeatures:
        seqs = [tokenize(t, self.vocab, self.max_tokens) for t in texts]
        ids, mask = batch_tokens(seqs)
        device = self.pos.device
        feats = self.forward(ids.to(device), mask.to(device))
        return TextFeatures(features=feats, mask=mask.to(device))


class PretrainedTextEncoder(nn.Module):
    """BERT-base wrapper; 768 channels, last hidden state as features."""

    def __init__(self, max_tokens, model_name="bert-base-uncased", trainable=False):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise BackendUnavailable(
                "transformers is not installed; install the 'pretrained' extra"
            ) from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.bert = AutoModel.from_pretrained(model_name)
        except Exception as exc:  # offline, missing weights, bad cache ...
            raise BackendUnavailable(
                f"cannot load pretrained weights for {model_name!r}: {exc}"
            ) from exc
        self.channels = self.bert.config.hidden_size
        self.max_tokens = max_tokens
        if not trainable:
            for p in self.bert.parameters():
                p.requires_grad_(False)

    def encode(self, texts) -> TextFeatures:
        for t in texts:
            if not _WORD_RE.findall(t.lower()):
                raise EmptyExpression(f"expression {t!r} contains no tokens")
        enc = self.tokenizer(
            list(texts),
            padding="max_length",
            truncation=True,
            max_length=self.max_tokens,
            return_tensors="pt",
        )
        out = self.bert(input_ids=enc["input_ids"], attention_mask=enc["attention_mask"])
        feats = out.last_hidden_state.transpose(1, 2)
        return TextFeatures(features=feats, mask=enc["attention_mask"].bool())


def build_text_encoder(cfg: ModelConfig, vocab=None):
    if cfg.text_backend == "toy":
        return ToyTextEncoder(cfg.text_channels, cfg.max_tokens, vocab=vocab)
    enc = PretrainedTextEncoder(cfg.max_tokens)
    if enc.channels != cfg.text_channels:
        raise ConfigError(
            f"text_channels={cfg.text_channels} but the pretrained backend "
            f"produces {enc.channels}; set model.text_channels = {enc.channels}"
        )
    return enc
