"""Analytic parameter and FLOP counting.

Pure arithmetic over the config; never instantiates a model, so it cannot
depend on weight values.  Conventions: FLOPs = 2 x multiply-accumulates of
convolutions, linear layers and matrix products at the configured input
size; normalization, activations, bias adds and elementwise products are
not counted.  The headline numbers cover the vision encoder plus decoder;
the text encoder is reported separately since segmentation networks are
conventionally budgeted without their language backbone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .config import DecoderConfig, ModelConfig
from .text import DEFAULT_WORDS


@dataclass
class BudgetReport:
    params: int
    flops: int
    text_params: int
    text_flops: int
    breakdown: dict = field(default_factory=dict)

    def line(self) -> str:
        return (f"params {self.params / 1e6:.2f} M, "
                f"flops {self.flops / 1e9:.2f} G "
                f"(text encoder adds {self.text_params / 1e6:.2f} M / "
                f"{self.text_flops / 1e9:.2f} G)")


def _conv(cin, cout, k, hw, groups=1, bias=True):
    """-> (params, flops) of a conv evaluated on hw output pixels."""
    weight = cin // groups * k * cout
    params = weight + (cout if bias else 0)
    return params, 2 * weight * hw


def _norm_params(c):
    return 2 * c


def _attention_block(c, ct, t, hw, cfg):
    p = f = 0
    # depthwise pre-conv
    dp, df = _conv(c, c, cfg.pre_kernel ** 2, hw, groups=c)
    p, f = p + dp, f + df
    # strip conv unit pairs
    for d in cfg.kernel_sizes:
        for _ in range(2):
            dp, df = _conv(c, c, d, hw, groups=c)
            p, f = p + dp, f + df
    # pixel-side projections (1x1 conv + affine instance norm)
    n_proj = 3 if cfg.use_pixel_map else 2
    for _ in range(n_proj):
        dp, df = _conv(c, c, 1, hw)
        p, f = p + dp + _norm_params(c), f + df
    # text-side projections
    for _ in range(2):
        dp, df = _conv(ct, c, 1, t)
        p, f = p + dp, f + df
    # pixel-token attention products
    f += 2 * hw * t * c  # similarity logits
    f += 2 * hw * t * c  # token mixture pulled back to pixels
    # fusing 1x1 conv
    dp, df = _conv(c, c, 1, hw)
    p, f = p + dp, f + df
    return p, f


def _encoder_block(c, ct, t, hw, model_cfg: ModelConfig):
    p, f = _attention_block(c, ct, t, hw, model_cfg.attention)
    p += _norm_params(c)
    hidden = c * model_cfg.ffn_expansion
    for args in ((c, hidden, 1, hw, 1), (hidden, hidden, 9, hw, hidden),
                 (hidden, c, 1, hw, 1)):
        dp, df = _conv(args[0], args[1], args[2], args[3], groups=args[4])
        p, f = p + dp, f + df
    p += _norm_params(c)
    return p, f


def _nmf_flops(c, rank, n, n_iter):
    h_update = rank * c * n + rank * rank * c + rank * rank * n
    w_update = c * rank * n + rank * rank * n + c * rank * rank
    recon = c * rank * n
    macs = (n_iter - 1) * (h_update + w_update) + h_update + recon
    return 2 * macs


def _mixer(in_c, n, dec: DecoderConfig):
    sq = dec.squeeze_channels
    p = f = 0
    dp, df = _conv(in_c, sq, 1, n)
    p, f = p + dp, f + df
    f += _nmf_flops(sq, dec.nmf_rank, n, dec.nmf_iters)
    dp, df = _conv(sq, sq, 1, n)
    p, f = p + dp, f + df
    return p, f


def _decoder(model_cfg: ModelConfig, dec: DecoderConfig):
    chans = model_cfg.channels
    s1 = model_cfg.image_size // 4
    n = s1 * s1
    sq = dec.squeeze_channels
    if dec.variant == "none":
        n4 = (model_cfg.image_size // 32) ** 2
        return _conv(chans[3], 1, 1, n4)
    stages = (4,) if dec.variant == "s4-head-mlp" else dec.use_stages
    picked = [chans[s - 1] for s in stages]
    p = f = 0
    if dec.variant in ("concat-head-mlp", "s4-head-mlp"):
        dp, df = _mixer(sum(picked), n, dec)
        p, f = p + dp, f + df
    else:
        for c in picked:
            dp, df = _conv(c, sq, 1, n)
            p, f = p + dp, f + df
        if dec.variant == "mlp-concat-mlp":
            dp, df = _conv(sq * len(picked), sq, 1, n)
            p, f = p + dp, f + df
        else:
            dp, df = _mixer(sq * len(picked), n, dec)
            p, f = p + dp, f + df
    dp, df = _conv(sq, 1, 1, n)
    return p + dp, f + df


def _toy_text(ct, t, depth=2, vocab_size=None):
    if vocab_size is None:
        vocab_size = len(DEFAULT_WORDS) + 2
    p = vocab_size * ct + t * ct
    f = 0
    for _ in range(depth):
        p += ct * 3 * ct + 3 * ct          # qkv
        p += ct * ct + ct                  # out projection
        p += 2 * _norm_params(ct)          # the two layer norms
        p += ct * 2 * ct + 2 * ct + 2 * ct * ct + ct  # mlp
        f += 2 * (8 * ct * ct * t + 2 * t * t * ct)
    return p, f


def count_params_flops(model_cfg: ModelConfig,
                       dec: DecoderConfig = None) -> BudgetReport:
    dec = dec if dec is not None else DecoderConfig()
    s = model_cfg.image_size
    t = model_cfg.max_tokens
    ct = model_cfg.text_channels
    chans = model_cfg.channels
    sizes = model_cfg.stage_sizes
    breakdown = {}

    half = max(chans[0] // 2, 1)
    p1, f1 = _conv(model_cfg.in_channels, half, 9, (s // 2) ** 2)
    p2, f2 = _conv(half, chans[0], 9, (s // 4) ** 2)
    stem = (p1 + p2 + _norm_params(half) + _norm_params(chans[0]), f1 + f2)
    breakdown["stem"] = stem

    downs_p = downs_f = 0
    for i in range(3):
        dp, df = _conv(chans[i], chans[i + 1], 9, sizes[i + 1] ** 2)
        downs_p += dp + _norm_params(chans[i + 1])
        downs_f += df
    breakdown["downsamples"] = (downs_p, downs_f)

    stages_p = stages_f = 0
    for i in range(4):
        bp, bf = _encoder_block(chans[i], ct, t, sizes[i] ** 2, model_cfg)
        stages_p += bp * model_cfg.depths[i]
        stages_f += bf * model_cfg.depths[i]
        breakdown[f"stage{i + 1}"] = (bp * model_cfg.depths[i],
                                      bf * model_cfg.depths[i])

    dec_p, dec_f = _decoder(model_cfg, dec)
    breakdown["decoder"] = (dec_p, dec_f)

    if model_cfg.text_backend == "toy":
        text_p, text_f = _toy_text(ct, t)
    else:
        # BERT-base: standard published size; forward cost over T tokens.
        text_p = 109_482_240
        text_f = 2 * (12 * (4 * 768 * 768 + 2 * 768 * 3072) * t
                      + 12 * 2 * t * t * 768)
    breakdown["text_encoder"] = (text_p, text_f)

    params = stem[0] + downs_p + stages_p + dec_p
    flops = stem[1] + downs_f + stages_f + dec_f
    return BudgetReport(params=params, flops=flops,
                        text_params=text_p, text_flops=text_f,
                        breakdown=breakdown)


def torch_param_count(module) -> int:
    return sum(p.numel() for p in module.parameters())
