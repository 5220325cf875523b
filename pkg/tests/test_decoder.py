import warnings

import pytest
import torch

from refseg.config import DecoderConfig, ModelConfig
from refseg.decoder import (FullScaleDecoder, NmfContext, align_to,
                            predict_mask)
from refseg.errors import ConfigError


def tiny_feats(b=1, channels=(8, 12, 16, 24), sizes=(24, 12, 6, 3)):
    torch.manual_seed(11)
    return [torch.randn(b, c, s, s) for c, s in zip(channels, sizes)]


def tiny_model_cfg_():
    return ModelConfig(image_size=96, depths=(1, 1, 1, 1),
                       channels=(8, 12, 16, 24), text_channels=16)


def test_align_identity_is_bitwise_noop():
    x = torch.randn(1, 4, 10, 10)
    assert align_to(x, (10, 10)) is x


def test_align_resamples():
    x = torch.randn(1, 4, 5, 5)
    y = align_to(x, (10, 10))
    assert y.shape == (1, 4, 10, 10)


def test_nmf_outputs_nonnegative_on_nonnegative_input():
    nmf = NmfContext(channels=6, rank=2, n_iter=4, seed=0)
    x = torch.rand(2, 6, 50)
    out = nmf(x)
    assert out.shape == x.shape
    assert (out >= 0).all()


def test_nmf_deterministic_given_seed():
    x = torch.rand(1, 6, 30)
    a = NmfContext(6, 2, 4, seed=3)(x)
    b = NmfContext(6, 2, 4, seed=3)(x)
    assert torch.equal(a, b)
    c = NmfContext(6, 2, 4, seed=4)(x)
    assert not torch.equal(a, c)


def test_nmf_degenerate_zero_rows():
    nmf = NmfContext(channels=4, rank=2, n_iter=3, seed=0)
    x = torch.rand(2, 4, 20)
    x[1] = 0.0  # one batch element entirely zero
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = nmf(x)
    assert nmf.last_degenerate
    assert (out[1] == 0).all()
    assert (out[0] >= 0).all()


def test_nmf_pinned_factors_reproduce_prefix():
    """Pinning the captured prefix factors must reproduce the exact same
    output as the run that captured them."""
    nmf = NmfContext(channels=6, rank=3, n_iter=5, seed=1)
    x = torch.rand(1, 6, 40)
    a = nmf(x)
    assert nmf.last_prefix_factors is not None
    nmf.pinned_factors = nmf.last_prefix_factors
    b = nmf(x)
    assert torch.equal(a, b)


def test_nmf_running_bases_updates_buffer_in_train_mode():
    nmf = NmfContext(channels=5, rank=2, n_iter=3, seed=0,
                     running_bases=True)
    before = nmf.bases.clone()
    nmf.train()
    nmf(torch.rand(1, 5, 20))
    assert not torch.equal(before, nmf.bases)
    frozen = nmf.bases.clone()
    nmf.eval()
    nmf(torch.rand(1, 5, 20))
    assert torch.equal(frozen, nmf.bases)


@pytest.mark.parametrize("variant", ["concat-head-mlp", "s4-head-mlp",
                                     "mlp-concat-mlp", "mlp-concat-head-mlp",
                                     "none"])
def test_decoder_variants_forward(variant):
    cfg = tiny_model_cfg_()
    dec_cfg = DecoderConfig(variant=variant, squeeze_channels=16, nmf_rank=4,
                            nmf_iters=3)
    dec = FullScaleDecoder(cfg, dec_cfg)
    logits = dec(tiny_feats(), out_size=(96, 96))
    assert logits.shape == (1, 1, 96, 96)


def test_s4_variant_forces_last_stage():
    cfg = tiny_model_cfg_()
    dec = FullScaleDecoder(cfg, DecoderConfig(variant="s4-head-mlp",
                                              squeeze_channels=16,
                                              nmf_rank=4, nmf_iters=3,
                                              use_stages=(2, 3, 4)))
    assert dec.use_stages == (4,)


def test_decoder_stage_subsets():
    cfg = tiny_model_cfg_()
    for stages, ch in (((4,), 24), ((3, 4), 40), ((1, 2, 3, 4), 60)):
        dec = FullScaleDecoder(cfg, DecoderConfig(
            variant="concat-head-mlp", use_stages=stages,
            squeeze_channels=16, nmf_rank=4, nmf_iters=3))
        assert dec.mixer.squeeze.in_channels == ch
        out = dec(tiny_feats(), out_size=(96, 96))
        assert out.shape == (1, 1, 96, 96)


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError):
        DecoderConfig(variant="nope")
    with pytest.raises(ConfigError):
        DecoderConfig(use_stages=(0, 1))
    with pytest.raises(ConfigError):
        DecoderConfig(use_stages=())


def test_predict_mask_threshold_strict():
    logits = torch.tensor([[[[-2.0, 0.0, 2.0]]]])
    m = predict_mask(logits, threshold=0.5)
    # sigmoid(0) == 0.5 exactly, strict > keeps it out of the mask
    assert m.dtype == torch.uint8
    assert m.shape == logits.shape
    assert m[0, 0, 0].tolist() == [0, 0, 1]


def test_decoder_gradients_reach_all_used_stages():
    cfg = tiny_model_cfg_()
    dec = FullScaleDecoder(cfg, DecoderConfig(squeeze_channels=16,
                                              nmf_rank=4, nmf_iters=3))
    feats = [f.requires_grad_(True) for f in tiny_feats()]
    out = dec(feats, out_size=(96, 96))
    out.sum().backward()
    # default use_stages (2,3,4); stage 1 only supplies the grid size
    assert feats[0].grad is None
    for i in (1, 2, 3):
        assert feats[i].grad is not None
        assert float(feats[i].grad.abs().sum()) > 0
