import warnings

import pytest
import torch

from refseg.config import ModelConfig
from refseg.errors import AllTokensMasked, BackendUnavailable, EmptyExpression
from refseg.text import (ToyTextEncoder, Vocabulary, batch_tokens,
                         build_text_encoder, tokenize)


def test_tokenize_basic():
    vocab = Vocabulary()
    seq = tokenize("the lesion in the upper left", vocab, max_tokens=12)
    assert seq.ids.shape == (12,)
    assert seq.mask.shape == (12,)
    assert int(seq.mask.sum()) == 6
    assert seq.ids.dtype == torch.long
    # padding positions carry PAD and False mask
    assert (seq.ids[6:] == vocab.pad_id).all()
    assert not seq.mask[6:].any()


def test_tokenize_case_and_punctuation():
    vocab = Vocabulary()
    a = tokenize("The Lesion, in the LEFT half!", vocab, 12)
    b = tokenize("the lesion in the left half", vocab, 12)
    assert torch.equal(a.ids, b.ids)


def test_unknown_words_map_to_unk():
    vocab = Vocabulary()
    seq = tokenize("the zzyzx lesion", vocab, 8)
    assert seq.ids[1] == vocab.unk_id
    assert seq.ids[0] != vocab.unk_id


def test_empty_expression_raises():
    vocab = Vocabulary()
    with pytest.raises(EmptyExpression):
        tokenize("", vocab, 8)
    with pytest.raises(EmptyExpression):
        tokenize("  ... !!", vocab, 8)


def test_truncation_warns():
    vocab = Vocabulary()
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        seq = tokenize("the " * 30, vocab, 8)
    assert any("truncat" in str(x.message).lower() for x in w)
    assert int(seq.mask.sum()) == 8


def test_vocab_covers_generator_grammar():
    # every word the synthetic grammar can emit must tokenize without UNK
    vocab = Vocabulary()
    phrases = ["the lesion", "the largest lesion", "the smallest lesion",
               "with a sharp border", "with a fuzzy border",
               "with an oval shape", "with an irregular shape"]
    for v in ("upper", "lower"):
        for h in ("left", "right"):
            phrases.append(f"in the {v} {h}")
    for word in ("upper", "lower", "left", "right"):
        phrases.append(f"in the {word} half")
    for p in phrases:
        seq = tokenize(p, vocab, 24)
        assert (seq.ids[seq.mask] != vocab.unk_id).all(), p


def test_toy_encoder_shapes_and_mask():
    enc = ToyTextEncoder(channels=32, max_tokens=10)
    feats = enc.encode(["the lesion in the left half", "the largest lesion"])
    assert feats.features.shape == (2, 32, 10)
    assert feats.mask.shape == (2, 10)
    assert feats.mask.dtype == torch.bool


def test_pad_tokens_do_not_change_valid_features():
    """Changing ids at masked positions must be bitwise invisible."""
    torch.manual_seed(0)
    enc = ToyTextEncoder(channels=16, max_tokens=8).eval()
    vocab = enc.vocab
    seq = tokenize("the lesion in the left half", vocab, 8)
    ids = seq.ids.unsqueeze(0)
    mask = seq.mask.unsqueeze(0)
    with torch.no_grad():
        a = enc(ids, mask)
    ids2 = ids.clone()
    ids2[0, ~mask[0]] = 5  # arbitrary real token ids in padding slots
    with torch.no_grad():
        b = enc(ids2, mask)
    valid = mask[0]
    assert torch.equal(a[0, :, valid], b[0, :, valid])


def test_all_tokens_masked_rejected():
    enc = ToyTextEncoder(channels=16, max_tokens=8)
    ids = torch.zeros(1, 8, dtype=torch.long)
    mask = torch.zeros(1, 8, dtype=torch.bool)
    with pytest.raises(AllTokensMasked):
        enc(ids, mask)


def test_batch_tokens_stacks():
    vocab = Vocabulary()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        seqs = [tokenize("the lesion", vocab, 6),
                tokenize("the largest lesion in the left half", vocab, 6)]
    ids, mask = batch_tokens(seqs)
    assert ids.shape == (2, 6)
    assert mask.shape == (2, 6)


def test_build_text_encoder_toy():
    cfg = ModelConfig(text_backend="toy", text_channels=24)
    enc = build_text_encoder(cfg)
    out = enc.encode(["the lesion"])
    assert out.features.shape[1] == 24


def test_pretrained_requires_matching_channels():
    cfg = ModelConfig(text_backend="pretrained", text_channels=64)
    with pytest.raises(Exception):
        build_text_encoder(cfg)


def test_pretrained_backend_unavailable_without_weights():
    cfg = ModelConfig(text_backend="pretrained", text_channels=768)
    try:
        enc = build_text_encoder(cfg)
        enc.encode(["the lesion"])
    except BackendUnavailable:
        pass  # expected in an offline environment
    else:
        pytest.skip("pretrained backend available here")
