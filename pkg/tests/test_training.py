import math

import numpy as np
import pytest
import torch

from refseg.config import (AttentionConfig, DecoderConfig, GeneratorConfig,
                           ModelConfig, RunConfig, TrainConfig)
from refseg.errors import NonFiniteLoss
from refseg.model import build_model, load_checkpoint
from refseg.synthetic import generate_dataset, partial_text
from refseg.training import (evaluate_model, poly_lr, prepare_tensors,
                             segmentation_loss, soft_dice_loss, split_samples,
                             train_model)


def small_run_cfg(**train_kw):
    train = dict(lr=1e-2, epochs=4, batch_size=4, seed=0, val_fraction=0.0)
    train.update(train_kw)
    return RunConfig(
        model=ModelConfig(image_size=96, depths=(1, 1, 1, 1),
                          channels=(8, 12, 16, 24), text_channels=16,
                          max_tokens=12,
                          attention=AttentionConfig(kernel_sizes=(3, 5))),
        decoder=DecoderConfig(squeeze_channels=16, nmf_rank=4, nmf_iters=3),
        train=TrainConfig(**train),
        data=GeneratorConfig())


@pytest.fixture(scope="module")
def four_samples():
    return generate_dataset(GeneratorConfig(), master_seed=11, count=4)


def test_soft_dice_zero_at_perfect_probs():
    target = torch.tensor([[0.0, 1.0, 1.0, 0.0]]).reshape(1, 2, 2)
    big = 40.0  # sigmoid saturates to exactly 0/1 in float32
    logits = torch.where(target > 0, big, -big)
    assert float(soft_dice_loss(logits, target)) == 0.0


def test_bce_at_zero_logits_is_log_two():
    logits = torch.zeros(2, 1, 4, 4)
    target = torch.randint(0, 2, (2, 4, 4)).float()
    total, bce, dice = segmentation_loss(logits, target)
    assert float(bce) == pytest.approx(math.log(2.0), rel=1e-6)
    assert float(total) == pytest.approx(float(bce) + float(dice), rel=1e-6)


def test_loss_weights_respected():
    logits = torch.randn(1, 1, 4, 4)
    target = torch.randint(0, 2, (1, 4, 4)).float()
    total, bce, dice = segmentation_loss(logits, target, bce_weight=2.0,
                                         dice_weight=0.5)
    assert float(total) == pytest.approx(2.0 * float(bce) + 0.5 * float(dice),
                                         rel=1e-6)


def test_poly_schedule_endpoints():
    assert poly_lr(0.1, 0, 10, 0.9) == pytest.approx(0.1)
    assert poly_lr(0.1, 10, 10, 0.9) == 0.0
    mid = poly_lr(0.1, 5, 10, 0.9)
    assert mid == pytest.approx(0.1 * 0.5 ** 0.9)
    # monotone decrease
    vals = [poly_lr(0.1, e, 10, 0.9) for e in range(11)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_prepare_tensors_shapes(four_samples):
    imgs, masks, ids, tmask = prepare_tensors(four_samples, max_tokens=12)
    assert imgs.shape == (4, 1, 96, 96)
    assert masks.shape == (4, 96, 96)
    assert ids.shape == (4, 12)
    assert tmask.shape == (4, 12)
    assert imgs.dtype == torch.float32
    assert masks.dtype == torch.float32
    assert set(masks.unique().tolist()).issubset({0.0, 1.0})


def test_prepare_tensors_text_fraction(four_samples):
    _, _, full_ids, _ = prepare_tensors(four_samples, text_fraction=1.0,
                                        max_tokens=24)
    _, _, part_ids, part_mask = prepare_tensors(four_samples,
                                                text_fraction=0.25,
                                                max_tokens=24)
    # clipped text comes from partial_text, so token counts can only shrink
    for i, s in enumerate(four_samples):
        n_full = int((full_ids[i] != 0).sum())
        n_part = int((part_ids[i] != 0).sum())
        assert n_part <= n_full
        want = partial_text(s, 0.25)
        assert n_part == len(want.split())


def test_prepare_tensors_override(four_samples):
    _, _, ids, mask = prepare_tensors(four_samples,
                                      text_override="the lesion",
                                      max_tokens=12)
    assert torch.equal(ids[0], ids[1])
    assert int(mask[0].sum()) == 2


def test_split_samples_deterministic(four_samples):
    samples = generate_dataset(GeneratorConfig(), master_seed=12, count=10)
    t1, v1 = split_samples(samples, 0.3, seed=5)
    t2, v2 = split_samples(samples, 0.3, seed=5)
    assert [s.seed for s in t1] == [s.seed for s in t2]
    assert [s.seed for s in v1] == [s.seed for s in v2]
    assert len(v1) == 3
    assert len(t1) == 7
    t3, v3 = split_samples(samples, 0.3, seed=6)
    assert [s.seed for s in v1] != [s.seed for s in v3]
    assert {s.seed for s in t1} | {s.seed for s in v1} == \
        {s.seed for s in samples}


def test_overfit_four_samples(four_samples):
    cfg = small_run_cfg(epochs=150)
    model = build_model(cfg, seed=0)
    history = train_model(model, four_samples, cfg.train)
    assert len(history) == 150
    assert history[-1]["loss"] < history[0]["loss"] * 0.2
    rep = evaluate_model(model, four_samples, batch_size=4)
    assert rep.mean_dice > 0.9, f"overfit dice {rep.mean_dice:.3f}"


def test_training_is_deterministic(four_samples):
    cfg = small_run_cfg(epochs=3)
    m1 = build_model(cfg, seed=0)
    h1 = train_model(m1, four_samples, cfg.train)
    m2 = build_model(cfg, seed=0)
    h2 = train_model(m2, four_samples, cfg.train)
    assert [h["loss"] for h in h1] == [h["loss"] for h in h2]
    for k, v in m1.state_dict().items():
        assert torch.equal(v, m2.state_dict()[k]), k


def test_resume_is_bit_for_bit(four_samples, tmp_path):
    """Interrupt a run after epoch 2 (by snapshotting its per-epoch
    checkpoint), resume it, and require the exact bytes of an
    uninterrupted run."""
    import shutil

    cfg = small_run_cfg(epochs=4)
    full_path = tmp_path / "full.pt"
    snap_path = tmp_path / "epoch2.pt"

    def snapshot(msg):
        # the file holds epoch 2's payload while epoch 3's line is logged
        if msg.startswith("epoch 3/") and not snap_path.exists():
            shutil.copy(full_path, snap_path)

    straight = build_model(cfg, seed=0)
    train_model(straight, four_samples, cfg.train, ckpt_path=full_path,
                log=snapshot)
    assert snap_path.exists()

    resumed = build_model(cfg, seed=123)  # init overwritten by checkpoint
    train_model(resumed, four_samples, cfg.train, resume_from=snap_path)

    for k, v in straight.state_dict().items():
        assert torch.equal(v, resumed.state_dict()[k]), k


def test_checkpoint_written_each_epoch(four_samples, tmp_path):
    cfg = small_run_cfg(epochs=2)
    model = build_model(cfg, seed=0)
    path = tmp_path / "ck.pt"
    history = train_model(model, four_samples, cfg.train, ckpt_path=path)
    payload = load_checkpoint(path)
    assert payload["epoch"] == 2
    assert len(payload["meta"]["history"]) == 2
    assert payload["meta"]["history"][-1]["loss"] == history[-1]["loss"]


def test_non_finite_loss_raises(four_samples):
    cfg = small_run_cfg(epochs=30, lr=1e6)
    model = build_model(cfg, seed=0)
    with pytest.raises(NonFiniteLoss):
        train_model(model, four_samples, cfg.train)


def test_gradient_flow_check_runs(four_samples):
    cfg = small_run_cfg(epochs=1)
    model = build_model(cfg, seed=0)
    train_model(model, four_samples, cfg.train, check_gradients=True)


def test_evaluate_model_provenance(four_samples):
    cfg = small_run_cfg(epochs=1)
    model = build_model(cfg, seed=0)
    rep = evaluate_model(model, four_samples, batch_size=2,
                         dataset="unit", subset="all")
    assert rep.n_samples == 4
    assert rep.dataset == "unit"
    assert 0.0 <= rep.mean_dice <= 1.0
    rep2 = evaluate_model(model, four_samples, batch_size=2,
                          text_override="the lesion")
    assert rep2.text_fraction == 0.0


def test_evaluate_model_deterministic(four_samples):
    cfg = small_run_cfg(epochs=1)
    model = build_model(cfg, seed=0)
    a = evaluate_model(model, four_samples, batch_size=3)
    b = evaluate_model(model, four_samples, batch_size=3)
    assert a.per_sample_dice == b.per_sample_dice
