import numpy as np
import pytest
import torch

from refseg.config import (AttentionConfig, DecoderConfig, GeneratorConfig,
                           ModelConfig, RunConfig, TrainConfig,
                           toy_run_config)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_model_cfg():
    """Smallest geometry that still exercises all four stages."""
    return ModelConfig(
        image_size=96,
        depths=(1, 1, 1, 1),
        channels=(8, 12, 16, 24),
        text_channels=16,
        max_tokens=12,
        ffn_expansion=2,
        attention=AttentionConfig(kernel_sizes=(3, 5)),
    )


@pytest.fixture
def tiny_run_cfg(tiny_model_cfg):
    return RunConfig(
        model=tiny_model_cfg,
        decoder=DecoderConfig(squeeze_channels=16, nmf_rank=4, nmf_iters=3),
        train=TrainConfig(epochs=2, batch_size=2, seed=0),
        data=GeneratorConfig(),
    )


@pytest.fixture
def toy_cfg():
    return toy_run_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
