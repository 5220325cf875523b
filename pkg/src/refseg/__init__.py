"""Language-guided lesion segmentation: model, synthetic benchmark,
training, evaluation, CLI and HTTP service."""

from .config import (AttentionConfig, DecoderConfig, GeneratorConfig,
                     ModelConfig, RunConfig, TrainConfig, load_config,
                     save_config, toy_run_config)
from .model import (ReferringSegmenter, build_model, load_checkpoint,
                    model_from_checkpoint, save_checkpoint)

__all__ = [
    "AttentionConfig", "DecoderConfig", "GeneratorConfig", "ModelConfig",
    "RunConfig", "TrainConfig", "load_config", "save_config",
    "toy_run_config", "ReferringSegmenter", "build_model",
    "load_checkpoint", "model_from_checkpoint", "save_checkpoint",
]

__version__ = "0.1.0"
