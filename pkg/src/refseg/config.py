"""Configuration dataclasses and the flat key=value config file format.

All tunables live in four dataclasses (model / decoder / train / data) that
are grouped into a RunConfig.  Config files are plain text, one dotted key
per line::

    model.channels = 64,128,320,512
    model.attention.kernel_sizes = 7,11,21
    train.lr = 3e-5

Tuples are comma separated, booleans are true/false, "none" clears an
optional field.  Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field

from .errors import ConfigError

DECODER_VARIANTS = (
    "concat-head-mlp",
    "s4-head-mlp",
    "mlp-concat-mlp",
    "mlp-concat-head-mlp",
    "none",
)

NORM_KINDS = ("batch", "group")

TEXT_BACKENDS = ("toy", "pretrained")


@dataclass
class AttentionConfig:
    """Shape-independent knobs of the vision-language attention block."""

    # Strip kernel length of each depthwise conv unit; one unit per entry.
    kernel_sizes: tuple = (7, 11, 21)
    # Kernel of the shared depthwise pre-convolution.
    pre_kernel: int = 5
    # Multiply the text-derived map by a projected copy of the visual input.
    use_pixel_map: bool = True
    # Softmax logits are divided by sqrt(scale_divisor); defaults to the
    # text channel count when unset.
    scale_divisor: float | None = None

    def __post_init__(self):
        ks = tuple(int(k) for k in self.kernel_sizes)
        if not 1 <= len(ks) <= 3:
            raise ConfigError(f"kernel_sizes needs 1..3 entries, got {ks}")
        for k in ks:
            if k < 3 or k % 2 == 0:
                raise ConfigError(f"strip kernels must be odd and >=3, got {k}")
        self.kernel_sizes = ks
        if self.pre_kernel < 1 or self.pre_kernel % 2 == 0:
            raise ConfigError(f"pre_kernel must be odd, got {self.pre_kernel}")
        if self.scale_divisor is not None and self.scale_divisor <= 0:
            raise ConfigError("scale_divisor must be positive")


@dataclass
class ModelConfig:
    """Encoder geometry and the text backend."""

    in_channels: int = 1
    image_size: int = 480
    depths: tuple = (3, 3, 5, 2)
    channels: tuple = (64, 128, 320, 512)
    ffn_expansion: int = 4
    norm: str = "batch"
    text_backend: str = "toy"
    text_channels: int = 64
    max_tokens: int = 24
    attention: AttentionConfig = field(default_factory=AttentionConfig)

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.depths) != 4 or len(self.channels) != 4:
            raise ConfigError("depths and channels must each have 4 entries")
        if any(d < 1 for d in self.depths):
            raise ConfigError(f"stage depths must be >=1, got {self.depths}")
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be >=1, got {self.channels}")
        if self.image_size % 32 != 0 or self.image_size < 32:
            raise ConfigError(
                f"image_size must be a positive multiple of 32, got {self.image_size}"
            )
        if self.norm not in NORM_KINDS:
            raise ConfigError(f"norm must be one of {NORM_KINDS}, got {self.norm!r}")
        if self.text_backend not in TEXT_BACKENDS:
            raise ConfigError(
                f"text_backend must be one of {TEXT_BACKENDS}, got {self.text_backend!r}"
            )
        if self.text_channels < 1:
            raise ConfigError("text_channels must be positive")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be positive")

    @property
    def stage_sizes(self):
        """Spatial side length of each encoder stage."""
        return tuple(self.image_size // s for s in (4, 8, 16, 32))


@dataclass
class DecoderConfig:
    """Multi-scale decoder wiring."""

    variant: str = "concat-head-mlp"
    use_stages: tuple = (2, 3, 4)
    squeeze_channels: int = 256
    nmf_rank: int = 64
    nmf_iters: int = 6
    nmf_seed: int = 0
    # Reuse the factor matrices from the previous call instead of reseeding.
    running_bases: bool = False
    threshold: float = 0.5

    def __post_init__(self):
        if self.variant not in DECODER_VARIANTS:
            raise ConfigError(
                f"variant must be one of {DECODER_VARIANTS}, got {self.variant!r}"
            )
        stages = tuple(sorted(int(s) for s in self.use_stages))
        if not stages or any(s not in (1, 2, 3, 4) for s in stages):
            raise ConfigError(f"use_stages must be a non-empty subset of 1..4, got {stages}")
        if len(set(stages)) != len(stages):
            raise ConfigError(f"use_stages has duplicates: {stages}")
        self.use_stages = stages
        if self.squeeze_channels < 1:
            raise ConfigError("squeeze_channels must be positive")
        if self.nmf_rank < 1:
            raise ConfigError("nmf_rank must be positive")
        if self.nmf_iters < 1:
            raise ConfigError("nmf_iters must be >=1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")


@dataclass
class TrainConfig:
    lr: float = 3e-5
    weight_decay: float = 0.01
    epochs: int = 100
    batch_size: int = 16
    poly_power: float = 0.9
    bce_weight: float = 1.0
    dice_weight: float = 1.0
    val_fraction: float = 0.1
    # Fraction of expression clauses kept when building training text.
    text_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >=1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >=1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if not 0.0 < self.text_fraction <= 1.0:
            raise ConfigError("text_fraction must lie in (0, 1]")


@dataclass
class GeneratorConfig:
    """Synthetic lesion benchmark generator."""

    image_size: int = 96
    min_lesions: int = 2
    max_lesions: int = 5
    min_axis: int = 6
    max_axis: int = 16
    # Fraction of samples built around a twin pair that only the expression
    # can tell apart.
    twin_fraction: float = 0.5
    noise: float = 0.02
    max_retries: int = 100

    def __post_init__(self):
        if self.image_size < 32:
            raise ConfigError("image_size must be >=32")
        if not 2 <= self.min_lesions <= self.max_lesions:
            # one lesion leaves nothing to refer against
            raise ConfigError("need 2 <= min_lesions <= max_lesions")
        if self.min_axis < 3:
            raise ConfigError("lesion axes must be >=3 px")
        if self.min_axis > self.max_axis:
            raise ConfigError("need min_axis <= max_axis")
        if not 0.0 <= self.twin_fraction <= 1.0:
            raise ConfigError("twin_fraction must lie in [0, 1]")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be >=1")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: GeneratorConfig = field(default_factory=GeneratorConfig)


def toy_run_config() -> RunConfig:
    """Small model + 96 px images, sized for CPU training."""
    return RunConfig(
        model=ModelConfig(
            image_size=96,
            depths=(1, 1, 2, 1),
            channels=(16, 32, 64, 96),
            text_channels=64,
        ),
        decoder=DecoderConfig(squeeze_channels=64, nmf_rank=16),
        train=TrainConfig(lr=2e-3, epochs=30),
    )


# --- flat file round trip ---------------------------------------------------


def _iter_leaves(cfg, prefix=""):
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from _iter_leaves(value, key + ".")
        else:
            yield key, value


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_leaf(raw: str, hint, key: str):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    # X | None annotations surface as types.UnionType, typing.Optional as
    # typing.Union; both mean the same thing here
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _parse_leaf(raw, args[0], key)
    if hint is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if hint is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if hint is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    if hint is tuple or origin is tuple:
        if not raw:
            return ()
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        out = []
        for p in parts:
            try:
                out.append(int(p))
            except ValueError:
                try:
                    out.append(float(p))
                except ValueError:
                    out.append(p)
        return tuple(out)
    return raw


def _set_dotted(cfg, key: str, raw: str):
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, part):
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(target, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(target) or leaf not in {
        f.name for f in dataclasses.fields(target)
    }:
        raise ConfigError(f"unknown config key {key!r}")
    hints = typing.get_type_hints(type(target))
    setattr(target, leaf, _parse_leaf(raw, hints[leaf], key))


def _revalidate(cfg):
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            _revalidate(value)
    post = getattr(cfg, "__post_init__", None)
    if post is not None:
        post()


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``key=value`` strings onto a RunConfig in place."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        _set_dotted(cfg, key.strip(), raw)
    _revalidate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    cfg = RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        _set_dotted(cfg, key.strip(), raw)
    _revalidate(cfg)
    return cfg


def save_config(cfg: RunConfig, path):
    lines = [f"{key} = {_format_value(value)}\n" for key, value in _iter_leaves(cfg)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict, cls=RunConfig):
    """Rebuild a config dataclass tree from nested dicts."""
    kwargs = {}
    hints = typing.get_type_hints(cls)
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            kwargs[f.name] = config_from_dict(value, hint)
        elif isinstance(value, list):
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def config_hash(cfg) -> str:
    """Stable hex digest of a config tree, for report provenance."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
