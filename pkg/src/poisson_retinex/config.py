"""Training configuration and its flat ``key = value`` file format.

The loss weights are flattened into the same namespace, so a config file
looks like::

    # short run
    epochs = 20
    lr = 0.0005
    lambda1 = 0.5
    photon_scale = 255
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .losses import LossWeights
from .noise import DEFAULT_PHOTON_SCALE

LR_SCHEDULES = ("constant", "cosine")
CROP_MODES = ("random", "fixed")
HEAD_INITS = ("uniform", "zero")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 16
    patch: int = 128
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    photon_scale: float = DEFAULT_PHOTON_SCALE
    width: int = 64
    checkpoint_every: int = 10
    val_fraction: float = 0.05
    grad_clip: float = 0.0
    lr_schedule: str = "constant"
    crop_mode: str = "random"
    noise_head_activation: str = "tanh"
    head_init: str = "zero"
    dtype: str = "float32"

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError("lr must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.patch < 8 or self.patch % 8:
            raise ConfigError("patch must be a positive multiple of 8")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.photon_scale <= 0:
            raise ConfigError("photon_scale must be positive")
        if self.width < 8:
            raise ConfigError("width must be at least 8")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be non-negative (0 disables clipping)")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.crop_mode not in CROP_MODES:
            raise ConfigError(f"crop_mode must be one of {CROP_MODES}")
        if self.head_init not in HEAD_INITS:
            raise ConfigError(f"head_init must be one of {HEAD_INITS}")
        if self.noise_head_activation not in ("tanh", "softplus"):
            raise ConfigError("noise_head_activation must be tanh or softplus")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def to_flat(self) -> dict:
        flat = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "weights"}
        flat.update(dataclasses.asdict(self.weights))
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        weight_keys = {f.name for f in fields(LossWeights)}
        own_keys = {f.name for f in fields(cls)} - {"weights"}
        unknown = set(flat) - weight_keys - own_keys
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        weights = LossWeights(**{k: _coerce(LossWeights, k, v) for k, v in flat.items() if k in weight_keys})
        own = {k: _coerce(cls, k, v) for k, v in flat.items() if k in own_keys}
        try:
            return cls(weights=weights, **own)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **overrides) -> "TrainConfig":
        flat = self.to_flat()
        flat.update(overrides)
        return TrainConfig.from_flat(flat)


def _coerce(cls, key, value):
    if not isinstance(value, str):
        return value
    kind = {f.name: f.type for f in fields(cls)}[key]
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path=None, **overrides) -> TrainConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides`` (``None`` values ignored)."""
    flat = TrainConfig().to_flat()
    if path is not None:
        flat.update(parse_config_text(Path(path).read_text()))
    flat.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_flat(flat)


def format_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.to_flat().items())
