"""Training configuration, named profiles and the flat ``key = value`` config file.

Config files hold one assignment per line. Keys are ``TrainingConfig`` field
names; fields of the nested ``weights`` (:class:`LossWeights`) and
``augment`` (:class:`AugmentSpec`) records are addressed by their own names,
which are unique across the three records. ``#`` starts a comment.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import AUGMENT_PROFILES, AugmentSpec
from .errors import ConfigurationError
from .losses import LossWeights


@dataclass
class TrainingConfig:
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 32
    ramp_start_epoch: int = 250
    ramp_end_epoch: int = 500
    synthetic_cadence: int = 20
    early_stop_patience: int = 20
    min_improvement: float = 1e-5
    max_epochs: int = 1000
    seed: int = 0
    image_size: int = 256
    domain_channels: int = 1
    base_width: int = 64
    depth: int = 6
    disc_depth: int = 3
    cone: bool = True
    edge_backend: str = "sobel"
    pretrain_epochs: int = 50
    train_d_on_synthetic: bool = True
    finetune_epochs: int = 20
    finetune_batch_size: int = 1
    finetune_full_chain: bool = False
    baseline_epochs: int = 50
    baseline_batch_size: int = 1
    threshold: float = 0.5
    deterministic: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def __post_init__(self):
        if self.ramp_start_epoch >= self.ramp_end_epoch:
            raise ConfigurationError("ramp_start_epoch must be < ramp_end_epoch")
        if self.synthetic_cadence < 1:
            raise ConfigurationError("synthetic_cadence must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigurationError("early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.finetune_batch_size < 1 or self.baseline_batch_size < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in [0, 1]")

    @property
    def betas(self):
        return (self.adam_beta1, self.adam_beta2)

    @property
    def conditioning_channels(self):
        return 1 if self.augment.style_channel else 0

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PROFILES = {
    "full": TrainingConfig(),
    "toy": TrainingConfig(
        batch_size=8,
        ramp_start_epoch=25,
        ramp_end_epoch=50,
        early_stop_patience=5,
        max_epochs=60,
        image_size=64,
        base_width=32,
        depth=4,
        pretrain_epochs=15,
        finetune_epochs=15,
        baseline_epochs=15,
        augment=AUGMENT_PROFILES["toy"],
    ),
}


def profile(name: str) -> TrainingConfig:
    try:
        base = PROFILES[name]
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    return replace(base, weights=replace(base.weights), augment=replace(base.augment))


def _field_types(cls):
    return {f.name: f.type for f in fields(cls)}


def _coerce(raw: str, current):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip().strip('"').strip("'")


def apply_overrides(cfg: TrainingConfig, overrides: dict) -> TrainingConfig:
    """Return a copy of ``cfg`` with string or typed values assigned by field name."""
    top, weights, augment = {}, {}, {}
    weight_names = _field_types(LossWeights)
    augment_names = _field_types(AugmentSpec)
    top_names = set(_field_types(TrainingConfig)) - {"weights", "augment"}
    for key, value in overrides.items():
        if key in top_names:
            target, current = top, getattr(cfg, key)
        elif key in weight_names:
            target, current = weights, getattr(cfg.weights, key)
        elif key in augment_names:
            target, current = augment, getattr(cfg.augment, key)
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
        try:
            target[key] = _coerce(value, current) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {exc}") from None
    return replace(
        cfg,
        **top,
        weights=replace(cfg.weights, **weights),
        augment=replace(cfg.augment, **augment),
    )


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def load_config(path, base: TrainingConfig | None = None) -> TrainingConfig:
    text = Path(path).read_text()
    return apply_overrides(base or profile("full"), parse_config_text(text))


def dump_config(cfg: TrainingConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, dict):
            lines += [f"{k} = {v}" for k, v in value.items()]
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
