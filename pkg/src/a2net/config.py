"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, unknown keys are errors.
``a2net schema`` prints every key with its type and default.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List

from a2net.inference import InferenceConfig
from a2net.losses import BRANCH_MODES, LossWeights
from a2net.network import ModelConfig

MODES = ("thumos", "activitynet")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # model
    input_dim: int = 2048
    num_classes: int = 20
    input_length: int = 128
    levels: int = 6
    anchor_scale: float = 2.0
    width_multiplier: float = 1.0
    # losses
    gamma: float = 1.0
    gamma_af: float = 30.0
    gamma_ab_overlap: float = 10.0
    gamma_ab_reg: float = 10.0
    alpha: float = 1e-4
    beta: float = 1e-4
    af_reg_space: str = "steps"
    branch: str = "joint"
    # optimisation
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 40
    decay_epoch: int = 30
    decay_factor: float = 0.1
    seed: int = 0
    checkpoint_every: int = 1
    # data
    train_manifest: str = ""
    eval_manifest: str = ""
    mode: str = "thumos"
    window_frames: int = 512
    train_stride_frames: int = 128
    eval_stride_frames: int = 256
    min_fraction: float = 0.75
    # inference
    lam: float = 0.5
    nms_threshold: float = 0.5
    score_floor: float = 0.005
    top_k: int = 200
    drop_background: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.branch not in BRANCH_MODES:
            raise ConfigError(f"branch must be one of {BRANCH_MODES}, got {self.branch!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.af_reg_space not in ("steps", "strides"):
            raise ConfigError(f"af_reg_space must be 'steps' or 'strides', got {self.af_reg_space!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    # ---- derived views
    def model_config(self) -> ModelConfig:
        base = ModelConfig(
            input_dim=self.input_dim,
            num_classes=self.num_classes,
            input_length=self.input_length,
            levels=self.levels,
            anchor_scale=self.anchor_scale,
        )
        return base if self.width_multiplier == 1.0 else base.scaled(self.width_multiplier)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.gamma, self.gamma_af, self.gamma_ab_overlap, self.gamma_ab_reg)

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(
            self.lam, self.nms_threshold, self.score_floor, self.top_k, self.alpha, self.beta, self.drop_background
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # ---- text form
    def to_text(self) -> str:
        lines = ["# a2net experiment configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def overrides(self) -> Dict[str, object]:
        """Settings that differ from the defaults."""
        default = ExperimentConfig()
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) != getattr(default, f.name)}


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if typ in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config(text: str, base: ExperimentConfig = None) -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r} (run 'a2net schema' for the list)")
        values[key] = _coerce(key, types[key], raw)
    base = base or ExperimentConfig()
    return dataclasses.replace(base, **values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def apply_overrides(cfg: ExperimentConfig, pairs: List[str]) -> ExperimentConfig:
    """Apply ``key=value`` strings, e.g. from the command line."""
    return parse_config("\n".join(pairs), cfg)


def schema() -> str:
    lines = []
    default = ExperimentConfig()
    for f in fields(ExperimentConfig):
        t = f.type if isinstance(f.type, str) else f.type.__name__
        lines.append(f"{f.name:<20} {t:<6} default {getattr(default, f.name)!r}")
    return "\n".join(lines) + "\n"
