"""Detector forward pass: base layers, temporal feature pyramid, two heads per level."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from a2net import numcore as nc
from a2net.geometry import LEVEL_CHANNELS, PyramidSpec, build_pyramid_spec
from a2net.numcore import checkpoint
from a2net.numcore.tensor import Node

Params = Dict[str, Node]


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    input_length: int = 128
    levels: int = 6
    anchor_scale: float = 2.0
    base_channels: int = 512
    level_channels: Tuple[int, ...] = LEVEL_CHANNELS
    head_channels: int = 512
    base_kernel: int = 9
    base_reduction: Optional[int] = None  # None: geometry.BASE_REDUCTION for this depth

    def __post_init__(self):
        if not 1 <= self.levels <= len(self.level_channels):
            raise ValueError(f"levels={self.levels} needs at least that many channel widths")
        if self.num_classes < 1 or self.input_dim < 1:
            raise ValueError("input_dim and num_classes must be positive")
        if self.base_kernel % 2 != 1:
            raise ValueError("base kernel must be odd to preserve length")
        self.pyramid()  # validates the length/level combination

    def pyramid(self) -> PyramidSpec:
        return build_pyramid_spec(
            self.input_length,
            self.levels,
            self.level_channels[: self.levels],
            self.anchor_scale,
            self.base_reduction,
        )

    def scaled(self, factor: float) -> "ModelConfig":
        """Same topology with every channel width multiplied by ``factor``."""

        def s(c):
            return max(1, int(round(c * factor)))

        return replace(
            self,
            base_channels=s(self.base_channels),
            level_channels=tuple(s(c) for c in self.level_channels),
            head_channels=s(self.head_channels),
        )

    @property
    def ab_channels(self) -> int:
        return self.num_classes + 1 + 1 + 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_channels"] = list(self.level_channels)
        return d


@dataclass
class LevelOutputs:
    af_cls: Node  # [B, C+1, t] logits
    af_reg: Node  # [B, 2, t] positive, in units of the level stride
    ab_cls: Optional[Node] = None  # [B, C+1, t] logits
    ab_overlap: Optional[Node] = None  # [B, 1, t] in (0, 1)
    ab_reg: Optional[Node] = None  # [B, 2, t]


@dataclass
class ModelOutputs:
    levels: List[LevelOutputs] = field(default_factory=list)

    def flat(self, name: str) -> Node:
        """Concatenate one output over levels and reshape to [B*N, channels]."""
        parts = [getattr(lv, name) for lv in self.levels]
        cat = nc.concat(parts, axis=2)  # [B, K, N]
        B, K, N = cat.shape
        return nc.reshape(nc.transpose(cat, (0, 2, 1)), (B * N, K))


def _layer_shapes(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, int, int], float]]:
    """(name, weight shape [F, C, K], init gain) for every conv, in creation order."""
    spec = cfg.pyramid()
    relu_gain = np.sqrt(2.0)
    shapes = [
        ("base1", (cfg.base_channels, cfg.input_dim, 1), relu_gain),
        ("base2", (cfg.base_channels, cfg.base_channels, cfg.base_kernel), relu_gain),
    ]
    prev = cfg.base_channels
    for lv in spec.levels:
        shapes.append((f"conv{lv.index}", (lv.channels, prev, 3), relu_gain))
        prev = lv.channels
    C1 = cfg.num_classes + 1
    H = cfg.head_channels
    for lv in spec.levels:
        p = f"level{lv.index}"
        shapes += [
            (f"{p}.af.conv1", (H, lv.channels, 1), relu_gain),
            (f"{p}.af.conv2", (H, H, 3), relu_gain),
            (f"{p}.af.conv3", (H, H, 3), relu_gain),
            (f"{p}.af.pred_cls", (C1, H, 3), 1.0),
            (f"{p}.af.pred_reg", (2, H, 3), 1.0),
            (f"{p}.ab.pred", (cfg.ab_channels, lv.channels, 3), 1.0),
        ]
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Fan-in scaled normal weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape, gain in _layer_shapes(cfg):
        fan_in = shape[1] * shape[2]
        w = rng.standard_normal(shape) * (gain / np.sqrt(fan_in))
        params[f"{name}.weight"] = nc.parameter(w, name=f"{name}.weight")
        params[f"{name}.bias"] = nc.parameter(np.zeros(shape[0]), name=f"{name}.bias")
    return params


def _conv(params: Params, name: str, x: Node, stride: int = 1) -> Node:
    w = params[f"{name}.weight"]
    k = w.shape[2]
    return nc.conv1d(x, w, params[f"{name}.bias"], stride=stride, padding=k // 2)


def forward(
    features,
    params: Params,
    cfg: ModelConfig,
    branches: Sequence[str] = ("af", "ab"),
) -> ModelOutputs:
    """Run the detector on a [B, D, T] feature batch.

    ``branches`` restricts which heads are evaluated; a skipped head leaves its
    outputs as ``None``.
    """
    x = nc.constant(features)
    if x.value.ndim != 3 or x.shape[1:] != (cfg.input_dim, cfg.input_length):
        raise ValueError(
            f"expected features [B, {cfg.input_dim}, {cfg.input_length}], got {x.shape}"
        )
    spec = cfg.pyramid()
    h = nc.relu(_conv(params, "base1", x))
    h = nc.relu(_conv(params, "base2", h))
    red = spec.base_stride
    h = nc.maxpool1d(h, red, red)
    out = ModelOutputs()
    for lv in spec.levels:
        h = nc.relu(_conv(params, f"conv{lv.index}", h, stride=1 if lv.index == 1 else 2))
        if h.shape[2] != lv.length:
            raise AssertionError(f"level {lv.index} has length {h.shape[2]}, expected {lv.length}")
        p = f"level{lv.index}"
        lo = LevelOutputs(None, None)
        if "af" in branches:
            a = nc.relu(_conv(params, f"{p}.af.conv1", h))
            a = nc.relu(_conv(params, f"{p}.af.conv2", a))
            a = nc.relu(_conv(params, f"{p}.af.conv3", a))
            lo.af_cls = _conv(params, f"{p}.af.pred_cls", a)
            lo.af_reg = nc.exp(_conv(params, f"{p}.af.pred_reg", a))
        if "ab" in branches:
            b = _conv(params, f"{p}.ab.pred", h)
            C1 = cfg.num_classes + 1
            lo.ab_cls = nc.slice_channels(b, 0, C1)
            lo.ab_overlap = nc.sigmoid(nc.slice_channels(b, C1, C1 + 1))
            lo.ab_reg = nc.slice_channels(b, C1 + 1, C1 + 3)
        out.levels.append(lo)
    return out


def parameter_count(params: Params) -> int:
    return int(sum(p.value.size for p in params.values()))


def save_params(path, params: Params, extra: Optional[Dict[str, np.ndarray]] = None) -> None:
    arrays = {name: p.value for name, p in params.items()}
    if extra:
        arrays.update(extra)
    checkpoint.save(path, arrays)


def load_params(path, cfg: ModelConfig) -> Tuple[Params, Dict[str, np.ndarray]]:
    """Load parameters for ``cfg``; returns (params, non-parameter arrays)."""
    arrays = checkpoint.load(path)
    expected = {f"{n}.{kind}": s for n, s, _ in _layer_shapes(cfg) for kind in ("weight", "bias")}
    params: Params = {}
    for n, shape, _ in _layer_shapes(cfg):
        for kind, shp in (("weight", shape), ("bias", (shape[0],))):
            key = f"{n}.{kind}"
            if key not in arrays:
                raise ValueError(f"checkpoint {path} lacks parameter {key!r}")
            if arrays[key].shape != shp:
                raise ValueError(
                    f"checkpoint parameter {key!r} has shape {arrays[key].shape}, config expects {shp}"
                )
            params[key] = nc.parameter(arrays[key], name=key)
    extra = {k: v for k, v in arrays.items() if k not in expected}
    return params, extra
