"""Temporal intervals, IoU and pyramid coordinate bookkeeping.

All positions are measured in *input steps*: indices on the time axis of the
feature sequence fed to the network (length ``T``, 128 by default).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

# Channel widths of conv1..conv6.
LEVEL_CHANNELS = (512, 1024, 1024, 2048, 2048, 4096)

# Reduction of the input length before the first pyramid level, per depth.
# With T=128 these give the level lengths 16-8-4, 32-16-8-4, 32-16-8-4-2 and
# 64-32-16-8-4-2.
BASE_REDUCTION = {3: 8, 4: 4, 5: 4, 6: 2}


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    label: int = 0
    score: Optional[float] = None

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"segment end {self.end} must exceed start {self.start}")
        if self.label < 0:
            raise ValueError(f"segment label must be non-negative, got {self.label}")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)

    def shifted(self, offset: float) -> "Segment":
        return Segment(self.start + offset, self.end + offset, self.label, self.score)


def iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (a.length + b.length - inter)


def iou_matrix(starts_a, ends_a, starts_b, ends_b) -> np.ndarray:
    """Pairwise IoU between two interval sets, shape [len(a), len(b)]."""
    sa = np.asarray(starts_a, dtype=np.float64)[:, None]
    ea = np.asarray(ends_a, dtype=np.float64)[:, None]
    sb = np.asarray(starts_b, dtype=np.float64)[None, :]
    eb = np.asarray(ends_b, dtype=np.float64)[None, :]
    inter = np.clip(np.minimum(ea, eb) - np.maximum(sa, sb), 0.0, None)
    union = (ea - sa) + (eb - sb) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


@dataclass(frozen=True)
class LevelSpec:
    index: int  # 1-based
    length: int
    stride: int
    channels: int
    scale_lo: float  # in base steps
    scale_hi: float  # in base steps; nominal for the top level
    anchor_width: float

    def map_to_input(self, j) -> np.ndarray:
        return map_to_input(self, j)

    def positions(self) -> np.ndarray:
        return self.stride // 2 + np.arange(self.length) * self.stride


@dataclass(frozen=True)
class PyramidSpec:
    input_length: int
    levels: Tuple[LevelSpec, ...]
    anchor_scale: float = 2.0

    @property
    def base_stride(self) -> int:
        return self.levels[0].stride

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def lengths(self) -> Tuple[int, ...]:
        return tuple(lv.length for lv in self.levels)

    @property
    def total_locations(self) -> int:
        return sum(self.lengths)

    def level_offsets(self) -> List[int]:
        """Start index of each level when all locations are laid end to end."""
        return [0] + list(np.cumsum(self.lengths)[:-1])

    def anchors(self) -> "Anchors":
        return make_anchors(self)


def map_to_input(level: LevelSpec, j) -> np.ndarray:
    """Input-step position of location ``j`` on ``level``."""
    j_arr = np.asarray(j)
    if np.any(j_arr < 0) or np.any(j_arr >= level.length):
        raise IndexError(f"location {j} outside level {level.index} of length {level.length}")
    out = level.stride // 2 + j_arr * level.stride
    return out if out.ndim else int(out)


def build_pyramid_spec(
    T: int = 128,
    L: int = 6,
    channels: Optional[Sequence[int]] = None,
    anchor_scale: float = 2.0,
    base_reduction: Optional[int] = None,
) -> PyramidSpec:
    """Level geometry for an ``L``-level pyramid over a length-``T`` input.

    ``channels`` defaults to the first ``L`` entries of ``LEVEL_CHANNELS``.
    ``base_reduction`` is the input-to-level-1 length ratio; by default it
    follows ``BASE_REDUCTION``.
    """
    if L < 1:
        raise ValueError("need at least one pyramid level")
    if base_reduction is None:
        base_reduction = BASE_REDUCTION.get(L, 2)
    if base_reduction < 2 or base_reduction & (base_reduction - 1):
        raise ValueError(f"base reduction must be a power of two >= 2, got {base_reduction}")
    if channels is None:
        if L > len(LEVEL_CHANNELS):
            raise ValueError(f"no default channel widths for {L} levels")
        channels = LEVEL_CHANNELS[:L]
    if len(channels) != L:
        raise ValueError(f"{len(channels)} channel widths given for {L} levels")
    if T % (2**L) or T % (base_reduction * 2 ** (L - 1)):
        raise ValueError(
            f"input length {T} must be divisible by 2^{L} and by {base_reduction * 2 ** (L - 1)} "
            f"(base reduction {base_reduction} and {L - 1} stride-2 levels)"
        )
    levels = []
    for i in range(1, L + 1):
        stride = base_reduction * 2 ** (i - 1)
        lo = 0.0 if i == 1 else float(2 ** (i - 1))
        levels.append(
            LevelSpec(
                index=i,
                length=T // stride,
                stride=stride,
                channels=int(channels[i - 1]),
                scale_lo=lo,
                scale_hi=float(2**i),
                anchor_width=anchor_scale * stride,
            )
        )
    return PyramidSpec(T, tuple(levels), anchor_scale)


def assign_level(action_length: float, spec: PyramidSpec) -> int:
    """1-based level responsible for an action of the given input-step length.

    Lengths are compared in base steps (input steps divided by the level-1
    stride). Ranges are half-open; anything past the top range goes to the top
    level.
    """
    if not action_length > 0:
        raise ValueError(f"action length must be positive, got {action_length}")
    base = action_length / spec.base_stride
    for lv in spec.levels[:-1]:
        if base < lv.scale_hi:
            return lv.index
    return spec.levels[-1].index


@dataclass(frozen=True)
class Anchors:
    """One default anchor per (level, location), flattened level by level."""

    centers: np.ndarray
    widths: np.ndarray
    level: np.ndarray  # 1-based
    location: np.ndarray

    def __len__(self) -> int:
        return self.centers.size

    @property
    def starts(self) -> np.ndarray:
        return self.centers - 0.5 * self.widths

    @property
    def ends(self) -> np.ndarray:
        return self.centers + 0.5 * self.widths


def make_anchors(spec: PyramidSpec) -> Anchors:
    centers, widths, level, location = [], [], [], []
    for lv in spec.levels:
        centers.append(lv.positions().astype(np.float64))
        widths.append(np.full(lv.length, lv.anchor_width))
        level.append(np.full(lv.length, lv.index))
        location.append(np.arange(lv.length))
    return Anchors(
        np.concatenate(centers),
        np.concatenate(widths),
        np.concatenate(level),
        np.concatenate(location),
    )

