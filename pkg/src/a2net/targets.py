"""Training targets for both heads and the matching decoders.

Targets are laid out over the flattened pyramid: level 1 locations first,
then level 2, and so on, which is the same order the network outputs are
flattened in (see :func:`a2net.network.flatten_outputs`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from a2net.geometry import Anchors, PyramidSpec, Segment, assign_level, iou_matrix

# Anchor regression scaling used by the reference hyper-parameters.
DEFAULT_ALPHA = 1e-4
DEFAULT_BETA = 1e-4
POSITIVE_IOU = 0.5


@dataclass
class AFTargets:
    class_target: np.ndarray  # [N] int, 0 = background
    start_dist: np.ndarray  # [N] input steps, valid where class_target > 0
    end_dist: np.ndarray
    gt_index: np.ndarray  # [N] index of the assigned ground truth, -1 for background
    positions: np.ndarray  # [N] mapped-back input position of every location
    strides: np.ndarray  # [N] stride of the owning level

    @property
    def foreground(self) -> np.ndarray:
        return self.class_target > 0

    def level_slice(self, spec: PyramidSpec, level: int) -> slice:
        off = spec.level_offsets()[level - 1]
        return slice(off, off + spec.levels[level - 1].length)


@dataclass
class ABTargets:
    class_target: np.ndarray  # [N] int
    overlap: np.ndarray  # [N] best IoU with any ground truth
    reg: np.ndarray  # [N, 2] (delta_c, delta_w), valid on positives
    pos_mask: np.ndarray
    neg_mask: np.ndarray
    gt_index: np.ndarray  # [N] best-matching ground truth, -1 if none


def _positions_and_strides(spec: PyramidSpec) -> Tuple[np.ndarray, np.ndarray]:
    pos = np.concatenate([lv.positions() for lv in spec.levels]).astype(np.float64)
    strides = np.concatenate([np.full(lv.length, lv.stride) for lv in spec.levels]).astype(np.float64)
    return pos, strides


def _check_window(gt: Sequence[Segment], window_length: Optional[float]) -> None:
    if window_length is None:
        return
    for g in gt:
        if g.start < 0 or g.end > window_length:
            raise ValueError(f"ground truth {g} lies outside the window [0, {window_length}]")


def encode_af(
    gt: Sequence[Segment], spec: PyramidSpec, window_length: Optional[float] = None
) -> AFTargets:
    """Point targets: class and distances to both boundaries.

    Each ground truth lands on the single level picked by ``assign_level``;
    locations there whose mapped position lies in the closed interval
    ``[start, end]`` become foreground. A location claimed by two actions
    keeps the shorter one.
    """
    if window_length is None:
        window_length = spec.input_length
    _check_window(gt, window_length)
    positions, strides = _positions_and_strides(spec)
    n = positions.size
    cls = np.zeros(n, dtype=np.int64)
    sd = np.zeros(n)
    ed = np.zeros(n)
    owner = np.full(n, -1, dtype=np.int64)
    owner_len = np.full(n, np.inf)
    offsets = spec.level_offsets()
    for k, g in enumerate(gt):
        if g.label < 1:
            raise ValueError(f"ground truth {g} must carry a foreground class")
        level = assign_level(g.length, spec)
        sl = slice(offsets[level - 1], offsets[level - 1] + spec.levels[level - 1].length)
        jp = positions[sl]
        hit = (jp >= g.start) & (jp <= g.end)
        idx = np.nonzero(hit)[0] + sl.start
        take = idx[g.length < owner_len[idx]]
        cls[take] = g.label
        sd[take] = positions[take] - g.start
        ed[take] = g.end - positions[take]
        owner[take] = k
        owner_len[take] = g.length
    return AFTargets(cls, sd, ed, owner, positions, strides)


def decode_af(
    positions, r_start, r_end, window_length: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Invert the distance encoding: ``[pos - r_start, pos + r_end]``, clipped."""
    starts = np.asarray(positions, dtype=np.float64) - np.asarray(r_start, dtype=np.float64)
    ends = np.asarray(positions, dtype=np.float64) + np.asarray(r_end, dtype=np.float64)
    if window_length is not None:
        starts = np.clip(starts, 0.0, window_length)
        ends = np.clip(ends, 0.0, window_length)
    return starts, ends


def encode_ab(
    gt: Sequence[Segment],
    anchors: Anchors,
    rng_seed=None,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    window_length: Optional[float] = None,
) -> ABTargets:
    """Match default anchors to ground truth and sample negatives 1:1.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    _check_window(gt, window_length)
    n = len(anchors)
    cls = np.zeros(n, dtype=np.int64)
    overlap = np.zeros(n)
    reg = np.zeros((n, 2))
    owner = np.full(n, -1, dtype=np.int64)
    pos = np.zeros(n, dtype=bool)
    if gt:
        gs = np.array([g.start for g in gt])
        ge = np.array([g.end for g in gt])
        ious = iou_matrix(anchors.starts, anchors.ends, gs, ge)
        best = ious.argmax(axis=1)
        overlap = ious[np.arange(n), best]
        owner = best
        pos = overlap > POSITIVE_IOU
        labels = np.array([g.label for g in gt])
        cls[pos] = labels[best[pos]]
        gc = 0.5 * (gs + ge)[best]
        gw = (ge - gs)[best]
        dc, dw = encode_ab_deltas(anchors.centers, anchors.widths, gc, gw, alpha, beta)
        reg[pos, 0] = dc[pos]
        reg[pos, 1] = dw[pos]
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    candidates = np.nonzero(~pos)[0]
    k = min(int(pos.sum()), candidates.size)
    neg = np.zeros(n, dtype=bool)
    if k:
        neg[rng.choice(candidates, size=k, replace=False)] = True
    return ABTargets(cls, overlap, reg, pos, neg, owner)


def encode_ab_deltas(anchor_c, anchor_w, gt_c, gt_w, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
    """Regression targets that :func:`decode_ab` maps back onto the ground truth."""
    anchor_c = np.asarray(anchor_c, dtype=np.float64)
    anchor_w = np.asarray(anchor_w, dtype=np.float64)
    dc = (np.asarray(gt_c, dtype=np.float64) - anchor_c) / (alpha * anchor_w)
    dw = np.log(np.asarray(gt_w, dtype=np.float64) / anchor_w) / beta
    return dc, dw


def decode_ab(
    anchor_c,
    anchor_w,
    delta_c,
    delta_w,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    window_length: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Apply predicted offsets to default anchors; returns (starts, ends)."""
    anchor_w = np.asarray(anchor_w, dtype=np.float64)
    c = np.asarray(anchor_c, dtype=np.float64) + alpha * np.asarray(delta_c) * anchor_w
    # cap the exponent so a diverging prediction cannot overflow
    w = anchor_w * np.exp(np.minimum(beta * np.asarray(delta_w, dtype=np.float64), 50.0))
    starts, ends = c - 0.5 * w, c + 0.5 * w
    if window_length is not None:
        starts = np.clip(starts, 0.0, window_length)
        ends = np.clip(ends, 0.0, window_length)
    return starts, ends
