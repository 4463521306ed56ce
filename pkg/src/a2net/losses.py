"""The five training losses and their weighted sum."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from a2net import numcore as nc
from a2net.network import ModelOutputs
from a2net.numcore.tensor import Node
from a2net.targets import ABTargets, AFTargets

BRANCH_MODES = ("joint", "af_only", "ab_only")


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 1.0
    af: float = 30.0
    ab_overlap: float = 10.0
    ab_reg: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {k} must be finite and non-negative, got {v}")


@dataclass
class LossReport:
    total: float
    af_cls: float
    af_reg: float
    ab_cls: float
    ab_overlap: float
    ab_reg: float
    n_locations: int
    n_af_pos: int
    n_ab_pos: int
    n_ab_neg: int
    weights: Optional[LossWeights] = None

    def identity_gap(self) -> float:
        """|total - weighted sum of parts|; zero up to rounding."""
        w = self.weights or LossWeights()
        expect = (self.af_reg + w.af * self.af_cls) + w.gamma * (
            self.ab_cls + w.ab_overlap * self.ab_overlap + w.ab_reg * self.ab_reg
        )
        return abs(self.total - expect)

    def to_json(self, **extra) -> str:
        d = asdict(self)
        d.pop("weights")
        d.update(extra)
        return json.dumps(d, sort_keys=True)


def _zero() -> Node:
    return nc.constant(0.0)


def _stack(values: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(v) for v in values])


def af_losses(
    outputs: ModelOutputs, targets: Sequence[AFTargets], reg_space: str = "steps"
) -> Tuple[Node, Node, int, int]:
    """(classification, regression, N, N_fg) for the anchor-free head.

    ``targets`` holds one entry per batch element. Regression compares
    distances in input steps (``reg_space="steps"``) or in units of the level
    stride (``"strides"``).
    """
    cls_target = _stack([t.class_target for t in targets])
    logits = outputs.flat("af_cls")
    if logits.shape[0] != cls_target.size:
        raise ValueError(f"{logits.shape[0]} predicted locations but {cls_target.size} targets")
    l_cls = nc.softmax_cross_entropy(logits, cls_target)
    fg = np.nonzero(cls_target > 0)[0]
    if fg.size == 0:
        return l_cls, _zero(), cls_target.size, 0
    strides = _stack([t.strides for t in targets])[fg]
    dist = np.stack([_stack([t.start_dist for t in targets])[fg], _stack([t.end_dist for t in targets])[fg]], 1)
    reg = outputs.flat("af_reg")  # [B*N, 2]
    pred = nc.take(reg, np.stack([2 * fg, 2 * fg + 1], 1))
    if reg_space == "steps":
        pred = nc.mul(pred, np.repeat(strides, 2))
        target = dist.reshape(-1)
    elif reg_space == "strides":
        target = (dist / strides[:, None]).reshape(-1)
    else:
        raise ValueError(f"unknown regression space {reg_space!r}")
    # per-point sum of the start and end terms, averaged over points
    l_reg = nc.mul(nc.smooth_l1(pred, target), 2.0)
    return l_cls, l_reg, cls_target.size, int(fg.size)


def ab_losses(outputs: ModelOutputs, targets: Sequence[ABTargets]) -> Tuple[Node, Node, Node, int, int]:
    """(classification, overlap, regression, N_pos, N_neg) for the anchor-based head."""
    pos = _stack([t.pos_mask for t in targets])
    neg = _stack([t.neg_mask for t in targets])
    if np.any(pos & neg):
        raise ValueError("an anchor is marked both positive and negative")
    cls_target = _stack([t.class_target for t in targets])
    logits = outputs.flat("ab_cls")
    if logits.shape[0] != pos.size:
        raise ValueError(f"{logits.shape[0]} predicted anchors but {pos.size} targets")
    sel = np.nonzero(pos | neg)[0]
    pidx = np.nonzero(pos)[0]
    if sel.size:
        K = logits.shape[1]
        rows = nc.reshape(nc.take(logits, (sel[:, None] * K + np.arange(K)).reshape(-1)), (sel.size, K))
        labels = np.where(pos[sel], cls_target[sel], 0)
        l_cls = nc.softmax_cross_entropy(rows, labels)
    else:
        l_cls = _zero()
    if pidx.size == 0:
        return l_cls, _zero(), _zero(), 0, int(neg.sum())
    overlap = _stack([t.overlap for t in targets])[pidx]
    l_o = nc.mse(nc.take(outputs.flat("ab_overlap"), pidx), overlap)
    reg_t = np.concatenate([t.reg for t in targets])[pidx].reshape(-1)
    pred = nc.take(outputs.flat("ab_reg"), np.stack([2 * pidx, 2 * pidx + 1], 1))
    l_reg = nc.mul(nc.smooth_l1(pred, reg_t), 2.0)
    return l_cls, l_o, l_reg, int(pidx.size), int(neg.sum())


def total_loss(af: Tuple[Node, Node], ab: Tuple[Node, Node, Node], weights: LossWeights) -> Node:
    """``(L_reg + w_af L_cls) + gamma (L_cls + w_o L_o + w_r L_reg)``."""
    af_cls, af_reg = af
    ab_cls, ab_o, ab_reg = ab
    l_af = nc.add(af_reg, nc.mul(af_cls, weights.af))
    l_ab = nc.add(nc.add(ab_cls, nc.mul(ab_o, weights.ab_overlap)), nc.mul(ab_reg, weights.ab_reg))
    return nc.add(l_af, nc.mul(l_ab, weights.gamma))


def compute_losses(
    outputs: ModelOutputs,
    af_targets: Sequence[AFTargets],
    ab_targets: Sequence[ABTargets],
    weights: LossWeights,
    branch: str = "joint",
    reg_space: str = "steps",
) -> Tuple[Node, LossReport]:
    """Total loss node plus a report of every component.

    In ``af_only`` / ``ab_only`` mode the other branch contributes exact zeros.
    """
    if branch not in BRANCH_MODES:
        raise ValueError(f"branch mode must be one of {BRANCH_MODES}, got {branch!r}")
    n = n_af = n_p = n_n = 0
    if branch in ("joint", "af_only"):
        af_cls, af_reg, n, n_af = af_losses(outputs, af_targets, reg_space)
    else:
        af_cls, af_reg = _zero(), _zero()
    if branch in ("joint", "ab_only"):
        ab_cls, ab_o, ab_reg, n_p, n_n = ab_losses(outputs, ab_targets)
        n = n or sum(t.pos_mask.size for t in ab_targets)
    else:
        ab_cls, ab_o, ab_reg = _zero(), _zero(), _zero()
    total = total_loss((af_cls, af_reg), (ab_cls, ab_o, ab_reg), weights)
    report = LossReport(
        total=total.item(),
        af_cls=af_cls.item(),
        af_reg=af_reg.item(),
        ab_cls=ab_cls.item(),
        ab_overlap=ab_o.item(),
        ab_reg=ab_reg.item(),
        n_locations=n,
        n_af_pos=n_af,
        n_ab_pos=n_p,
        n_ab_neg=n_n,
        weights=weights,
    )
    return total, report
