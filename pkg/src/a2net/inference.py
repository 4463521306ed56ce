"""Turn head outputs into scored segments: decode, merge branches, suppress."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np

from a2net.geometry import PyramidSpec, iou_matrix
from a2net.network import ModelOutputs
from a2net.numcore.functional import softmax
from a2net.targets import DEFAULT_ALPHA, DEFAULT_BETA, decode_ab, decode_af

AF, AB = "AF", "AB"


@dataclass(frozen=True)
class Detection:
    start: float
    end: float
    label: int
    score: float
    branch: str = AF
    video_id: Optional[str] = None

    @property
    def length(self) -> float:
        return self.end - self.start

    def shifted(self, offset: float) -> "Detection":
        return replace(self, start=self.start + offset, end=self.end + offset)

    def rescored(self, factor: float) -> "Detection":
        return replace(self, score=self.score * factor)


@dataclass(frozen=True)
class InferenceConfig:
    lam: float = 0.5
    nms_threshold: float = 0.5
    score_floor: float = 0.005
    top_k: int = 200
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    drop_background: bool = True


def _window_arrays(outputs: ModelOutputs, name: str, b: int) -> np.ndarray:
    """[N, K] array of one output for batch element ``b``, levels concatenated."""
    parts = [getattr(lv, name).value[b] for lv in outputs.levels]
    return np.concatenate(parts, axis=1).T


def decode_window(
    outputs: ModelOutputs,
    spec: PyramidSpec,
    b: int = 0,
    score_floor: float = 0.005,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    window_length: Optional[float] = None,
    drop_background: bool = True,
) -> List[Detection]:
    """Detections of both heads for batch element ``b`` (window-local steps).

    With ``drop_background`` a location whose most probable class is
    background emits nothing. The
    anchor-free confidence is the best foreground probability; the
    anchor-based confidence multiplies it by the predicted overlap.
    """
    if window_length is None:
        window_length = float(spec.input_length)
    positions = np.concatenate([lv.positions() for lv in spec.levels]).astype(np.float64)
    strides = np.concatenate([np.full(lv.length, lv.stride) for lv in spec.levels]).astype(np.float64)
    dets: List[Detection] = []
    if outputs.levels[0].af_cls is not None:
        prob = softmax(_window_arrays(outputs, "af_cls", b))
        reg = _window_arrays(outputs, "af_reg", b) * strides[:, None]
        starts, ends = decode_af(positions, reg[:, 0], reg[:, 1], window_length)
        dets += _emit(prob, np.ones(len(prob)), starts, ends, AF, score_floor, drop_background)
    if outputs.levels[0].ab_cls is not None:
        anchors = spec.anchors()
        prob = softmax(_window_arrays(outputs, "ab_cls", b))
        po = _window_arrays(outputs, "ab_overlap", b)[:, 0]
        reg = _window_arrays(outputs, "ab_reg", b)
        starts, ends = decode_ab(anchors.centers, anchors.widths, reg[:, 0], reg[:, 1], alpha, beta, window_length)
        dets += _emit(prob, po, starts, ends, AB, score_floor, drop_background)
    return dets


def _emit(prob, factor, starts, ends, branch, score_floor, drop_background=True) -> List[Detection]:
    fg = prob[:, 1:]
    label = fg.argmax(axis=1) + 1
    best = fg.max(axis=1)
    score = factor * best
    keep = (score >= score_floor) & (ends > starts)
    if drop_background:
        keep &= prob.argmax(axis=1) != 0
    return [
        Detection(float(starts[i]), float(ends[i]), int(label[i]), float(score[i]), branch)
        for i in np.nonzero(keep)[0]
    ]


def lambda_merge(af_dets: Iterable[Detection], ab_dets: Iterable[Detection], lam: float) -> List[Detection]:
    """Scale anchor-based scores by ``lam`` and anchor-free ones by ``1 - lam``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return [d.rescored(1.0 - lam) for d in af_dets] + [d.rescored(lam) for d in ab_dets]


def split_branches(dets: Iterable[Detection]):
    dets = list(dets)
    return [d for d in dets if d.branch == AF], [d for d in dets if d.branch == AB]


def _priority(dets: Sequence[Detection]) -> np.ndarray:
    """Order by score desc, then earlier start, then input position."""
    n = len(dets)
    score = np.array([d.score for d in dets], dtype=np.float64)
    start = np.array([d.start for d in dets], dtype=np.float64)
    return np.lexsort((np.arange(n), start, -score))


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> List[Detection]:
    """Greedy class-wise suppression of detections overlapping a better one."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"IoU threshold must lie in (0, 1), got {iou_threshold}")
    dets = list(dets)
    if not dets:
        return []
    order = _priority(dets)
    starts = np.array([d.start for d in dets])
    ends = np.array([d.end for d in dets])
    labels = np.array([d.label for d in dets])
    kept = []
    for label in np.unique(labels):
        idx = order[labels[order] == label]
        ious = iou_matrix(starts[idx], ends[idx], starts[idx], ends[idx])
        alive = np.ones(idx.size, dtype=bool)
        for a in range(idx.size):
            if not alive[a]:
                continue
            kept.append(idx[a])
            alive[a + 1 :] &= ious[a, a + 1 :] <= iou_threshold
    rank = np.empty(len(dets), dtype=np.int64)
    rank[order] = np.arange(len(dets))
    kept.sort(key=lambda i: rank[i])
    return [dets[i] for i in kept]


def top_k(dets: Sequence[Detection], k: int) -> List[Detection]:
    dets = list(dets)
    if k <= 0 or len(dets) <= k:
        return [dets[i] for i in _priority(dets)] if dets else []
    return [dets[i] for i in _priority(dets)[:k]]


def stitch_windows(
    per_window: Sequence[Sequence[Detection]],
    offsets: Sequence[float],
    iou_threshold: float = 0.5,
) -> List[Detection]:
    """Shift window-local detections to video time and suppress duplicates."""
    if len(per_window) != len(offsets):
        raise ValueError(f"{len(per_window)} windows but {len(offsets)} offsets")
    merged = [d.shifted(off) for dets, off in zip(per_window, offsets) for d in dets]
    return nms(merged, iou_threshold)


def to_seconds(dets: Iterable[Detection], video_id: str, fps: float, frames_per_step: float) -> List[Detection]:
    scale = frames_per_step / fps
    return [
        replace(d, start=d.start * scale, end=d.end * scale, video_id=video_id) for d in dets
    ]


def write_jsonl(path, dets: Iterable[Detection]) -> None:
    """One record per line: video_id, t_start_sec, t_end_sec, label, score, branch."""
    with open(path, "w") as fh:
        for d in dets:
            rec = {
                "video_id": d.video_id,
                "t_start_sec": d.start,
                "t_end_sec": d.end,
                "label": d.label,
                "score": d.score,
                "branch": d.branch,
            }
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> List[Detection]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                out.append(
                    Detection(
                        float(r["t_start_sec"]),
                        float(r["t_end_sec"]),
                        int(r["label"]),
                        float(r["score"]),
                        r.get("branch", AF),
                        r.get("video_id"),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed detection record ({exc})") from exc
    return out
