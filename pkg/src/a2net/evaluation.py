"""Interpolated average precision and mAP over temporal IoU thresholds."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from a2net.geometry import Segment, iou_matrix
from a2net.inference import Detection

THUMOS_THRESHOLDS = tuple(np.round(np.arange(0.1, 0.75, 0.1), 2))
ANET_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.96, 0.05), 2))
ANET_REPORTED = (0.5, 0.75, 0.95)

PRESETS = {
    # name: (thresholds evaluated, thresholds averaged for the summary)
    "thumos": (THUMOS_THRESHOLDS, THUMOS_THRESHOLDS),
    "thumos_low": (THUMOS_THRESHOLDS, tuple(t for t in THUMOS_THRESHOLDS if t <= 0.5 + 1e-9)),
    "activitynet": (ANET_THRESHOLDS, ANET_THRESHOLDS),
}

BUCKET_NAMES = ("ES", "S", "M", "L", "EL")
BUCKET_BOUNDS = (1.5, 2.5, 4.2, 6.9)  # seconds

GroundTruth = Union[Sequence[Segment], Mapping[Optional[str], Sequence[Segment]]]


def _as_video_map(gts: GroundTruth) -> Dict[Optional[str], List[Segment]]:
    if isinstance(gts, Mapping):
        return {k: list(v) for k, v in gts.items()}
    return {None: list(gts)}


def duration_bucket(duration: float, bounds: Sequence[float] = BUCKET_BOUNDS) -> str:
    """Bucket name for a duration in seconds; lower bounds are inclusive."""
    return BUCKET_NAMES[int(np.searchsorted(bounds, duration, side="right"))]


def match_detections(
    dets: Sequence[Detection], gts: GroundTruth, iou_threshold: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Greedy matching of score-ordered single-class detections.

    Returns (tp flags per detection, index of the matched ground truth or -1).
    Ground-truth indices refer to the concatenation of the per-video lists in
    insertion order. Each detection takes the unmatched ground truth of its
    video with the highest IoU at or above the threshold.
    """
    videos = _as_video_map(gts)
    base, offset = {}, 0
    arrays = {}
    for vid, segs in videos.items():
        base[vid] = offset
        offset += len(segs)
        arrays[vid] = (np.array([g.start for g in segs]), np.array([g.end for g in segs]))
    used = np.zeros(offset, dtype=bool)
    tp = np.zeros(len(dets), dtype=bool)
    matched = np.full(len(dets), -1, dtype=np.int64)
    for i, d in enumerate(dets):
        vid = d.video_id
        if vid not in arrays and list(arrays) == [None]:
            vid = None
        if vid not in arrays or arrays[vid][0].size == 0:
            continue
        gs, ge = arrays[vid]
        ov = iou_matrix([d.start], [d.end], gs, ge)[0]
        ov[used[base[vid] : base[vid] + gs.size]] = -1.0
        j = int(ov.argmax())
        if ov[j] >= iou_threshold:
            tp[i] = True
            matched[i] = base[vid] + j
            used[base[vid] + j] = True
    return tp, matched


def precision_recall(tp: np.ndarray, n_gt: int) -> Tuple[np.ndarray, np.ndarray]:
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / max(n_gt, 1)
    precision = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    return precision, recall


def ap_from_flags(tp: np.ndarray, n_gt: int, interpolation: str = "envelope") -> float:
    """Area under the interpolated precision/recall curve of a TP sequence."""
    if n_gt == 0:
        return 0.0
    if len(tp) == 0:
        return 0.0
    precision, recall = precision_recall(tp, n_gt)
    if interpolation == "11point":
        pts = []
        for r in np.linspace(0.0, 1.0, 11):
            above = precision[recall >= r - 1e-12]
            pts.append(above.max() if above.size else 0.0)
        return float(np.mean(pts))
    if interpolation != "envelope":
        raise ValueError(f"unknown interpolation {interpolation!r}")
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[step] - mrec[step - 1]) * mpre[step]))


def sort_by_score(dets: Iterable[Detection]) -> List[Detection]:
    dets = list(dets)
    order = np.argsort(-np.array([d.score for d in dets], dtype=np.float64), kind="stable")
    return [dets[i] for i in order]


def average_precision(
    dets: Sequence[Detection],
    gts: GroundTruth,
    iou_threshold: float,
    interpolation: str = "envelope",
) -> Optional[float]:
    """AP of one class. ``None`` when there is neither ground truth nor detection.

    Detections are ranked by score; equal scores keep their input order.
    """
    videos = _as_video_map(gts)
    n_gt = sum(len(v) for v in videos.values())
    if n_gt == 0:
        return None if not dets else 0.0
    tp, _ = match_detections(sort_by_score(dets), videos, iou_threshold)
    return ap_from_flags(tp, n_gt, interpolation)


@dataclass
class EvalReport:
    thresholds: Tuple[float, ...]
    average_over: Tuple[float, ...]
    per_class: Dict[int, List[float]] = field(default_factory=dict)
    mAP: List[float] = field(default_factory=list)
    average_mAP: float = 0.0
    buckets: Dict[str, List[float]] = field(default_factory=dict)
    settings: Dict[str, object] = field(default_factory=dict)

    def map_at(self, threshold: float) -> float:
        i = int(np.argmin(np.abs(np.array(self.thresholds) - threshold)))
        if abs(self.thresholds[i] - threshold) > 1e-9:
            raise KeyError(f"threshold {threshold} was not evaluated")
        return self.mAP[i]

    def bucket_map_at(self, bucket: str, threshold: float) -> float:
        i = int(np.argmin(np.abs(np.array(self.thresholds) - threshold)))
        return self.buckets[bucket][i]

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "average_over": list(self.average_over),
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class.items())},
            "mAP": self.mAP,
            "average_mAP": self.average_mAP,
            "buckets": self.buckets,
            "settings": self.settings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Aligned text: one mAP row over thresholds, then one row per bucket."""
        heads = [f"{t:.2f}" for t in self.thresholds]
        lines = []
        lines.append("  ".join([f"{'':<8}"] + [f"{h:>6}" for h in heads] + [f"{'avg':>6}"]))
        lines.append("  ".join([f"{'mAP':<8}"] + [f"{100 * v:6.2f}" for v in self.mAP] + [f"{100 * self.average_mAP:6.2f}"]))
        if self.buckets:
            lines.append("")
            lines.append("  ".join([f"{'bucket':<8}"] + [f"{b:>6}" for b in BUCKET_NAMES]))
            for ti, h in enumerate(heads):
                row = [f"{'mAP@' + h:<8}"]
                for b in BUCKET_NAMES:
                    v = self.buckets.get(b, [float("nan")] * len(heads))[ti]
                    row.append(f"{100 * v:6.2f}" if v == v else f"{'-':>6}")
                lines.append("  ".join(row))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["row"] + [f"{t:.2f}" for t in self.thresholds])
        w.writerow(["mAP"] + self.mAP)
        for k, v in sorted(self.per_class.items()):
            w.writerow([f"class_{k}"] + v)
        for b in BUCKET_NAMES:
            if b in self.buckets:
                w.writerow([f"bucket_{b}"] + self.buckets[b])
        return buf.getvalue()


def _by_class(dets: Iterable[Detection]) -> Dict[int, List[Detection]]:
    out: Dict[int, List[Detection]] = {}
    for d in dets:
        out.setdefault(d.label, []).append(d)
    return {k: sort_by_score(v) for k, v in out.items()}


def _gts_by_class(videos: Dict[Optional[str], List[Segment]]) -> Dict[int, Dict[Optional[str], List[Segment]]]:
    out: Dict[int, Dict[Optional[str], List[Segment]]] = {}
    for vid, segs in videos.items():
        for g in segs:
            out.setdefault(g.label, {vid: [] for vid in videos})[vid].append(g)
    return out


def map_at(
    dets: Iterable[Detection],
    gts: GroundTruth,
    thresholds: Sequence[float] = THUMOS_THRESHOLDS,
    average_over: Optional[Sequence[float]] = None,
    interpolation: str = "envelope",
) -> EvalReport:
    """Per-class AP and mAP at each threshold.

    Classes without any ground truth are left out of the mean.
    """
    thresholds = tuple(float(t) for t in thresholds)
    average_over = tuple(float(t) for t in (average_over or thresholds))
    videos = _as_video_map(gts)
    gt_cls = _gts_by_class(videos)
    det_cls = _by_class(dets)
    report = EvalReport(thresholds, average_over)
    for c in sorted(gt_cls):
        report.per_class[c] = [
            average_precision(det_cls.get(c, []), gt_cls[c], t, interpolation) for t in thresholds
        ]
    report.mAP = [
        float(np.mean([report.per_class[c][i] for c in report.per_class])) if report.per_class else 0.0
        for i in range(len(thresholds))
    ]
    avg = [map_at_single(report, t) for t in average_over]
    report.average_mAP = float(np.mean(avg)) if avg else 0.0
    report.settings["interpolation"] = interpolation
    return report


def map_at_single(report: EvalReport, t: float) -> float:
    for i, tt in enumerate(report.thresholds):
        if abs(tt - t) < 1e-9:
            return report.mAP[i]
    raise KeyError(f"threshold {t} is not among the evaluated thresholds")


def evaluate_preset(dets, gts, preset: str = "thumos", interpolation: str = "envelope") -> EvalReport:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    thresholds, avg = PRESETS[preset]
    report = map_at(dets, gts, thresholds, avg, interpolation)
    report.settings["preset"] = preset
    return report


def bucket_slice(
    dets: Iterable[Detection],
    gts: GroundTruth,
    thresholds: Sequence[float] = (0.5,),
    bounds: Sequence[float] = BUCKET_BOUNDS,
    interpolation: str = "envelope",
) -> Dict[str, List[float]]:
    """mAP per duration bucket; durations are the segment lengths in seconds.

    Matching is done once against all ground truth. A bucket then sees the
    detections matched to its own ground truth plus every unmatched detection
    whose own duration falls in the bucket. Buckets without ground truth for a
    class skip that class; a bucket with no ground truth at all reports NaN.
    """
    videos = _as_video_map(gts)
    gt_cls = _gts_by_class(videos)
    det_cls = _by_class(dets)
    out: Dict[str, List[float]] = {b: [] for b in BUCKET_NAMES}
    for t in thresholds:
        per_bucket: Dict[str, List[float]] = {b: [] for b in BUCKET_NAMES}
        for c, cls_gts in gt_cls.items():
            flat = [g for vid in cls_gts for g in cls_gts[vid]]
            gt_bucket = np.array([duration_bucket(g.length, bounds) for g in flat])
            cd = det_cls.get(c, [])
            tp, matched = match_detections(cd, cls_gts, t)
            det_bucket = np.array(
                [gt_bucket[m] if m >= 0 else duration_bucket(d.length, bounds) for d, m in zip(cd, matched)]
            )
            for b in BUCKET_NAMES:
                n_gt = int(np.sum(gt_bucket == b))
                if n_gt == 0:
                    continue
                sel = det_bucket == b if len(cd) else np.zeros(0, dtype=bool)
                per_bucket[b].append(ap_from_flags(tp[sel], n_gt, interpolation))
        for b in BUCKET_NAMES:
            out[b].append(float(np.mean(per_bucket[b])) if per_bucket[b] else float("nan"))
    return out


def full_report(
    dets: Iterable[Detection],
    gts: GroundTruth,
    preset: str = "thumos",
    interpolation: str = "envelope",
    buckets: bool = True,
) -> EvalReport:
    dets = list(dets)
    report = evaluate_preset(dets, gts, preset, interpolation)
    if buckets:
        report.buckets = bucket_slice(dets, gts, report.thresholds, interpolation=interpolation)
    return report


def pr_curve(dets: Iterable[Detection], gts: GroundTruth, label: int, iou_threshold: float):
    """(precision, recall) arrays of one class, for plotting."""
    videos = _as_video_map(gts)
    cls_gts = _gts_by_class(videos).get(label, {})
    cd = _by_class(dets).get(label, [])
    tp, _ = match_detections(cd, cls_gts, iou_threshold)
    return precision_recall(tp, sum(len(v) for v in cls_gts.values()))
