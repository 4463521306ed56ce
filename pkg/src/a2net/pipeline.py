"""Video-level detection: windows -> forward -> decode -> merge -> stitch."""

from __future__ import annotations

from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from a2net.data import VideoRecord, WindowSample, make_windows, resized_window
from a2net.inference import (
    AB,
    AF,
    Detection,
    InferenceConfig,
    decode_window,
    lambda_merge,
    nms,
    split_branches,
    to_seconds,
    top_k,
)
from a2net.network import ModelConfig, Params, forward

BATCH = 64


def video_windows(record: VideoRecord, mode: str, window_frames: int, stride_frames: int, T: int) -> List[WindowSample]:
    if mode == "activitynet":
        return [resized_window(record, T)]
    return make_windows(record, window_frames, stride_frames, training=False)


def raw_window_detections(
    windows: Sequence[WindowSample],
    params: Params,
    cfg: ModelConfig,
    inf: InferenceConfig,
    heads: Sequence[str] = ("af", "ab"),
) -> List[List[Detection]]:
    """Unmerged, unscaled detections per window in window-local steps."""
    spec = cfg.pyramid()
    out: List[List[Detection]] = []
    for lo in range(0, len(windows), BATCH):
        chunk = windows[lo : lo + BATCH]
        feats = np.stack([w.features for w in chunk])
        res = forward(feats, params, cfg, heads)
        for b in range(len(chunk)):
            out.append(decode_window(res, spec, b, inf.score_floor, inf.alpha, inf.beta, drop_background=inf.drop_background))
    return out


def _to_video_steps(dets: Iterable[Detection], w: WindowSample) -> List[Detection]:
    return [
        Detection(d.start * w.scale + w.offset, d.end * w.scale + w.offset, d.label, d.score, d.branch)
        for d in dets
    ]


def merge_video(
    windows: Sequence[WindowSample],
    per_window: Sequence[Sequence[Detection]],
    record: VideoRecord,
    inf: InferenceConfig,
    lam: float = None,
) -> List[Detection]:
    """λ-merge each window, cap it at ``top_k``, stitch and suppress; seconds out."""
    lam = inf.lam if lam is None else lam
    gathered: List[Detection] = []
    for w, dets in zip(windows, per_window):
        af, ab = split_branches(dets)
        merged = [d for d in lambda_merge(af, ab, lam) if d.score > 0]
        gathered += _to_video_steps(top_k(merged, inf.top_k), w)
    final = nms(gathered, inf.nms_threshold)
    return to_seconds(final, record.video_id, record.fps, record.frames_per_step)


def detect_videos(
    records: Sequence[VideoRecord],
    params: Params,
    cfg: ModelConfig,
    inf: InferenceConfig,
    mode: str = "thumos",
    window_frames: int = 512,
    stride_frames: int = 256,
    heads: Sequence[str] = ("af", "ab"),
) -> List[Detection]:
    out: List[Detection] = []
    for rec in records:
        wins = video_windows(rec, mode, window_frames, stride_frames, cfg.input_length)
        raw = raw_window_detections(wins, params, cfg, inf, heads)
        out += merge_video(wins, raw, rec, inf)
    return out


class RawDetections:
    """Cached per-window outputs of one model, re-mergeable under any λ."""

    def __init__(self, records, params, cfg, inf, mode="thumos", window_frames=512, stride_frames=256, heads=("af", "ab")):
        self.records = list(records)
        self.inf = inf
        self.windows: Dict[str, List[WindowSample]] = {}
        self.raw: Dict[str, List[List[Detection]]] = {}
        for rec in self.records:
            wins = video_windows(rec, mode, window_frames, stride_frames, cfg.input_length)
            self.windows[rec.video_id] = wins
            self.raw[rec.video_id] = raw_window_detections(wins, params, cfg, inf, heads)

    def merged(self, lam: float = None) -> List[Detection]:
        out: List[Detection] = []
        for rec in self.records:
            out += merge_video(self.windows[rec.video_id], self.raw[rec.video_id], rec, self.inf, lam)
        return out

    def branch_only(self, branch: str) -> List[Detection]:
        """Detections of one head alone, at unscaled confidence."""
        lam = 1.0 if branch == AB else 0.0
        return self.merged(lam)


def fuse(a: "RawDetections", b: "RawDetections", inf: InferenceConfig) -> List[Detection]:
    """Baseline fusion: pool two models' unscaled per-window outputs, then suppress."""
    out: List[Detection] = []
    for rec in a.records:
        gathered: List[Detection] = []
        for src in (a, b):
            for w, dets in zip(src.windows[rec.video_id], src.raw[rec.video_id]):
                gathered += _to_video_steps(top_k(dets, inf.top_k), w)
        final = nms(gathered, inf.nms_threshold)
        out += to_seconds(final, rec.video_id, rec.fps, rec.frames_per_step)
    return out


def ground_truth(records: Sequence[VideoRecord]) -> Dict[str, list]:
    return {r.video_id: list(r.annotations) for r in records}


__all__ = [
    "AF",
    "AB",
    "detect_videos",
    "merge_video",
    "raw_window_detections",
    "RawDetections",
    "fuse",
    "ground_truth",
]
