"""Feature-sequence datasets: file I/O, windowing, resizing and a synthetic corpus.

Annotations are stored in seconds. Model-side geometry works in *steps* of
the feature sequence; a step spans ``frames_per_step`` video frames, so
``steps = seconds * fps / frames_per_step``.

Manifest layout (JSON)::

    {
      "version": 1,
      "videos": [
        {"video_id": "v0", "features": "features/v0.bin", "fps": 30.0,
         "frames_per_step": 4.0,
         "annotations": [{"start": 1.2, "end": 3.4, "label": 2}, ...]},
        ...
      ]
    }

Feature paths are relative to the manifest. Feature files use the binary
layout of :mod:`a2net.numcore.checkpoint` with magic ``A2NFEAT`` and a single
record named ``features`` of shape [D, T].
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from a2net.evaluation import BUCKET_BOUNDS, BUCKET_NAMES
from a2net.geometry import Segment
from a2net.numcore import checkpoint

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"A2NFEAT\0"
MANIFEST_VERSION = 1


class DataError(ValueError):
    """Raised for unreadable or inconsistent dataset files."""


@dataclass
class VideoRecord:
    video_id: str
    features: np.ndarray  # [D, T_video]
    fps: float
    annotations: List[Segment] = field(default_factory=list)  # seconds
    frames_per_step: float = 4.0

    @property
    def num_steps(self) -> int:
        return self.features.shape[1]

    @property
    def duration(self) -> float:
        return self.num_steps * self.frames_per_step / self.fps

    def seconds_to_steps(self, t):
        return np.asarray(t, dtype=np.float64) * self.fps / self.frames_per_step

    def steps_to_seconds(self, s):
        return np.asarray(s, dtype=np.float64) * self.frames_per_step / self.fps

    def annotations_steps(self) -> List[Segment]:
        k = self.fps / self.frames_per_step
        return [Segment(g.start * k, g.end * k, g.label) for g in self.annotations]

    def validate(self) -> None:
        if self.features.ndim != 2:
            raise DataError(f"{self.video_id}: features must be [D, T], got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.video_id}: non-finite feature values")
        if self.fps <= 0 or self.frames_per_step <= 0:
            raise DataError(f"{self.video_id}: fps and frames_per_step must be positive")
        dur = self.duration
        for g in self.annotations:
            if g.start < 0 or g.end > dur + 1e-9:
                raise DataError(
                    f"{self.video_id}: annotation [{g.start}, {g.end}] outside video of {dur:.3f}s"
                )


@dataclass
class WindowSample:
    video_id: str
    features: np.ndarray  # [D, T]
    gts: List[Segment]  # window-local steps
    offset: float  # window start, in video steps
    scale: float = 1.0  # video steps per window step


# ------------------------------------------------------------------- I/O


def save_features(path, features: np.ndarray) -> None:
    checkpoint.save(path, {"features": np.asarray(features, dtype=np.float64)}, magic=FEATURE_MAGIC)


def load_features(path) -> np.ndarray:
    try:
        arrays = checkpoint.load(path, magic=FEATURE_MAGIC)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    if list(arrays) != ["features"]:
        raise DataError(f"feature file {path} must hold exactly one 'features' record")
    return arrays["features"]


def _parse_annotation(vid: str, a) -> Segment:
    try:
        start, end, label = float(a["start"]), float(a["end"]), int(a["label"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{vid}: malformed annotation {a!r}") from exc
    if not end > start:
        raise DataError(f"{vid}: annotation end {end} must exceed start {start}")
    if label < 1:
        raise DataError(f"{vid}: annotation label must be >= 1, got {label}")
    return Segment(start, end, label)


def load_dataset(manifest) -> List[VideoRecord]:
    """Read and validate every video of a manifest."""
    manifest = Path(manifest)
    try:
        doc = json.loads(manifest.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {manifest}: {exc}") from exc
    if doc.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {doc.get('version')}")
    records = []
    for entry in doc.get("videos", []):
        vid = str(entry.get("video_id", "?"))
        try:
            feat_path = manifest.parent / entry["features"]
            fps = float(entry["fps"])
            fps_step = float(entry.get("frames_per_step", 4.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{vid}: malformed manifest entry ({exc})") from exc
        if not feat_path.exists():
            raise DataError(f"{vid}: missing feature file {feat_path}")
        anns = [_parse_annotation(vid, a) for a in entry.get("annotations", [])]
        rec = VideoRecord(vid, load_features(feat_path), fps, anns, fps_step)
        rec.validate()
        records.append(rec)
    return records


def save_dataset(records: Sequence[VideoRecord], manifest) -> Path:
    manifest = Path(manifest)
    feat_dir = manifest.parent / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    videos = []
    for r in records:
        rel = f"features/{r.video_id}.bin"
        save_features(manifest.parent / rel, r.features)
        videos.append(
            {
                "video_id": r.video_id,
                "features": rel,
                "fps": r.fps,
                "frames_per_step": r.frames_per_step,
                "annotations": [{"start": g.start, "end": g.end, "label": g.label} for g in r.annotations],
            }
        )
    manifest.write_text(json.dumps({"version": MANIFEST_VERSION, "videos": videos}, indent=1))
    return manifest


# ------------------------------------------------------------- windowing


def window_offsets(num_steps: int, window: int, stride: int) -> List[int]:
    if stride <= 0:
        raise ValueError("window stride must be positive")
    offsets = [0]
    while offsets[-1] + window < num_steps:
        offsets.append(offsets[-1] + stride)
    return offsets


def make_windows(
    record: VideoRecord,
    window: int = 512,
    stride: int = 128,
    training: bool = True,
    min_fraction: float = 0.75,
) -> List[WindowSample]:
    """Slice a video into fixed windows; ``window`` and ``stride`` are in frames.

    Ground truth is clipped to each window and fragments keeping less than
    ``min_fraction`` of their length are dropped. With ``training`` set, only
    windows holding at least one kept fragment are returned.
    """
    w_steps = int(round(window / record.frames_per_step))
    s_steps = int(round(stride / record.frames_per_step))
    if s_steps <= 0:
        raise ValueError("window stride must be positive")
    gts = record.annotations_steps()
    D, T = record.features.shape
    out = []
    for off in window_offsets(T, w_steps, s_steps):
        feats = np.zeros((D, w_steps))
        chunk = record.features[:, off : off + w_steps]
        feats[:, : chunk.shape[1]] = chunk
        local = []
        for g in gts:
            s, e = max(g.start, off), min(g.end, off + w_steps)
            if e <= s or (e - s) < min_fraction * g.length:
                continue
            local.append(Segment(s - off, e - off, g.label))
        if training and not local:
            continue
        out.append(WindowSample(record.video_id, feats, local, float(off)))
    return out


def resize_sequence(features: np.ndarray, T: int = 128) -> np.ndarray:
    """Per-channel linear interpolation onto ``T`` evenly spaced samples."""
    features = np.asarray(features, dtype=np.float64)
    D, n = features.shape
    if n < 1:
        raise ValueError("cannot resize an empty sequence")
    if n == T:
        return features.copy()
    if n == 1:
        return np.repeat(features, T, axis=1)
    pos = np.linspace(0.0, n - 1.0, T)
    lo = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    frac = pos - lo
    return features[:, lo] * (1.0 - frac) + features[:, lo + 1] * frac


def resized_window(record: VideoRecord, T: int = 128) -> WindowSample:
    """One window spanning the whole video, resampled to ``T`` steps."""
    n = record.num_steps
    scale = n / T
    gts = [Segment(g.start / scale, g.end / scale, g.label) for g in record.annotations_steps()]
    return WindowSample(record.video_id, resize_sequence(record.features, T), gts, 0.0, scale)


# ------------------------------------------------------------- synthetic


@dataclass
class SynthSpec:
    num_videos: int = 20
    num_classes: int = 5
    feature_dim: int = 32
    mixture: Tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)  # ES, S, M, L, EL
    video_seconds: float = 60.0
    fps: float = 30.0
    frames_per_step: float = 4.0
    actions_per_minute: float = 6.0
    snr: float = 2.0
    min_duration: float = 0.3  # shortest ES action, seconds
    max_duration: float = 12.0  # longest EL action, seconds
    min_gap: float = 0.5  # seconds between neighbouring actions
    seed: int = 0
    template_seed: int = 0  # shared by corpora that must agree on class patterns

    def __post_init__(self):
        if len(self.mixture) != len(BUCKET_NAMES):
            raise ValueError("mixture needs one weight per duration bucket")
        if abs(sum(self.mixture) - 1.0) > 1e-9 or min(self.mixture) < 0:
            raise ValueError(f"mixture weights must be non-negative and sum to 1, got {self.mixture}")
        if self.num_classes > self.feature_dim:
            raise ValueError("orthogonal class templates need feature_dim >= num_classes")

    def bucket_ranges(self) -> List[Tuple[float, float]]:
        edges = [self.min_duration, *BUCKET_BOUNDS, self.max_duration]
        return list(zip(edges[:-1], edges[1:]))


def class_templates(num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """[C, D] orthonormal rows."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
    return q.T.copy()


def sample_durations(spec: SynthSpec, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """(durations in seconds, bucket index) for ``n`` actions."""
    buckets = rng.choice(len(BUCKET_NAMES), size=n, p=np.asarray(spec.mixture))
    ranges = np.array(spec.bucket_ranges())
    lo, hi = ranges[buckets, 0], ranges[buckets, 1]
    return rng.uniform(lo, hi), buckets


def _place(durations: Sequence[float], length: float, gap: float, rng, retries: int = 50):
    """Random non-overlapping placement; returns (starts, placed mask)."""
    taken: List[Tuple[float, float]] = []
    starts = np.full(len(durations), np.nan)
    for i, d in enumerate(durations):
        for _ in range(retries):
            if d >= length:
                break
            s = rng.uniform(0.0, length - d)
            if all(s + d + gap <= a or s >= b + gap for a, b in taken):
                taken.append((s, s + d))
                starts[i] = s
                break
    return starts, ~np.isnan(starts)


def render_features(
    num_steps: int, segments: Sequence[Segment], templates: np.ndarray, snr: float, rng, steps_per_second: float
) -> np.ndarray:
    """Unit-variance noise plus ``snr`` times the class template inside actions.

    A step only partly covered by an action gets the covered fraction of the
    template, so boundaries are resolved below one step.
    """
    D = templates.shape[1]
    feats = rng.standard_normal((D, num_steps))
    k = np.arange(num_steps)
    for g in segments:
        a, b = g.start * steps_per_second, g.end * steps_per_second
        cover = np.clip(np.minimum(k + 1, b) - np.maximum(k, a), 0.0, 1.0)
        feats += snr * templates[g.label - 1][:, None] * cover[None, :]
    return feats


def generate_synthetic(spec: SynthSpec) -> List[VideoRecord]:
    """Deterministic corpus of noisy feature sequences with labelled actions."""
    templates = class_templates(spec.num_classes, spec.feature_dim, np.random.default_rng(spec.template_seed))
    rng = np.random.default_rng(spec.seed)
    sps = spec.fps / spec.frames_per_step
    num_steps = int(round(spec.video_seconds * sps))
    per_video = max(1, int(round(spec.actions_per_minute * spec.video_seconds / 60.0)))
    records = []
    for v in range(spec.num_videos):
        dur, _ = sample_durations(spec, per_video, rng)
        labels = rng.integers(1, spec.num_classes + 1, size=per_video)
        starts, ok = _place(dur, num_steps / sps, spec.min_gap, rng)
        if not ok.all():
            logger.info("video %d: placed %d of %d actions", v, ok.sum(), ok.size)
        segs = sorted(
            (Segment(float(s), float(s + d), int(c)) for s, d, c, k in zip(starts, dur, labels, ok) if k),
            key=lambda g: g.start,
        )
        feats = render_features(num_steps, segs, templates, spec.snr, rng, sps)
        records.append(VideoRecord(f"synth_{v:04d}", feats, spec.fps, segs, spec.frames_per_step))
    return records
