"""Branch-ablation experiments on synthetic corpora.

One seed trains an AF-only, an AB-only and a joint model on the same windows,
evaluates each on held-out videos at tIoU 0.5, sweeps the λ-merge weight of
the joint model and scores the two-model fuse baseline.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence

import numpy as np

from a2net.config import ExperimentConfig
from a2net.data import SynthSpec, generate_synthetic, make_windows
from a2net.evaluation import BUCKET_NAMES, bucket_slice, map_at
from a2net.pipeline import RawDetections, fuse, ground_truth
from a2net.training import BRANCH_HEADS, train

logger = logging.getLogger(__name__)

LAMBDAS = (0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0)
INTERIOR_LAMBDAS = (0.2, 0.4, 0.5, 0.6, 0.8)
IOU = 0.5


@dataclass
class Corpus:
    """Train/test synthetic corpora; per-seed generator seeds are offset by ``seed``."""

    synth: SynthSpec = field(
        default_factory=lambda: SynthSpec(
            num_classes=5,
            feature_dim=32,
            mixture=(0.3, 0.0, 0.2, 0.2, 0.3),
            snr=4.0,
            actions_per_minute=10.0,
        )
    )
    train_videos: int = 90
    test_videos: int = 30

    def build(self, seed: int):
        train_recs = generate_synthetic(replace(self.synth, num_videos=self.train_videos, seed=1000 + seed))
        test_recs = generate_synthetic(replace(self.synth, num_videos=self.test_videos, seed=2000 + seed))
        return train_recs, test_recs


def acceptance_setup():
    """Corpus and model settings used by the complementarity and λ-sweep checks."""
    corpus = Corpus()
    cfg = ExperimentConfig(
        input_dim=32,
        num_classes=5,
        levels=4,
        anchor_scale=3.0,
        width_multiplier=1 / 16,
        alpha=0.1,
        beta=0.2,
        af_reg_space="strides",
        lr=1e-3,
        batch_size=16,
        epochs=30,
        decay_epoch=22,
        eval_stride_frames=128,
        score_floor=0.001,
        drop_background=False,
    )
    return corpus, cfg


@dataclass
class SeedResult:
    seed: int
    branch_map: Dict[str, float]
    branch_buckets: Dict[str, Dict[str, float]]
    lam_map: Dict[float, float]
    fuse_map: float
    fuse_buckets: Dict[str, float]
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "branch_map": self.branch_map,
            "branch_buckets": self.branch_buckets,
            "lam_map": {str(k): v for k, v in self.lam_map.items()},
            "fuse_map": self.fuse_map,
            "fuse_buckets": self.fuse_buckets,
            "seconds": self.seconds,
        }


def _score(dets, gts):
    m = map_at(dets, gts, [IOU]).mAP[0]
    b = {k: v[0] for k, v in bucket_slice(dets, gts, [IOU]).items()}
    return m, b


def run_seed(cfg: ExperimentConfig, corpus: Corpus, seed: int, lambdas: Sequence[float] = LAMBDAS) -> SeedResult:
    t0 = time.time()
    train_recs, test_recs = corpus.build(seed)
    windows = [w for r in train_recs for w in make_windows(r, cfg.window_frames, cfg.train_stride_frames, True, cfg.min_fraction)]
    gts = ground_truth(test_recs)
    inf = cfg.inference_config()
    raws: Dict[str, RawDetections] = {}
    branch_map, branch_buckets = {}, {}
    for branch in ("af_only", "ab_only", "joint"):
        run_cfg = cfg.replace(branch=branch, seed=seed)
        trainer = train(run_cfg, windows)
        raw = RawDetections(
            test_recs, trainer.params, run_cfg.model_config(), inf, cfg.mode,
            cfg.window_frames, cfg.eval_stride_frames, BRANCH_HEADS[branch],
        )
        raws[branch] = raw
        lam = {"af_only": 0.0, "ab_only": 1.0, "joint": cfg.lam}[branch]
        branch_map[branch], branch_buckets[branch] = _score(raw.merged(lam), gts)
        logger.info("seed %d %s mAP@0.5 %.4f", seed, branch, branch_map[branch])
    lam_map = {float(l): map_at(raws["joint"].merged(l), gts, [IOU]).mAP[0] for l in lambdas}
    fuse_map, fuse_buckets = _score(fuse(raws["af_only"], raws["ab_only"], inf), gts)
    return SeedResult(seed, branch_map, branch_buckets, lam_map, fuse_map, fuse_buckets, time.time() - t0)


def _nanmean(values) -> float:
    vals = [v for v in values if v == v]
    return float(np.mean(vals)) if vals else float("nan")


@dataclass
class Summary:
    """Seed-averaged numbers; mAP values are fractions, not points."""

    branch_map: Dict[str, float]
    branch_buckets: Dict[str, Dict[str, float]]
    lam_map: Dict[float, float]
    fuse_map: float
    seeds: List[int]

    def claims(self) -> Dict[str, bool]:
        af, ab = self.branch_buckets["af_only"], self.branch_buckets["ab_only"]
        joint = self.branch_map["joint"]
        best_single = max(self.branch_map["af_only"], self.branch_map["ab_only"], self.fuse_map)
        best_lam = max(self.lam_map, key=self.lam_map.get)
        return {
            "af_beats_ab_on_ES_EL": af["ES"] > ab["ES"] and af["EL"] > ab["EL"],
            "ab_beats_af_on_M_L": ab["M"] > af["M"] and ab["L"] > af["L"],
            "joint_beats_all_by_2": joint - best_single >= 0.02,
            "interior_lambda_peak": any(abs(best_lam - l) < 1e-9 for l in INTERIOR_LAMBDAS),
        }

    def to_table(self) -> str:
        lines = [f"{'model':<8} {'mAP':>6} " + " ".join(f"{b:>6}" for b in BUCKET_NAMES)]
        for name in ("af_only", "ab_only", "joint"):
            row = self.branch_buckets[name]
            cells = " ".join(f"{100 * row[b]:6.2f}" if row[b] == row[b] else f"{'-':>6}" for b in BUCKET_NAMES)
            lines.append(f"{name:<8} {100 * self.branch_map[name]:6.2f} {cells}")
        lines.append(f"{'fuse':<8} {100 * self.fuse_map:6.2f}")
        lines.append("lambda  " + " ".join(f"{l:>6.1f}" for l in self.lam_map))
        lines.append("mAP     " + " ".join(f"{100 * v:6.2f}" for v in self.lam_map.values()))
        return "\n".join(lines) + "\n"


def summarize(results: Sequence[SeedResult]) -> Summary:
    branches = list(results[0].branch_map)
    return Summary(
        branch_map={b: _nanmean(r.branch_map[b] for r in results) for b in branches},
        branch_buckets={
            b: {k: _nanmean(r.branch_buckets[b][k] for r in results) for k in BUCKET_NAMES} for b in branches
        },
        lam_map={l: _nanmean(r.lam_map[l] for r in results) for l in results[0].lam_map},
        fuse_map=_nanmean(r.fuse_map for r in results),
        seeds=[r.seed for r in results],
    )


def complementarity(cfg: ExperimentConfig, corpus: Corpus, seeds: Sequence[int] = (0, 1, 2)) -> Summary:
    return summarize([run_seed(cfg, corpus, s) for s in seeds])
