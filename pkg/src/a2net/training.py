"""Seeded, resumable training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from a2net import numcore as nc
from a2net.config import ExperimentConfig
from a2net.data import WindowSample
from a2net.geometry import PyramidSpec
from a2net.losses import LossReport, compute_losses
from a2net.network import ModelConfig, Params, forward, init_params, load_params, save_params
from a2net.targets import AFTargets, encode_ab, encode_af

logger = logging.getLogger(__name__)

BRANCH_HEADS = {"joint": ("af", "ab"), "af_only": ("af",), "ab_only": ("ab",)}
BRANCHES = tuple(BRANCH_HEADS)


def checkpoint_branch(extra) -> Optional[str]:
    """Branch mode recorded in a trainer checkpoint, if any."""
    if "trainer.branch" not in extra:
        return None
    return BRANCHES[int(extra["trainer.branch"][0])]


class NumericalFailure(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class EpochSummary:
    epoch: int
    lr: float
    mean_total: float
    mean_af: float
    mean_ab: float
    steps: int


def _epoch_rng(seed: int, epoch: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, salt])


class Trainer:
    """Owns parameters, optimiser state and the per-window target cache."""

    def __init__(self, cfg: ExperimentConfig, windows: Sequence[WindowSample], params: Optional[Params] = None):
        self.cfg = cfg
        self.model_cfg: ModelConfig = cfg.model_config()
        self.spec: PyramidSpec = self.model_cfg.pyramid()
        self.anchors = self.spec.anchors()
        self.windows = list(windows)
        for w in self.windows:
            if w.features.shape != (self.model_cfg.input_dim, self.model_cfg.input_length):
                raise ValueError(
                    f"window of {w.video_id} has shape {w.features.shape}, model expects "
                    f"({self.model_cfg.input_dim}, {self.model_cfg.input_length})"
                )
        self.params = params if params is not None else init_params(self.model_cfg, cfg.seed)
        self.names = list(self.params)
        self.opt = nc.Adam([self.params[n] for n in self.names], lr=cfg.lr)
        self.weights = cfg.loss_weights()
        self.heads = BRANCH_HEADS[cfg.branch]
        self.epoch = 0
        self.history: List[EpochSummary] = []
        self._af_cache: List[AFTargets] = [encode_af(w.gts, self.spec) for w in self.windows]

    # ------------------------------------------------------------ steps
    def lr_for_epoch(self, epoch: int) -> float:
        return nc.step_lr(self.cfg.lr, epoch, self.cfg.decay_epoch, self.cfg.decay_factor)

    def batch_loss(self, idx: Sequence[int], rng: np.random.Generator):
        feats = np.stack([self.windows[i].features for i in idx])
        out = forward(feats, self.params, self.model_cfg, self.heads)
        af_t = [self._af_cache[i] for i in idx]
        ab_t = [
            encode_ab(self.windows[i].gts, self.anchors, rng, self.cfg.alpha, self.cfg.beta)
            for i in idx
        ]
        return compute_losses(out, af_t, ab_t, self.weights, self.cfg.branch, self.cfg.af_reg_space)

    def train_epoch(self, log: Optional[Callable[[dict], None]] = None) -> EpochSummary:
        epoch = self.epoch
        lr = self.lr_for_epoch(epoch)
        self.opt.lr = lr
        order = _epoch_rng(self.cfg.seed, epoch, 1).permutation(len(self.windows))
        neg_rng = _epoch_rng(self.cfg.seed, epoch, 2)
        bs = self.cfg.batch_size
        reports: List[LossReport] = []
        for step, lo in enumerate(range(0, len(order), bs)):
            idx = order[lo : lo + bs]
            loss, report = self.batch_loss(idx, neg_rng)
            if not math.isfinite(report.total):
                raise NumericalFailure(f"non-finite loss at epoch {epoch + 1}, step {step}")
            self.opt.zero_grad()
            nc.backward(loss)
            self.opt.step()
            reports.append(report)
            if log is not None:
                log(report_record(report, epoch + 1, step, lr))
        self.epoch += 1
        summary = EpochSummary(
            epoch=self.epoch,
            lr=lr,
            mean_total=float(np.mean([r.total for r in reports])) if reports else float("nan"),
            mean_af=float(np.mean([r.af_reg + self.weights.af * r.af_cls for r in reports])) if reports else 0.0,
            mean_ab=float(np.mean([r.ab_cls + self.weights.ab_overlap * r.ab_overlap + self.weights.ab_reg * r.ab_reg for r in reports])) if reports else 0.0,
            steps=len(reports),
        )
        self.history.append(summary)
        logger.info("epoch %d lr %.2e loss %.4f", summary.epoch, lr, summary.mean_total)
        return summary

    def evaluate_loss(self, idx: Optional[Sequence[int]] = None, seed: int = 0) -> LossReport:
        """Loss on a fixed batch without updating anything."""
        idx = list(range(len(self.windows))) if idx is None else list(idx)
        _, report = self.batch_loss(idx, np.random.default_rng(seed))
        return report

    # ------------------------------------------------------- checkpoints
    def save(self, path) -> None:
        extra = self.opt.state_arrays(self.names)
        extra["trainer.epoch"] = np.array([float(self.epoch)])
        extra["trainer.branch"] = np.array([float(BRANCHES.index(self.cfg.branch))])
        save_params(path, self.params, extra)

    def restore(self, path) -> None:
        params, extra = load_params(path, self.model_cfg)
        for n in self.names:
            self.params[n].value = params[n].value
        self.opt.load_state_arrays(self.names, extra)
        self.epoch = int(extra["trainer.epoch"][0])


def report_record(report: LossReport, epoch: int, step: int, lr: float) -> dict:
    return {
        "epoch": epoch,
        "step": step,
        "lr": lr,
        "total": report.total,
        "af_cls": report.af_cls,
        "af_reg": report.af_reg,
        "ab_cls": report.ab_cls,
        "ab_overlap": report.ab_overlap,
        "ab_reg": report.ab_reg,
        "n_locations": report.n_locations,
        "n_af_pos": report.n_af_pos,
        "n_ab_pos": report.n_ab_pos,
        "n_ab_neg": report.n_ab_neg,
    }


def train(
    cfg: ExperimentConfig,
    windows: Sequence[WindowSample],
    run_dir: Optional[Path] = None,
    epochs: Optional[int] = None,
    resume: Optional[Path] = None,
    log: Optional[Callable[[dict], None]] = None,
) -> Trainer:
    """Train for ``epochs`` (default ``cfg.epochs``) total epochs.

    With ``run_dir`` set, ``last.ckpt`` is rewritten every
    ``cfg.checkpoint_every`` epochs; a non-finite loss leaves the last good
    checkpoint in place and re-raises.
    """
    trainer = Trainer(cfg, windows)
    if resume is not None:
        trainer.restore(resume)
    total = cfg.epochs if epochs is None else epochs
    while trainer.epoch < total:
        trainer.train_epoch(log)
        if run_dir is not None and (trainer.epoch % max(cfg.checkpoint_every, 1) == 0 or trainer.epoch == total):
            trainer.save(Path(run_dir) / "last.ckpt")
    return trainer
