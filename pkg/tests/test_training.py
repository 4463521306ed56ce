import dataclasses

import numpy as np
import pytest

from a2net.config import ConfigError, ExperimentConfig, apply_overrides, parse_config, schema
from a2net.data import SynthSpec, generate_synthetic, make_windows
from a2net.training import NumericalFailure, Trainer, train


def small_cfg(**kw):
    base = dict(
        input_dim=16, num_classes=3, levels=3, width_multiplier=1 / 32, epochs=3,
        batch_size=8, lr=1e-3, alpha=0.1, beta=0.2, decay_epoch=2,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def windows():
    recs = generate_synthetic(SynthSpec(num_videos=2, num_classes=3, feature_dim=16, video_seconds=30, seed=5))
    return [w for r in recs for w in make_windows(r)]


class TestConfig:
    def test_published_defaults(self):
        c = ExperimentConfig()
        assert (c.lr, c.batch_size, c.decay_epoch, c.decay_factor) == (1e-4, 32, 30, 0.1)
        assert (c.gamma_af, c.gamma_ab_overlap, c.gamma_ab_reg) == (30.0, 10.0, 10.0)
        assert c.window_frames == 512 and c.input_length == 128

    def test_text_round_trip(self):
        c = small_cfg(branch="ab_only", drop_background=False)
        assert parse_config(c.to_text()) == c

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key 'lr_rate'"):
            parse_config("lr_rate = 1")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="epochs"):
            parse_config("epochs = many")
        with pytest.raises(ConfigError):
            parse_config("branch = both")

    def test_comments_and_overrides(self):
        c = parse_config("# note\nlevels = 4  # fewer\n")
        assert c.levels == 4
        c = apply_overrides(c, ["lam=0.3"])
        assert c.lam == 0.3 and c.overrides() == {"levels": 4, "lam": 0.3}

    def test_schema_lists_every_key(self):
        text = schema()
        for key in ("gamma_af", "anchor_scale", "nms_threshold", "drop_background"):
            assert key in text


class TestTraining:
    def test_lr_decay(self, windows):
        t = Trainer(small_cfg(), windows)
        assert [t.lr_for_epoch(e) for e in range(4)] == pytest.approx([1e-3, 1e-3, 1e-4, 1e-4])
        hist = train(small_cfg(), windows).history
        assert [h.lr for h in hist] == pytest.approx([1e-3, 1e-3, 1e-4])

    def test_af_only_zeroes_ab_terms(self, windows):
        records = []
        train(small_cfg(branch="af_only", epochs=1), windows, log=records.append)
        assert records and all(r["ab_cls"] == r["ab_overlap"] == r["ab_reg"] == 0.0 for r in records)
        assert all(r["af_cls"] > 0 for r in records)

    def test_ab_only_zeroes_af_terms(self, windows):
        records = []
        train(small_cfg(branch="ab_only", epochs=1), windows, log=records.append)
        assert all(r["af_cls"] == r["af_reg"] == 0.0 for r in records)

    def test_deterministic(self, windows):
        a = [h.mean_total for h in train(small_cfg(), windows).history]
        b = [h.mean_total for h in train(small_cfg(), windows).history]
        assert a == b

    def test_resume_reproduces_uninterrupted_run(self, windows, tmp_path):
        full, part = [], []
        train(small_cfg(), windows, log=full.append)
        train(small_cfg(), windows, run_dir=tmp_path, epochs=1, log=part.append)
        trainer = train(small_cfg(), windows, run_dir=tmp_path, resume=tmp_path / "last.ckpt", log=part.append)
        assert trainer.epoch == 3
        assert [r["total"] for r in part] == [r["total"] for r in full]

    def test_loss_decreases(self, windows):
        hist = train(small_cfg(epochs=4, decay_epoch=0), windows).history
        assert hist[-1].mean_total < hist[0].mean_total

    def test_nan_keeps_last_good_checkpoint(self, windows, tmp_path, monkeypatch):
        train(small_cfg(epochs=1), windows, run_dir=tmp_path)
        good = (tmp_path / "last.ckpt").read_bytes()
        original = Trainer.batch_loss

        def poisoned(self, idx, rng):
            loss, report = original(self, idx, rng)
            return loss, dataclasses.replace(report, total=float("nan"))

        monkeypatch.setattr(Trainer, "batch_loss", poisoned)
        with pytest.raises(NumericalFailure, match="epoch 2"):
            train(small_cfg(epochs=2), windows, run_dir=tmp_path, resume=tmp_path / "last.ckpt")
        assert (tmp_path / "last.ckpt").read_bytes() == good

    def test_shape_mismatch_rejected(self, windows):
        with pytest.raises(ValueError, match="model expects"):
            Trainer(small_cfg(input_dim=8), windows)
