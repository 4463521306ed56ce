import numpy as np
import pytest

from a2net import numcore as nc
from a2net.losses import LossWeights, compute_losses
from a2net.network import ModelConfig, forward, init_params, load_params, parameter_count, save_params
from a2net.targets import encode_ab, encode_af

from conftest import tiny_config, tiny_gts

LEVEL_LENGTHS = {3: (16, 8, 4), 4: (32, 16, 8, 4), 5: (32, 16, 8, 4, 2), 6: (64, 32, 16, 8, 4, 2)}


def small(L, **kw):
    return ModelConfig(input_dim=6, num_classes=3, levels=L, **kw).scaled(1 / 64)


class TestShapes:
    @pytest.mark.parametrize("L", sorted(LEVEL_LENGTHS))
    def test_level_lengths(self, L, rng):
        cfg = small(L)
        out = forward(rng.standard_normal((2, 6, 128)), init_params(cfg), cfg)
        assert tuple(lv.af_cls.shape[2] for lv in out.levels) == LEVEL_LENGTHS[L]
        for lv in out.levels:
            t = lv.af_cls.shape[2]
            assert lv.af_cls.shape == (2, 4, t)
            assert lv.af_reg.shape == (2, 2, t)
            assert lv.ab_cls.shape == (2, 4, t)
            assert lv.ab_overlap.shape == (2, 1, t)
            assert lv.ab_reg.shape == (2, 2, t)

    def test_default_head_widths(self):
        cfg = ModelConfig(input_dim=32, num_classes=20)
        shapes = {k: v.shape for k, v in init_params(cfg).items() if k.startswith("level1.")}
        assert shapes["level1.af.conv1.weight"] == (512, 512, 1)
        assert shapes["level1.af.conv2.weight"] == (512, 512, 3)
        assert shapes["level1.af.conv3.weight"] == (512, 512, 3)
        assert shapes["level1.af.pred_cls.weight"] == (21, 512, 3)
        assert shapes["level1.af.pred_reg.weight"] == (2, 512, 3)
        assert shapes["level1.ab.pred.weight"] == (24, 512, 3)

    def test_wrong_input_shape_rejected(self, rng):
        cfg = small(6)
        with pytest.raises(ValueError, match="expected features"):
            forward(rng.standard_normal((1, 5, 128)), init_params(cfg), cfg)

    def test_branch_subset(self, rng):
        cfg = small(4)
        out = forward(rng.standard_normal((1, 6, 128)), init_params(cfg), cfg, ("ab",))
        assert out.levels[0].af_cls is None and out.levels[0].ab_cls is not None


class TestValues:
    def test_zero_weights(self, rng):
        cfg = small(6)
        params = init_params(cfg)
        for p in params.values():
            p.value[...] = 0.0
        out = forward(rng.standard_normal((1, 6, 128)), params, cfg)
        for lv in out.levels:
            np.testing.assert_array_equal(lv.af_reg.value, 1.0)
            np.testing.assert_array_equal(lv.ab_overlap.value, 0.5)

    def test_ranges(self, rng):
        cfg = small(5)
        out = forward(10 * rng.standard_normal((3, 6, 128)), init_params(cfg, 3), cfg)
        for lv in out.levels:
            assert np.all(lv.af_reg.value > 0)
            assert np.all((lv.ab_overlap.value > 0) & (lv.ab_overlap.value < 1))

    def test_deterministic(self, rng):
        cfg = small(4)
        x = rng.standard_normal((2, 6, 128))
        a = forward(x, init_params(cfg, 5), cfg).flat("af_cls").value
        b = forward(x, init_params(cfg, 5), cfg).flat("af_cls").value
        np.testing.assert_array_equal(a, b)


class TestInit:
    def test_same_seed_identical(self):
        cfg = small(3)
        a, b = init_params(cfg, 9), init_params(cfg, 9)
        assert all(np.array_equal(a[k].value, b[k].value) for k in a)

    def test_different_seeds_differ(self):
        cfg = small(3)
        a, b = init_params(cfg, 1), init_params(cfg, 2)
        assert not np.array_equal(a["base2.weight"].value, b["base2.weight"].value)

    def test_biases_zero(self):
        params = init_params(small(3))
        assert all(not p.value.any() for k, p in params.items() if k.endswith(".bias"))

    def test_variance_preserved(self, rng):
        # a relu conv with fan-in gain keeps the second moment of its input
        cfg = ModelConfig(input_dim=64, num_classes=2, levels=3).scaled(0.25)
        params = init_params(cfg, 0)
        x = nc.relu(nc.constant(rng.standard_normal((4, 128, 128))))
        for name in ("base2",):
            y = nc.relu(nc.conv1d(x, params[f"{name}.weight"], params[f"{name}.bias"], padding=4))
            ratio = np.mean(y.value**2) / np.mean(x.value**2)
            assert 1 / 3 < ratio < 3

    def test_names_are_stable(self):
        names = set(init_params(small(3)))
        assert {"base1.weight", "conv3.bias", "level3.af.pred_cls.bias", "level2.ab.pred.weight"} <= names


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = small(3)
        params = init_params(cfg, 4)
        save_params(tmp_path / "m.ckpt", params, {"trainer.epoch": np.array([3.0])})
        loaded, extra = load_params(tmp_path / "m.ckpt", cfg)
        assert all(np.array_equal(params[k].value, loaded[k].value) for k in params)
        assert extra["trainer.epoch"][0] == 3.0

    def test_shape_mismatch_rejected(self, tmp_path):
        save_params(tmp_path / "m.ckpt", init_params(small(3)))
        other = ModelConfig(input_dim=6, num_classes=4, levels=3).scaled(1 / 64)
        with pytest.raises(ValueError, match="shape"):
            load_params(tmp_path / "m.ckpt", other)

    def test_parameter_count(self):
        cfg = tiny_config()
        assert parameter_count(init_params(cfg)) == sum(p.value.size for p in init_params(cfg).values())


def randomized_params(cfg, rng):
    """Initial weights with random biases, so no relu input sits exactly at its kink."""
    params = init_params(cfg, 0)
    for name, p in params.items():
        if name.endswith(".bias"):
            p.value[...] = rng.normal(0.0, 0.2, p.shape)
    return params


def tiny_loss(cfg, params, x, reg_space="steps"):
    spec = cfg.pyramid()
    af_t = [encode_af(g, spec) for g in tiny_gts()]
    ab_t = [encode_ab(g, spec.anchors(), 0, 0.1, 0.2) for g in tiny_gts()]

    def f():
        out = forward(x, params, cfg)
        return compute_losses(out, af_t, ab_t, LossWeights(), "joint", reg_space)[0]

    return f, af_t, ab_t


def test_end_to_end_gradcheck(rng):
    # the acceptance suite covers the default regression space
    cfg = tiny_config()
    params = randomized_params(cfg, rng)
    x = rng.standard_normal((2, 8, 16))
    f, af_t, ab_t = tiny_loss(cfg, params, x, "strides")
    assert sum(t.foreground.sum() for t in af_t) > 0
    assert sum(t.pos_mask.sum() for t in ab_t) > 0
    errors = nc.check_gradients(f, params.values())
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-3, f"{worst}: {errors[worst]:.2e}"
