import math

import numpy as np
import pytest

from a2net import numcore as nc
from a2net.geometry import Segment, build_pyramid_spec
from a2net.losses import LossWeights, ab_losses, af_losses, compute_losses, total_loss
from a2net.network import LevelOutputs, ModelOutputs
from a2net.targets import encode_ab, encode_af

SPEC = build_pyramid_spec(16, 3, channels=(1, 1, 1), base_reduction=2)  # lengths 8-4-2


def outputs(C, B=1, af_cls=None, af_reg=None, ab_cls=None, ab_o=None, ab_reg=None):
    """ModelOutputs from per-level arrays; missing entries become parameters at 0 (or 1 / 0.5)."""
    levels = []
    for i, lv in enumerate(SPEC.levels):
        t = lv.length

        def pick(given, shape, fill):
            v = given[i] if given is not None else np.full(shape, fill)
            return nc.parameter(np.array(v, dtype=np.float64))

        levels.append(
            LevelOutputs(
                pick(af_cls, (B, C + 1, t), 0.0),
                pick(af_reg, (B, 2, t), 1.0),
                pick(ab_cls, (B, C + 1, t), 0.0),
                pick(ab_o, (B, 1, t), 0.5),
                pick(ab_reg, (B, 2, t), 0.0),
            )
        )
    return ModelOutputs(levels)


class TestAF:
    def test_uniform_logits_give_log_classes(self):
        C = 19
        t = encode_af([], SPEC)
        l_cls, l_reg, n, n_fg = af_losses(outputs(C), [t])
        assert l_cls.item() == pytest.approx(math.log(20))
        assert math.log(20) == pytest.approx(2.996, abs=1e-3)
        assert l_reg.item() == 0.0 and n_fg == 0 and n == SPEC.total_locations

    def test_unit_error_single_point(self):
        # level 1 (stride 2, positions 1, 3, ...): [2.5, 3.5] holds only position 3
        gt = [Segment(2.5, 3.5, 1)]
        t = encode_af(gt, SPEC)
        assert t.foreground.sum() == 1
        i = int(np.nonzero(t.foreground)[0][0])
        reg = [np.ones((1, 2, lv.length)) for lv in SPEC.levels]
        # true distances 0.5 each; predict 1.5 each (stride units 0.75) -> unit error per side
        reg[0][0, :, i] = 0.75
        l_cls, l_reg, _, n_fg = af_losses(outputs(2, af_reg=reg), [t], "steps")
        assert n_fg == 1
        assert l_reg.item() == pytest.approx(1.0)

    def test_perfect_regression_is_zero(self):
        gt = [Segment(2.0, 7.0, 1), Segment(9.0, 15.0, 2)]
        t = encode_af(gt, SPEC)
        off = SPEC.level_offsets()
        for space in ("steps", "strides"):
            reg = []
            for k, lv in enumerate(SPEC.levels):
                sl = slice(off[k], off[k] + lv.length)
                r = np.ones((1, 2, lv.length))
                fg = t.foreground[sl]
                r[0, 0, fg] = t.start_dist[sl][fg] / lv.stride
                r[0, 1, fg] = t.end_dist[sl][fg] / lv.stride
                reg.append(r)
            assert af_losses(outputs(2, af_reg=reg), [t], space)[1].item() == pytest.approx(0.0, abs=1e-15)

    def test_unknown_space(self):
        t = encode_af([Segment(2.0, 7.0, 1)], SPEC)
        with pytest.raises(ValueError):
            af_losses(outputs(2), [t], "frames")

    def test_regression_gradient_zero_at_background(self, rng):
        gt = [Segment(2.0, 7.0, 1)]
        t = encode_af(gt, SPEC)
        reg = [rng.uniform(0.5, 2.0, (1, 2, lv.length)) for lv in SPEC.levels]
        outs = outputs(2, af_reg=reg)
        ab_t = encode_ab(gt, SPEC.anchors(), 0)

        def f():
            return compute_losses(outs, [t], [ab_t], LossWeights())[0]

        nc.backward(f())
        off = SPEC.level_offsets()
        for k, lv in enumerate(SPEC.levels):
            node = outs.levels[k].af_reg
            bg = ~t.foreground[off[k] : off[k] + lv.length]
            np.testing.assert_array_equal(node.grad[0][:, bg], 0.0)
            num = nc.numerical_gradient(f, node)
            np.testing.assert_allclose(num[0][:, bg], 0.0, atol=1e-9)


class TestAB:
    def test_overlap_mse(self):
        anchors = SPEC.anchors()
        i = 9  # level 2, position 6, width 8 -> [2, 10]
        gt = [Segment(anchors.starts[i], anchors.ends[i], 1)]
        t = encode_ab(gt, anchors, 0)
        assert t.pos_mask.sum() == 1 and t.overlap[i] == 1.0
        l_cls, l_o, l_reg, n_p, n_n = ab_losses(outputs(2), [t])
        assert l_o.item() == pytest.approx(0.25)
        assert l_reg.item() == 0.0
        assert (n_p, n_n) == (1, 1)
        assert l_cls.item() == pytest.approx(math.log(3))

    def test_no_positives(self):
        t = encode_ab([], SPEC.anchors(), 0)
        l_cls, l_o, l_reg, n_p, n_n = ab_losses(outputs(2), [t])
        assert (l_cls.item(), l_o.item(), l_reg.item(), n_p, n_n) == (0.0, 0.0, 0.0, 0, 0)

    def test_inconsistent_masks_rejected(self):
        anchors = SPEC.anchors()
        t = encode_ab([Segment(anchors.starts[9], anchors.ends[9], 1)], anchors, 0)
        t.neg_mask = t.pos_mask.copy()
        with pytest.raises(ValueError):
            ab_losses(outputs(2), [t])


class TestTotal:
    def test_default_weights_arithmetic(self):
        one = nc.constant(1.0)
        assert total_loss((one, one), (one, one, one), LossWeights()).item() == 52.0

    def test_gamma_zero_keeps_af_only(self):
        af = (nc.constant(0.5), nc.constant(2.0))
        ab = (nc.constant(7.0), nc.constant(7.0), nc.constant(7.0))
        assert total_loss(af, ab, LossWeights(gamma=0.0)).item() == 2.0 + 30 * 0.5

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(af=-1.0)

    @pytest.mark.parametrize("branch", ["joint", "af_only", "ab_only"])
    def test_report_identity_and_branch_zeros(self, branch, rng):
        gt = [Segment(2.0, 7.0, 1), Segment(8.0, 16.0, 2)]
        outs = outputs(
            2,
            af_cls=[rng.standard_normal((1, 3, lv.length)) for lv in SPEC.levels],
            ab_reg=[rng.standard_normal((1, 2, lv.length)) for lv in SPEC.levels],
        )
        w = LossWeights(gamma=0.7)
        _, rep = compute_losses(outs, [encode_af(gt, SPEC)], [encode_ab(gt, SPEC.anchors(), 1)], w, branch)
        assert rep.identity_gap() < 1e-9
        if branch == "af_only":
            assert rep.ab_cls == rep.ab_overlap == rep.ab_reg == 0.0
        if branch == "ab_only":
            assert rep.af_cls == rep.af_reg == 0.0
        for v in (rep.af_cls, rep.af_reg, rep.ab_cls, rep.ab_overlap, rep.ab_reg):
            assert v >= 0.0

    def test_unknown_branch(self):
        with pytest.raises(ValueError):
            compute_losses(outputs(2), [encode_af([], SPEC)], [encode_ab([], SPEC.anchors(), 0)], LossWeights(), "both")

    def test_report_json(self):
        _, rep = compute_losses(outputs(2), [encode_af([], SPEC)], [encode_ab([], SPEC.anchors(), 0)], LossWeights())
        assert '"af_cls"' in rep.to_json(step=3) and '"step": 3' in rep.to_json(step=3)
