"""ARM, DRM and GRFM: equation-level fixtures and structural properties."""

import dataclasses

import numpy as np
import pytest

from focalsod import ops
from focalsod.arm import ARM, FocalFusion, alignment_ratio
from focalsod.config import VARIANTS, VariantConfig, variant
from focalsod.drm import DRM
from focalsod.grfm import GRFM
from focalsod.tensor import ConfigError, DimensionError, Tensor

from oracles import softmax_scalar


def feats(rng, n, c, h, w, nonneg=False, dtype=np.float32):
    a = rng.standard_normal((n, c, h, w))
    return Tensor((np.abs(a) if nonneg else a).astype(dtype))


def zero_params(module):
    for p in module.parameters():
        if p.ndim > 1:
            p.data[:] = 0


# ---------------------------------------------------------------------------
# ARM
# ---------------------------------------------------------------------------

class TestAlignmentWeights:
    def test_identical_slices_uniform(self):
        rng = np.random.default_rng(0)
        arm = ARM(4, rng)
        one = feats(rng, 1, 4, 6, 6)
        f_fs = Tensor(np.repeat(one.data, 5, axis=0))
        v = arm.alignment_weights(feats(rng, 1, 4, 6, 6), f_fs).data.ravel()
        assert v.shape == (5,)
        np.testing.assert_allclose(v, 1 / 5, atol=1e-6)

    def test_two_slice_ratios(self):
        # C=1, identity score conv: GAP ratios (0.5, 1.0) for guide 2 and slices 2/3, 2
        w_a = Tensor(np.full((1, 1, 3, 3), 2.0))
        w_fs = Tensor(np.stack([np.full((1, 3, 3), 2 / 3), np.full((1, 3, 3), 2.0)]))
        ratio = alignment_ratio(w_a, w_fs, eps=1e-12)
        np.testing.assert_allclose(ratio.data.ravel(), [0.5, 1.0], atol=1e-9)
        score = ops.conv2d(ratio, Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
        v = ops.softmax_slices(score).data.ravel()
        np.testing.assert_allclose(v, softmax_scalar([0.5, 1.0]), atol=1e-9)
        np.testing.assert_allclose(v, [0.37754, 0.62246], atol=1e-4)

    def test_constant_features_ratio(self):
        c = 2.0
        w = Tensor(np.full((1, 3, 4, 4), c))
        ratio = alignment_ratio(w, Tensor(np.full((2, 3, 4, 4), c)), eps=1e-6).data
        np.testing.assert_allclose(ratio, c * c / (2 * c + 1e-6))
        np.testing.assert_allclose(ratio, 1.0, atol=1e-6)

    def test_sums_to_one(self):
        rng = np.random.default_rng(2)
        for n in (1, 3, 12):
            arm = ARM(4, rng)
            v = arm.alignment_weights(feats(rng, 1, 4, 4, 4), feats(rng, n, 4, 4, 4)).data
            assert v.shape == (n, 1, 1, 1)
            assert np.all(v > 0)
            assert abs(v.sum() - 1) < 1e-6

    def test_guide_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DimensionError):
            ARM(4, rng).alignment_weights(feats(rng, 1, 4, 5, 5), feats(rng, 3, 4, 4, 4))


class TestMaskRefine:
    def test_zero_base(self):
        rng = np.random.default_rng(0)
        out = ARM(4, rng).mask_refine(feats(rng, 1, 4, 5, 5), Tensor.zeros(3, 4, 5, 5))
        assert np.all(out.data == 0)

    def test_zero_conv3_gives_one_and_half(self):
        rng = np.random.default_rng(1)
        arm = ARM(4, rng)
        zero_params(arm.mask)
        f = feats(rng, 3, 4, 5, 5)
        out = arm.mask_refine(feats(rng, 1, 4, 5, 5), f)
        np.testing.assert_allclose(out.data, 1.5 * f.data, rtol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        arm = ARM(3, rng)
        f = feats(rng, 4, 3, 5, 5, nonneg=True, dtype=np.float64)
        out = arm.mask_refine(feats(rng, 1, 3, 5, 5, dtype=np.float64), f).data
        assert np.all(out >= f.data) and np.all(out <= 2 * f.data)

    def test_broadcast_mask_mode(self):
        rng = np.random.default_rng(0)
        arm = ARM(4, rng, mask_mode="broadcast")
        assert arm.mask.conv2.c_out == 1
        out = arm.mask_refine(feats(rng, 1, 4, 5, 5), feats(rng, 2, 4, 5, 5))
        assert out.shape == (2, 4, 5, 5)


class TestFocalFusion:
    def test_sum_and_max(self):
        rng = np.random.default_rng(0)
        ff = FocalFusion(3, rng)
        f = Tensor(np.stack([np.full((3, 4, 4), 1.0), np.full((3, 4, 4), 3.0)]))
        pre = ff.pre_fusion(f).data
        assert pre.shape == (1, 6, 4, 4)
        np.testing.assert_array_equal(pre[:, :3], 4.0)
        np.testing.assert_array_equal(pre[:, 3:], 3.0)

    def test_single_slice(self):
        rng = np.random.default_rng(0)
        x = feats(rng, 1, 3, 4, 4, nonneg=True)
        pre = FocalFusion(3, rng).pre_fusion(x).data
        np.testing.assert_array_equal(pre[:, :3], x.data)
        np.testing.assert_array_equal(pre[:, 3:], x.data)

    def test_swap_bit_identical(self):
        rng = np.random.default_rng(1)
        ff = FocalFusion(3, rng)
        f = feats(rng, 2, 3, 4, 4)
        out = ff(f).data
        np.testing.assert_array_equal(ff(Tensor(f.data[::-1].copy())).data, out)

    def test_concat_conv_mode(self):
        rng = np.random.default_rng(1)
        ff = FocalFusion(3, rng, "concat_conv", slices=4)
        assert ff(feats(rng, 4, 3, 4, 4)).shape == (1, 3, 4, 4)
        with pytest.raises(DimensionError):
            ff(feats(rng, 3, 3, 4, 4))
        with pytest.raises(ConfigError):
            FocalFusion(3, rng, "concat_conv")


class TestArmForward:
    def test_zero_focal_zero_output(self):
        rng = np.random.default_rng(0)
        out = ARM(4, rng)(feats(rng, 1, 4, 6, 6), Tensor.zeros(3, 4, 6, 6))
        assert np.all(out.data == 0)

    def test_default_slice_count_shape(self):
        rng = np.random.default_rng(0)
        out = ARM(8, rng)(feats(rng, 1, 8, 8, 8), feats(rng, 12, 8, 8, 8))
        assert out.shape == (1, 8, 8, 8)


# ---------------------------------------------------------------------------
# DRM
# ---------------------------------------------------------------------------

class TestDirectionalMasks:
    def test_zero_weights_half(self):
        rng = np.random.default_rng(0)
        drm = DRM(4, rng)
        zero_params(drm)
        mx, my = drm.directional_masks(feats(rng, 1, 4, 5, 6), feats(rng, 3, 4, 5, 6))
        np.testing.assert_allclose(mx.data, 0.5)
        np.testing.assert_allclose(my.data, 0.5)

    def test_constant_inputs(self):
        rng = np.random.default_rng(0)
        drm = DRM(4, rng)
        mx, my = drm.directional_masks(Tensor.full((1, 4, 6, 6), 0.3), Tensor.full((2, 4, 6, 6), 0.7))
        np.testing.assert_allclose(mx.data, np.broadcast_to(mx.data[:, :, :1, :], mx.shape), rtol=1e-6)
        np.testing.assert_allclose(my.data, np.broadcast_to(my.data[:, :, :, :1], my.shape), rtol=1e-6)

    def test_full_scale_shapes(self):
        rng = np.random.default_rng(0)
        mx, my = DRM(64, rng).directional_masks(feats(rng, 1, 64, 16, 16), feats(rng, 12, 64, 16, 16))
        assert mx.shape == (12, 64, 16, 1)
        assert my.shape == (12, 64, 1, 16)
        for m in (mx, my):
            assert np.all((m.data > 0) & (m.data < 1))

    def test_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DimensionError):
            DRM(4, rng).directional_masks(feats(rng, 1, 4, 5, 5), feats(rng, 2, 4, 6, 5))


class TestDrmForward:
    def test_half_masks_quarter_scaling(self):
        rng = np.random.default_rng(0)
        drm = DRM(4, rng)
        zero_params(drm.score_x)
        zero_params(drm.score_y)
        f = feats(rng, 3, 4, 5, 5)
        np.testing.assert_allclose(drm.modulate(feats(rng, 1, 4, 5, 5), f).data, 0.25 * f.data, rtol=1e-6)

    def test_zero_focal(self):
        rng = np.random.default_rng(0)
        drm = DRM(4, rng)
        assert np.all(drm.modulate(feats(rng, 1, 4, 5, 5), Tensor.zeros(2, 4, 5, 5)).data == 0)
        assert np.all(drm(feats(rng, 1, 4, 5, 5), Tensor.zeros(2, 4, 5, 5)).data == 0)

    def test_broadcast_brute_force(self):
        rng = np.random.default_rng(3)
        drm = DRM(2, rng)
        f_d, f_fs = feats(rng, 1, 2, 3, 4), feats(rng, 2, 2, 3, 4)
        mx, my = drm.directional_masks(f_d, f_fs)
        out = drm.modulate(f_d, f_fs).data
        for n in range(2):
            for c in range(2):
                for h in range(3):
                    for w in range(4):
                        expected = f_fs.data[n, c, h, w] * mx.data[n, c, h, 0] * my.data[n, c, 0, w]
                        assert out[n, c, h, w] == expected


# ---------------------------------------------------------------------------
# GRFM
# ---------------------------------------------------------------------------

class TestCrossFusion:
    def setup_method(self):
        self.rng = np.random.default_rng(0)
        self.block = GRFM(4, VariantConfig(), 3, self.rng)

    def test_zero_depth(self):
        fa = feats(self.rng, 1, 4, 5, 5)
        pre = self.block.cross_fusion_input(Tensor.zeros(1, 4, 5, 5), fa).data
        np.testing.assert_array_equal(pre[:, :4], fa.data)
        np.testing.assert_array_equal(pre[:, 4:], 0)

    def test_equal_inputs(self):
        x = feats(self.rng, 1, 4, 5, 5)
        pre = self.block.cross_fusion_input(x, x).data
        np.testing.assert_array_equal(pre[:, :4], 2 * x.data)
        np.testing.assert_array_equal(pre[:, 4:], x.data * x.data)

    def test_symmetric(self):
        a, b = feats(self.rng, 1, 4, 5, 5), feats(self.rng, 1, 4, 5, 5)
        np.testing.assert_array_equal(self.block.cross_fusion_input(a, b).data, self.block.cross_fusion_input(b, a).data)
        assert self.block.cross_fusion(a, b).shape == (1, 4, 5, 5)


class TestTriModal:
    def test_zero_inputs(self):
        rng = np.random.default_rng(0)
        block = GRFM(4, VariantConfig(), 3, rng)
        z = Tensor.zeros(1, 4, 5, 5)
        out = block.tri_modal_aggregate(z, z, z)
        assert out.shape == (1, 4, 5, 5)
        assert np.all(out.data == 0)

    def test_flat_concat_parameter_count_differs(self):
        full = GRFM(8, variant("Full"), 3, np.random.default_rng(0))
        p2 = GRFM(8, variant("P2"), 3, np.random.default_rng(0))
        assert full.num_parameters() != p2.num_parameters()
        assert hasattr(full, "agg_inner") and hasattr(full, "agg_outer")
        assert p2.agg.conv.c_in == 24


def _inputs(rng, n=3, c=8, h=8, dtype=np.float32):
    return feats(rng, 1, c, h, h, dtype=dtype), feats(rng, 1, c, h, h, dtype=dtype), feats(rng, n, c, h, h, dtype=dtype)


class TestGrfmForward:
    def test_full_shape(self):
        rng = np.random.default_rng(0)
        out = GRFM(64, variant("Full"), 12, rng)(*_inputs(rng, 12, 64, 8))
        assert out.shape == (1, 64, 8, 8)

    def test_m0_has_no_refiners(self):
        block = GRFM(8, variant("M0"), 3, np.random.default_rng(0))
        names = [k for k, _ in block.named_parameters()]
        assert not any("align" in k or "score" in k or "mask" in k for k in names)
        assert not any(isinstance(m, (ARM, DRM)) for _, m in block.named_modules())
        full = GRFM(8, variant("Full"), 3, np.random.default_rng(0))
        kinds = {type(m) for _, m in full.named_modules()}
        assert ARM in kinds and DRM in kinds

    def test_full_vs_m5_differ(self):
        rng = np.random.default_rng(0)
        x = _inputs(rng)
        full = GRFM(8, variant("Full"), 3, np.random.default_rng(1))
        m5 = GRFM(8, variant("M5"), 3, np.random.default_rng(1))
        assert not np.allclose(full(*x).data, m5(*x).data)

    def test_compositional_equivalence(self):
        rng = np.random.default_rng(0)
        block = GRFM(8, variant("Full"), 3, rng)
        fa, fd, f_fs = _inputs(rng)
        ga, gd = block.ca_aif(fa), block.ca_dep(fd)
        out_a = block.refine_aif(ga, block.split_aif(f_fs))
        out_d = block.refine_dep(gd, block.split_dep(f_fs))
        cf = block.cf(ops.concat_channels(ops.add(out_d, out_a), ops.mul(out_d, out_a)))
        manual = block.agg_outer(ops.concat_channels(cf, block.agg_inner(ops.concat_channels(ga, gd))))
        np.testing.assert_array_equal(block(fa, fd, f_fs).data, manual.data)

    def test_gradient_reaches_all_streams(self):
        rng = np.random.default_rng(0)
        block = GRFM(8, variant("Full"), 3, rng)
        fa, fd, f_fs = _inputs(rng)
        for t in (fa, fd, f_fs):
            t.requires_grad = True
        r = Tensor(rng.standard_normal((1, 8, 8, 8)).astype(np.float32))
        ops.sum_all(ops.mul(block(fa, fd, f_fs), r)).backward()
        for t in (fa, fd, f_fs):
            assert t.grad is not None and np.abs(t.grad).sum() > 0

    @pytest.mark.parametrize("name", sorted(VARIANTS))
    def test_every_variant_runs(self, name):
        rng = np.random.default_rng(0)
        v = variant(name)
        fa, fd, f_fs = _inputs(rng)
        out = GRFM(8, v, 3, rng)(fa if v.use_aif else None, fd if v.use_dep else None, f_fs)
        assert out.shape == (1, 8, 8, 8)
        assert np.all(np.isfinite(out.data))

    def test_v0_wiring(self):
        block = GRFM(8, variant("V0"), 3, np.random.default_rng(0))
        assert not hasattr(block, "ca_aif") and not hasattr(block, "ca_dep") and not hasattr(block, "cf")
        assert isinstance(block.refine_aif, FocalFusion)

    def test_invalid_combination(self):
        bad = dataclasses.replace(variant("V0"), cf_mode="cross_fusion")
        with pytest.raises(ConfigError):
            bad.validate()
        with pytest.raises(ConfigError):
            GRFM(8, bad, 3, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            VariantConfig(aif_path="xyz").validate()


@pytest.mark.parametrize("trial", range(5))
def test_refiners_slice_permutation_invariant(trial):
    rng = np.random.default_rng(100 + trial)
    arm, drm = ARM(4, rng), DRM(4, rng)
    g, f = feats(rng, 1, 4, 6, 6), feats(rng, 5, 4, 6, 6)
    perm = rng.permutation(5)
    fp = Tensor(f.data[perm])
    np.testing.assert_allclose(arm(g, fp).data, arm(g, f).data, atol=1e-5)
    np.testing.assert_allclose(drm(g, fp).data, drm(g, f).data, atol=1e-5)
    v = arm.alignment_weights(g, f).data
    np.testing.assert_allclose(arm.alignment_weights(g, fp).data, v[perm], atol=1e-6)
