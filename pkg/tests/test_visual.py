import numpy as np
import pytest

from cslr import autodiff as ad
from cslr import visual as vis
from cslr.autodiff import Tensor, finite_diff_check
from cslr.visual import VisualConfig


@pytest.fixture
def small_config():
    return VisualConfig(conv_stack=[(4, 3, 2, 1), (6, 3, 1, 1)], attention_after=2,
                        in_channels=3, feature_dim=6)


@pytest.fixture
def params(small_config):
    return vis.init_visual_params(small_config, np.random.default_rng(0))


def feat(rng, t=2, c=5, j=4, k=4):
    return Tensor(rng.normal(size=(t, c, j, k)))


class TestSqueezes:
    def test_cmp_single_channel_identity(self):
        rng = np.random.default_rng(1)
        f = feat(rng, c=1)
        np.testing.assert_array_equal(vis.cmp_squeeze(f).data, f.data)

    def test_cmp_dominant_channel(self):
        rng = np.random.default_rng(2)
        f = rng.normal(size=(2, 3, 4, 4))
        f[:, 2] += 100.0
        out = vis.cmp_squeeze(Tensor(f))
        np.testing.assert_array_equal(out.data[:, 0], f[:, 2])

    def test_cmp_is_elementwise_max(self):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(2, 5, 3, 3))
        np.testing.assert_array_equal(
            vis.cmp_squeeze(Tensor(f)).data[:, 0], f.max(axis=1))

    def test_channel_weights_single_channel(self):
        rng = np.random.default_rng(4)
        out = vis.channel_weights(feat(rng, c=1))
        np.testing.assert_allclose(out.data, 1.0)

    def test_channel_weights_equal_means(self):
        f = np.zeros((1, 2, 3, 3))
        out = vis.channel_weights(Tensor(f))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_channel_weights_closed_form(self):
        f = np.zeros((1, 2, 2, 2))
        f[0, 1] = np.log(3.0)
        out = vis.channel_weights(Tensor(f))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-12)

    def test_channel_weights_shift_invariant(self):
        rng = np.random.default_rng(5)
        f = rng.normal(size=(2, 4, 3, 3))
        np.testing.assert_allclose(
            vis.channel_weights(Tensor(f)).data,
            vis.channel_weights(Tensor(f + 2.5)).data, atol=1e-12)

    def test_weighted_squeeze_one_hot(self):
        rng = np.random.default_rng(6)
        f = rng.normal(size=(2, 3, 4, 4))
        e = np.zeros((2, 3))
        e[:, 1] = 1.0
        out = vis.weighted_squeeze(Tensor(f), Tensor(e))
        np.testing.assert_allclose(out.data[:, 0], f[:, 1])

    def test_weighted_squeeze_identical_channels(self):
        rng = np.random.default_rng(7)
        base = rng.normal(size=(2, 1, 4, 4))
        f = np.repeat(base, 3, axis=1)
        e = np.full((2, 3), 1 / 3)
        out = vis.weighted_squeeze(Tensor(f), Tensor(e))
        np.testing.assert_allclose(out.data, base, atol=1e-12)

    def test_weighted_squeeze_matches_oracle(self):
        rng = np.random.default_rng(8)
        f = rng.normal(size=(2, 4, 3, 3))
        e = rng.uniform(size=(2, 4))
        out = vis.weighted_squeeze(Tensor(f), Tensor(e))
        expect = np.einsum("tcjk,tc->tjk", f, e)[:, None]
        np.testing.assert_allclose(out.data, expect, atol=1e-12)


class TestAttentionMask:
    def test_zero_conv_gives_half(self):
        rng = np.random.default_rng(9)
        m1, m2 = feat(rng, c=1), feat(rng, c=1)
        out = vis.attention_mask(m1, m2, Tensor(np.zeros((1, 2, 7, 7))), Tensor(np.zeros(1)))
        np.testing.assert_allclose(out.data, 0.5)

    def test_large_bias_saturates_toward_one(self):
        rng = np.random.default_rng(10)
        m1, m2 = feat(rng, c=1), feat(rng, c=1)
        out = vis.attention_mask(m1, m2, Tensor(np.zeros((1, 2, 7, 7))), Tensor([50.0]))
        assert (out.data > 1 - 1e-12).all()

    def test_outputs_in_open_interval(self):
        rng = np.random.default_rng(11)
        m1, m2 = feat(rng, c=1), feat(rng, c=1)
        w = Tensor(rng.normal(size=(1, 2, 7, 7)))
        out = vis.attention_mask(m1, m2, w, Tensor(rng.normal(size=1)))
        assert (out.data > 0).all() and (out.data < 1).all()

    def test_preserves_spatial_shape(self):
        rng = np.random.default_rng(12)
        m1, m2 = feat(rng, c=1, j=5, k=9), feat(rng, c=1, j=5, k=9)
        w = Tensor(rng.normal(size=(1, 2, 7, 7)))
        assert vis.attention_mask(m1, m2, w, Tensor(np.zeros(1))).shape == (2, 1, 5, 9)


class TestApplyAttention:
    def test_mask_one_is_identity(self):
        rng = np.random.default_rng(13)
        f = feat(rng)
        m = Tensor(np.ones((2, 1, 4, 4)))
        np.testing.assert_array_equal(vis.apply_attention(f, m).data, f.data)

    def test_mask_zero_annihilates(self):
        rng = np.random.default_rng(14)
        f = feat(rng)
        out = vis.apply_attention(f, Tensor(np.zeros((2, 1, 4, 4))))
        np.testing.assert_array_equal(out.data, np.zeros_like(f.data))

    def test_single_cell_spike(self):
        rng = np.random.default_rng(15)
        f = rng.normal(size=(1, 3, 4, 4))
        m = np.zeros((1, 1, 4, 4))
        m[0, 0, 2, 1] = 0.7
        out = vis.apply_attention(Tensor(f), Tensor(m)).data
        np.testing.assert_allclose(out[0, :, 2, 1], 0.7 * f[0, :, 2, 1])
        out[0, :, 2, 1] = 0.0
        assert np.all(out == 0.0)


class TestSacLoss:
    def test_equal_masks_zero(self):
        rng = np.random.default_rng(16)
        m = rng.uniform(size=(3, 4, 4))
        assert vis.sac_loss(Tensor(m), m).item() == 0.0

    def test_maximal_gap(self):
        m = Tensor(np.zeros((2, 3, 3)))
        assert vis.sac_loss(m, np.ones((2, 3, 3))).item() == pytest.approx(1.0)

    def test_direct_arithmetic_case(self):
        m = Tensor(np.full((1, 2, 2), 0.5))
        assert vis.sac_loss(m, np.ones((1, 2, 2))).item() == pytest.approx(0.25)

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            vis.sac_loss(Tensor(np.zeros((1, 2, 2))), np.zeros((1, 3, 3)))

    def test_frame_permutation_invariant(self):
        rng = np.random.default_rng(17)
        m = rng.uniform(size=(4, 3, 3))
        h = rng.uniform(size=(4, 3, 3))
        perm = rng.permutation(4)
        assert vis.sac_loss(Tensor(m), h).item() == pytest.approx(
            vis.sac_loss(Tensor(m[perm]), h[perm]).item(), abs=1e-15)

    def test_strictly_positive_unless_equal(self):
        rng = np.random.default_rng(18)
        m = rng.uniform(size=(2, 3, 3))
        h = m.copy()
        h[0, 0, 0] += 1e-3
        assert vis.sac_loss(Tensor(m), h).item() > 0

    def test_gradient_through_conv_parameters(self, small_config, params):
        rng = np.random.default_rng(19)
        frames = rng.uniform(size=(2, 8, 8, 3))
        targets = rng.uniform(0.1, 1.0, size=(2, 4, 4))

        def loss_wrt(t):
            params2 = dict(params)
            params2["attn.w"] = t
            out = vis.visual_forward(frames, params2, small_config,
                                     sac_active=True, targets=targets)
            return vis.sac_loss(out.mask, targets)

        w = Tensor(params["attn.w"].data.copy(), requires_grad=True)
        assert finite_diff_check(loss_wrt, w) <= 1e-5


class TestVisualForward:
    def test_single_frame_shape(self, small_config, params):
        rng = np.random.default_rng(20)
        out = vis.visual_forward(rng.uniform(size=(1, 8, 8, 3)), params, small_config)
        assert out.features.shape == (1, 6)

    def test_frame_permutation_permutes_rows(self, small_config, params):
        rng = np.random.default_rng(21)
        frames = rng.uniform(size=(4, 8, 8, 3))
        v1 = vis.visual_forward(frames, params, small_config).features.data
        perm = np.array([2, 0, 3, 1])
        v2 = vis.visual_forward(frames[perm], params, small_config).features.data
        np.testing.assert_allclose(v2, v1[perm], atol=1e-12)

    def test_sac_inactive_forward_is_bit_identical(self, small_config, params):
        rng = np.random.default_rng(22)
        frames = rng.uniform(size=(3, 8, 8, 3))
        targets = rng.uniform(0.1, 1.0, size=(3, 4, 4))
        on = vis.visual_forward(frames, params, small_config, sac_active=True, targets=targets)
        off = vis.visual_forward(frames, params, small_config, sac_active=False)
        np.testing.assert_array_equal(on.features.data, off.features.data)
        assert on.artifacts is not None and off.artifacts is None

    def test_target_resolution_mismatch_errors(self, small_config, params):
        rng = np.random.default_rng(23)
        frames = rng.uniform(size=(2, 8, 8, 3))
        with pytest.raises(ad.ShapeError, match="target"):
            vis.visual_forward(frames, params, small_config, sac_active=True,
                               targets=np.ones((2, 5, 5)))

    def test_attention_adds_exactly_99_parameters(self):
        config = VisualConfig()
        params = vis.init_visual_params(config, np.random.default_rng(0))
        assert vis.attention_param_count(params) == 99
        assert 7 * 7 * 2 + 1 == 99

    def test_mask_resolution_default_stack(self):
        assert VisualConfig().mask_resolution(32, 32) == (8, 8)
