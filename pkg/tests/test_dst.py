import numpy as np
import pytest

from cassirecon import functional as F
from cassirecon.dst import (DSB, DST, GDFN, BlockInteraction, DenseBlock, DenseSpatialBranch, DSTConfig,
                            LightweightInception, SpectralAttention, SpectralInteraction, add_identity, dst_forward)
from cassirecon.gradcheck import randomize
from cassirecon.tensor import Tensor, backward


def x_of(*shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def zeroed(m):
    return m.zero_()


class TestSpatialBranch:
    def test_inception_zero_weights(self):
        m = zeroed(LightweightInception(8, rng=np.random.default_rng(0)))
        assert not m(x_of(1, 8, 6, 6)).data.any()

    def test_inception_needs_quarterable_width(self):
        with pytest.raises(ValueError):
            LightweightInception(6)

    def test_dense_block_widths(self):
        rng = np.random.default_rng(1)
        blk = DenseBlock(4, 3, rng=rng)
        x = x_of(1, 4, 5, 5)
        assert blk.conv1(x).shape[1] == 3
        assert blk.conv2.weight.shape[1] == 4 + 3
        assert blk.conv3.weight.shape[1] == 4 + 2 * 3
        assert blk(x).shape[1] == blk.out_channels == 4 + 3 * 3

    def test_branch_restores_width_and_zero(self):
        rng = np.random.default_rng(2)
        for c in (4, 8):
            m = DenseSpatialBranch(c, 2, rng=rng)
            x = x_of(1, c, 6, 6)
            assert m(x).shape == x.shape
            assert not zeroed(m)(x).data.any()


class TestSpectralAttention:
    def test_single_channel(self):
        m = randomize(SpectralAttention(1, 1, rng=np.random.default_rng(3)), np.random.default_rng(4))
        x, spa = x_of(1, 1, 3, 4, seed=5), x_of(1, 1, 3, 4, seed=6)
        out = m(x, spa)
        assert np.array_equal(m.last_attention, np.ones((1, 1, 1, 1)))
        v = m.v_dw(m.v_proj(m.norm(x))) * spa
        np.testing.assert_allclose(out.data, m.out_proj(v).data, rtol=0, atol=1e-14)

    def test_rows_sum_to_one(self):
        m = randomize(SpectralAttention(8, 4, rng=np.random.default_rng(7)), np.random.default_rng(8))
        m(x_of(2, 8, 4, 4), x_of(2, 1, 4, 4, seed=1))
        att = m.last_attention
        assert att.shape == (2, 4, 2, 2)
        np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-14)

    def test_pixel_permutation_equivariance(self):
        m = randomize(SpectralAttention(2, 1, rng=np.random.default_rng(9), qkv_kernel=1), np.random.default_rng(10))
        x, spa = np.random.default_rng(11).standard_normal((1, 2, 2, 2)), np.random.default_rng(12).standard_normal((1, 1, 2, 2))
        perm = np.array([2, 0, 3, 1])

        def permute(a):
            n, c = a.shape[:2]
            return a.reshape(n, c, 4)[:, :, perm].reshape(a.shape)

        out = m(Tensor(x), Tensor(spa)).data
        out_p = m(Tensor(permute(x)), Tensor(permute(spa))).data
        np.testing.assert_allclose(out_p, permute(out), rtol=0, atol=1e-13)

    def test_zero_spatial_map_zeroes_qkv(self):
        blk = DSB(4, 1, rng=np.random.default_rng(13))
        blk.spatial.zero_()
        x = x_of(1, 4, 4, 4)
        spa = blk.spatial(blk.dense(x))
        assert spa.shape == (1, 1, 4, 4) and not spa.data.any()
        xin = blk.smsa.norm(x)
        assert not (blk.smsa.q_dw(blk.smsa.q_proj(xin)) * spa).data.any()


class TestSpectralInteraction:
    def test_zero_weights_give_half_gate(self):
        m = zeroed(SpectralInteraction(8, rng=np.random.default_rng(14)))
        sab, dsb = x_of(1, 8, 4, 4), x_of(1, 8, 4, 4, seed=1)
        assert np.array_equal(m.weights(sab).data, np.full((1, 8, 1, 1), 0.5))
        np.testing.assert_allclose(m(sab, dsb).data, 0.5 * F.gelu(dsb).data, rtol=0, atol=0)

    def test_gate_in_open_unit_interval(self):
        m = randomize(SpectralInteraction(8, rng=np.random.default_rng(15)), np.random.default_rng(16), 1.0)
        w = m.weights(x_of(1, 8, 4, 4, seed=2)).data
        assert np.all((w > 0) & (w < 1))


class TestGDFNAndDSB:
    def test_gdfn(self):
        m = GDFN(8, 2.66, rng=np.random.default_rng(17))
        assert m.hidden == int(np.floor(2.66 * 8)) == 21
        assert m.proj_in.weight.shape[0] == 2 * m.hidden
        x = x_of(1, 8, 5, 5)
        assert m(x).shape == x.shape
        assert not zeroed(m)(x).data.any()

    def test_dsb_zero_is_identity(self):
        m = DSB(8, 2, rng=np.random.default_rng(18))
        x = x_of(1, 8, 4, 4)
        assert m(x).shape == x.shape
        assert np.array_equal(zeroed(m)(x).data, x.data)


class TestBlockInteraction:
    def test_wiring(self):
        m = zeroed(BlockInteraction(4, 8, 16, rng=np.random.default_rng(19)))
        add_identity(m.conv1)
        add_identity(m.conv2)
        b = x_of(1, 4, 8, 8)
        out = m(b, Tensor(np.zeros((1, 8, 4, 4))), Tensor(np.zeros((1, 16, 2, 2))))
        assert out.shape == b.shape
        np.testing.assert_allclose(out.data, F.gelu(b).data, rtol=0, atol=0)


class TestDST:
    def test_zero_head_identity(self):
        model = DST(4, DSTConfig(base_channels=4, zero_head=True), rng=np.random.default_rng(20))
        v = x_of(1, 4, 8, 12)
        out = dst_forward(v, model)
        assert out.shape == v.shape
        assert np.array_equal(out.data, v.data)

    def test_residual_off_zero_head_gives_zero(self):
        model = DST(4, DSTConfig(base_channels=4, zero_head=True, global_residual=False), rng=np.random.default_rng(21))
        assert not dst_forward(x_of(1, 4, 8, 8), model).data.any()

    def test_extent_check(self):
        model = DST(4, DSTConfig(base_channels=4), rng=np.random.default_rng(22))
        with pytest.raises(ValueError):
            model(x_of(1, 4, 8, 10))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DSTConfig(base_channels=8, heads_per_level=(3, 1, 1))
        with pytest.raises(ValueError):
            DSTConfig(blocks_per_level=(1, 1))

    def test_every_parameter_gets_gradient(self):
        model = randomize(DST(4, DSTConfig(base_channels=4), rng=np.random.default_rng(23)), np.random.default_rng(24))
        out = model.denoise(x_of(1, 4, 8, 8))
        named = list(model.named_parameters())
        grads = backward((out * out).sum(), named)
        dead = [n for n, g in grads.items() if not np.any(g)]
        assert not dead

    def test_level_widths(self):
        cfg = DSTConfig(base_channels=8, heads_per_level=(1, 2, 4))
        assert [cfg.channels(i) for i in range(3)] == [8, 16, 32]
        model = DST(28, cfg, rng=np.random.default_rng(25))
        _, enc, dec = model(x_of(1, 28, 8, 8))
        assert [e.shape[1] for e in enc] == [8, 16, 32]
        assert [e.shape[2] for e in enc] == [8, 4, 2]
