"""Dense-spatial Spectral-attention Transformer (DST) denoiser.

A three-level U-net of Dense-spatial Spectral-attention blocks (DSB). Each
block runs a convolutional dense branch and a channel-attention branch in
parallel and lets them modulate each other: the dense branch emits a one-channel
spatial map that gates Q/K/V, and the attention branch emits a per-channel
weight that gates the dense features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .nn import ChannelLayerNorm, Conv2d, Module, ModuleList, dwconv
from .tensor import Tensor, concat, mul, reshape


@dataclass
class DSTConfig:
    base_channels: int = 8
    blocks_per_level: tuple = (1, 1, 1)
    heads_per_level: tuple = (1, 1, 1)
    dense_growth: int | None = None  # level-1 growth; None -> base_channels // 2
    gdfn_expansion: float = 2.66
    global_residual: bool = True
    zero_head: bool = False
    identity_init: bool = True  # skip-preserving init of the non-residual 1x1 convs
    levels: int = field(default=3, init=False)

    def __post_init__(self):
        self.blocks_per_level = tuple(int(b) for b in self.blocks_per_level)
        self.heads_per_level = tuple(int(h) for h in self.heads_per_level)
        if len(self.blocks_per_level) != 3 or len(self.heads_per_level) != 3:
            raise ValueError("DST has exactly three levels")
        if self.base_channels % 4:
            raise ValueError(f"base_channels={self.base_channels} must be divisible by 4 (inception branches)")
        for lvl, heads in enumerate(self.heads_per_level):
            c = self.channels(lvl)
            if heads < 1 or c % heads:
                raise ValueError(f"level {lvl + 1}: {c} channels not divisible by {heads} heads")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def growth(self, level: int) -> int:
        g = self.dense_growth if self.dense_growth is not None else self.base_channels // 2
        return max(1, g * 2 ** level)


class LightweightInception(Module):
    """Four C/4-wide branches; 3x3 spatial mixing is depthwise throughout."""

    def __init__(self, c, rng=None):
        super().__init__()
        if c % 4:
            raise ValueError(f"LightweightInception needs channels divisible by 4, got {c}")
        q = c // 4
        self.b1 = Conv2d(c, q, 1, rng=rng)
        self.b2_pw = Conv2d(c, q, 1, rng=rng)
        self.b2_dw = dwconv(q, 3, rng=rng)
        self.b3_pw = Conv2d(c, q, 1, rng=rng)
        self.b3_dw1 = dwconv(q, 3, rng=rng)
        self.b3_dw2 = dwconv(q, 3, rng=rng)
        self.b4_pw = Conv2d(c, q, 1, rng=rng)

    def forward(self, x):
        a = self.b1(x)
        b = self.b2_dw(self.b2_pw(x))
        c = self.b3_dw2(self.b3_dw1(self.b3_pw(x)))
        d = self.b4_pw(F.avg_pool3x3(x))
        return concat([a, b, c, d], axis=1)


class DenseBlock(Module):
    """Three concat-conv steps; step ``i`` widens the map by ``growth`` channels."""

    def __init__(self, c, growth, rng=None):
        super().__init__()
        self.conv1 = Conv2d(c, growth, 1, rng=rng)
        self.conv2 = Conv2d(c + growth, growth, 1, rng=rng)
        self.conv3 = Conv2d(c + 2 * growth, growth, 1, rng=rng)
        self.out_channels = c + 3 * growth

    def forward(self, x):
        x = concat([x, self.conv1(x)], axis=1)
        x = concat([x, self.conv2(x)], axis=1)
        return concat([x, self.conv3(x)], axis=1)


class DenseSpatialBranch(Module):
    def __init__(self, c, growth, rng=None):
        super().__init__()
        self.channels = c
        self.inception = LightweightInception(c, rng=rng)
        self.dense = DenseBlock(c, growth, rng=rng)
        self.proj = Conv2d(self.dense.out_channels, c, 1, rng=rng)
        self.dw = dwconv(c, 1, rng=rng)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"dense branch expects {self.channels} channels, got {x.shape[1]}")
        return self.dw(self.proj(self.dense(self.inception(x))))


class SpectralAttention(Module):
    """Spectral-wise multi-head self-attention gated by a spatial map.

    Attention is taken over channels: per head a ``C_h x C_h`` matrix from
    L2-normalized (along pixels) queries and keys, rows softmax-normalized.
    """

    def __init__(self, c, heads=1, rng=None, qkv_kernel=3):
        super().__init__()
        if c % heads:
            raise ValueError(f"{c} channels not divisible by {heads} heads")
        self.channels = c
        self.heads = heads
        self.norm = ChannelLayerNorm(c)
        self.q_proj = Conv2d(c, c, 1, rng=rng)
        self.k_proj = Conv2d(c, c, 1, rng=rng)
        self.v_proj = Conv2d(c, c, 1, rng=rng)
        self.q_dw = dwconv(c, qkv_kernel, rng=rng)
        self.k_dw = dwconv(c, qkv_kernel, rng=rng)
        self.v_dw = dwconv(c, qkv_kernel, rng=rng)
        self.out_proj = Conv2d(c, c, 1, rng=rng)
        self.last_attention = None

    def forward(self, x, x_spa):
        n, c, h, w = x.shape
        xin = self.norm(x)
        q = mul(self.q_dw(self.q_proj(xin)), x_spa)
        k = mul(self.k_dw(self.k_proj(xin)), x_spa)
        v = mul(self.v_dw(self.v_proj(xin)), x_spa)
        shape = (n, self.heads, c // self.heads, h * w)
        q = F.l2_normalize(reshape(q, shape), axis=-1)
        k = F.l2_normalize(reshape(k, shape), axis=-1)
        attn = F.softmax(q @ k.transpose(0, 1, 3, 2), axis=-1)
        self.last_attention = attn.data
        out = reshape(attn @ reshape(v, shape), (n, c, h, w))
        return self.out_proj(out)


class SpectralInteraction(Module):
    """Squeeze-excitation style channel weights from the attention branch."""

    def __init__(self, c, reduction=4, rng=None):
        super().__init__()
        r = max(c // reduction, 2)
        self.squeeze = Conv2d(c, r, 1, rng=rng)
        self.norm = ChannelLayerNorm(r)
        self.excite = Conv2d(r, c, 1, rng=rng)

    def weights(self, x_sab):
        z = self.squeeze(F.adaptive_avg_pool_1x1(x_sab))
        return F.sigmoid(self.excite(F.gelu(self.norm(z))))

    def forward(self, x_sab, x_dsb):
        return mul(self.weights(x_sab), F.gelu(x_dsb))


class GDFN(Module):
    """Gated depthwise-conv feed-forward network."""

    def __init__(self, c, expansion=2.66, rng=None):
        super().__init__()
        self.hidden = int(np.floor(expansion * c))
        self.proj_in = Conv2d(c, 2 * self.hidden, 1, rng=rng)
        self.dw = dwconv(2 * self.hidden, 3, rng=rng)
        self.proj_out = Conv2d(self.hidden, c, 1, rng=rng)

    def forward(self, x):
        t = self.dw(self.proj_in(x))
        a, b = t[:, :self.hidden], t[:, self.hidden:]
        return self.proj_out(mul(F.gelu(a), b))


class DSB(Module):
    def __init__(self, c, heads=1, growth=None, expansion=2.66, rng=None):
        super().__init__()
        growth = growth if growth is not None else c // 2
        self.dense = DenseSpatialBranch(c, growth, rng=rng)
        self.spatial = Conv2d(c, 1, 1, rng=rng)
        self.smsa = SpectralAttention(c, heads, rng=rng)
        self.spectral = SpectralInteraction(c, rng=rng)
        self.norm_ffn = ChannelLayerNorm(c)
        self.ffn = GDFN(c, expansion, rng=rng)

    def forward(self, x):
        x_dsb = self.dense(x)
        x_spa = self.spatial(x_dsb)
        x_sab = self.smsa(x, x_spa)
        x_spae = self.spectral(x_sab, x_dsb)
        z = x + x_sab + x_spae
        return z + self.ffn(self.norm_ffn(z))


def add_identity(conv: Conv2d, offset: int = 0) -> Conv2d:
    """Add a channel identity (input ``offset + i`` -> output ``i``) to a 1x1 conv and zero its bias.

    Blocks without a residual path otherwise shrink the spatial signal by the
    default init's gain at every layer, which slows early training badly.
    """
    w = conv.weight.data
    co = w.shape[0]
    w[np.arange(co), offset + np.arange(co), 0, 0] += 1.0
    if conv.bias is not None:
        conv.bias.data[:] = 0.0
    return conv


class BlockInteraction(Module):
    """Fuse a level's features with the other two levels resampled to its scale."""

    def __init__(self, c, c_a, c_b, rng=None, identity_init=False):
        super().__init__()
        self.proj_a = Conv2d(c_a, c, 1, rng=rng)
        self.proj_b = Conv2d(c_b, c, 1, rng=rng)
        self.conv1 = Conv2d(3 * c, c, 1, rng=rng)
        self.conv2 = Conv2d(c, c, 1, rng=rng)
        if identity_init:
            add_identity(self.conv1)
            add_identity(self.conv2)

    def forward(self, b, a1, a2):
        size = b.shape[2:]
        a1 = F.resample(self.proj_a(a1), size)
        a2 = F.resample(self.proj_b(a2), size)
        return self.conv2(F.gelu(self.conv1(concat([b, a1, a2], axis=1))))


class Upsample(Module):
    def __init__(self, c, rng=None):
        super().__init__()
        self.proj = Conv2d(c, c // 2, 1, rng=rng)

    def forward(self, x):
        return self.proj(F.resample(x, (2 * x.shape[2], 2 * x.shape[3])))


def _blocks(n, c, heads, growth, expansion, rng):
    return ModuleList([DSB(c, heads, growth, expansion, rng=rng) for _ in range(n)], prefix="block")


class DST(Module):
    def __init__(self, in_channels: int, cfg: DSTConfig | None = None, rng=None):
        super().__init__()
        cfg = cfg or DSTConfig()
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(0)
        c1, c2, c3 = (cfg.channels(i) for i in range(3))
        nb, hd, e = cfg.blocks_per_level, cfg.heads_per_level, cfg.gdfn_expansion
        self.embed = Conv2d(in_channels, c1, 1, rng=rng)
        self.level1 = _blocks(nb[0], c1, hd[0], cfg.growth(0), e, rng)
        self.down1 = Conv2d(c1, c2, 4, stride=2, padding=1, rng=rng)
        self.level2 = _blocks(nb[1], c2, hd[1], cfg.growth(1), e, rng)
        self.down2 = Conv2d(c2, c3, 4, stride=2, padding=1, rng=rng)
        self.level3 = _blocks(nb[2], c3, hd[2], cfg.growth(2), e, rng)
        ii = cfg.identity_init
        self.bi1 = BlockInteraction(c1, c2, c3, rng=rng, identity_init=ii)
        self.bi2 = BlockInteraction(c2, c1, c3, rng=rng, identity_init=ii)
        self.bi3 = BlockInteraction(c3, c1, c2, rng=rng, identity_init=ii)
        self.up2 = Upsample(c3, rng=rng)
        self.fuse2 = Conv2d(2 * c2, c2, 1, rng=rng)
        self.dec2 = _blocks(nb[1], c2, hd[1], cfg.growth(1), e, rng)
        self.up1 = Upsample(c2, rng=rng)
        self.fuse1 = Conv2d(2 * c1, c1, 1, rng=rng)
        self.dec1 = _blocks(nb[0], c1, hd[0], cfg.growth(0), e, rng)
        self.head = Conv2d(c1, in_channels, 1, rng=rng, zero=cfg.zero_head)
        if ii:
            add_identity(self.fuse2, offset=c2)
            add_identity(self.fuse1, offset=c1)

    @staticmethod
    def _run(blocks, x):
        for blk in blocks:
            x = blk(x)
        return x

    def forward(self, v, modulate=None):
        """Denoise ``v`` of shape ``(N, B, H, W)``; H and W must be multiples of 4.

        ``modulate(level, features)`` is applied to the encoder output at each
        level (the stage-interaction hook). Returns ``(out, enc, dec)`` where
        ``enc`` and ``dec`` are the per-level feature tuples.
        """
        h, w = v.shape[2:]
        if h % 4 or w % 4:
            raise ValueError(f"DST needs spatial extents divisible by 4, got {h}x{w}")
        mod = modulate or (lambda level, f: f)
        e1 = mod(0, self._run(self.level1, self.embed(v)))
        e2 = mod(1, self._run(self.level2, self.down1(e1)))
        e3 = mod(2, self._run(self.level3, self.down2(e2)))
        s1 = self.bi1(e1, e2, e3)
        s2 = self.bi2(e2, e1, e3)
        s3 = self.bi3(e3, e1, e2)
        d2 = self._run(self.dec2, self.fuse2(concat([self.up2(s3), s2], axis=1)))
        d1 = self._run(self.dec1, self.fuse1(concat([self.up1(d2), s1], axis=1)))
        out = self.head(d1)
        if self.cfg.global_residual:
            out = v + out
        return out, (e1, e2, e3), (d1, d2, s3)

    def denoise(self, v):
        return self.forward(v)[0]


def dst_forward(v: Tensor, model: DST) -> Tensor:
    return model.denoise(v)
