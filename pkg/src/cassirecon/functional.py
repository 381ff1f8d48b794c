"""Differentiable layer primitives on :class:`~cassirecon.tensor.Tensor`.

Feature maps are ``(N, C, H, W)``. Convolution is im2col + matmul for dense
kernels and a shifted-slice accumulation for depthwise kernels.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .tensor import ShapeError, Tensor, as_tensor, mul, power, tsum

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pair(v):
    return (v, v) if isinstance(v, (int, np.integer)) else tuple(v)


def im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Rows are output pixels ``(n, i, j)``, columns ``(c, ki, kj)``."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = win.shape[2:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def _conv_dense(xp, w, sh, sw):
    n, c, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    cols = im2col(xp, kh, kw, sh, sw)
    w2 = w.reshape(cout, -1)
    out = (cols @ w2.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += gcols[..., i, j].transpose(0, 3, 1, 2)
        return gxp, gw

    return np.ascontiguousarray(out), bw


def _conv_depthwise(xp, w, sh, sw):
    n, c, hp, wp = xp.shape
    kh, kw = w.shape[2:]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(xp, w))
    wk = w[:, 0]
    for i in range(kh):
        for j in range(kw):
            out += wk[:, i, j][None, :, None, None] * xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(None), slice(i, i + sh * ho, sh), slice(j, j + sw * wo, sw))
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
                gxp[sl] += wk[:, i, j][None, :, None, None] * g
        return gxp, gw

    return out, bw


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0, groups: int = 1) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be (N, C, H, W), got {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (Cout, Cin/groups, kh, kw), got {weight.shape}")
    n, cin, h, w_ = x.shape
    cout, cin_g, kh, kw = weight.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if cin % groups:
        raise ShapeError(f"conv2d: input channels {cin} not divisible by groups={groups}")
    if cout % groups:
        raise ShapeError(f"conv2d: output channels {cout} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(f"conv2d: weight in-channel extent {cin_g} != input channels {cin} / groups {groups}")
    if h + 2 * ph < kh or w_ + 2 * pw < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w_ + 2 * pw}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias extent {bias.shape} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    wd = weight.data
    if groups == 1:
        out, inner_bw = _conv_dense(xp, wd, sh, sw)
    elif groups == cin and cout == cin:
        out, inner_bw = _conv_depthwise(xp, wd, sh, sw)
    else:
        og = cout // groups
        parts = [_conv_dense(xp[:, k * cin_g:(k + 1) * cin_g], wd[k * og:(k + 1) * og], sh, sw) for k in range(groups)]
        out = np.concatenate([p[0] for p in parts], axis=1)

        def inner_bw(g):
            gx, gw = zip(*(p[1](g[:, k * og:(k + 1) * og]) for k, p in enumerate(parts)))
            return np.concatenate(gx, axis=1), np.concatenate(gw, axis=0)

    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def _bw(g):
        gxp, gw = inner_bw(g)
        gx = gxp[:, :, ph:ph + h, pw:pw + w_] if (ph or pw) else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, _bw, "conv2d")


# -- pointwise ---------------------------------------------------------------
def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))

    def _bw(g):
        return (g * (cdf + xd * _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)),)

    return Tensor._make(xd * cdf, (x,), _bw, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), _bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize over one axis (population variance), then per-channel affine."""
    ax = axis % x.ndim
    c = x.shape[ax]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine extents {gamma.shape}/{beta.shape} do not match axis extent {c}")
    bshape = [1] * x.ndim
    bshape[ax] = c
    gd = gamma.data.reshape(bshape)
    bd = beta.data.reshape(bshape)
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * inv
    red = tuple(i for i in range(x.ndim) if i != ax)

    def _bw(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=ax, keepdims=True) - xhat * (gxhat * xhat).mean(axis=ax, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._make(xhat * gd + bd, (x, gamma, beta), _bw, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """``x / sqrt(sum(x**2) + eps**2)`` along ``axis``; smooth at zero."""
    sq = tsum(mul(x, x), axis=axis, keepdims=True) + eps * eps
    return mul(x, power(sq, -0.5))


# -- resampling --------------------------------------------------------------
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows hold align-corners linear-interpolation weights."""
    if n_out < 1:
        raise ValueError("target extent must be positive")
    if n_out == 1:
        coords = np.array([(n_in - 1) / 2.0])
    else:
        coords = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    m = np.zeros((n_out, n_in))
    lo = np.clip(np.floor(coords).astype(int), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coords - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resample(x: Tensor, size) -> Tensor:
    """Bilinear resize of ``(N, C, H, W)`` to ``size = (H2, W2)``."""
    h2, w2 = size
    if h2 < 1 or w2 < 1:
        raise ValueError(f"resample: target extents must be positive, got {size}")
    rh = interp_matrix(x.shape[2], h2).astype(x.dtype)
    rw = interp_matrix(x.shape[3], w2).astype(x.dtype)
    out = rh @ x.data @ rw.T
    return Tensor._make(out, (x,), lambda g: (rh.T @ g @ rw,), "resample")


def adaptive_avg_pool_1x1(x: Tensor) -> Tensor:
    return x.mean(axis=(2, 3), keepdims=True)


def avg_pool3x3(x: Tensor) -> Tensor:
    """3x3 mean filter, stride 1, zero padding 1 (padding counted in the divisor)."""
    c = x.shape[1]
    w = Tensor(np.full((c, 1, 3, 3), 1.0 / 9.0, dtype=x.dtype))
    return conv2d(x, w, None, stride=1, padding=1, groups=c)
