"""K-stage proximal gradient descent unfolding with DST proximal steps.

The iterate lives in the dispersed (sheared) domain ``(N, B, H, W + d(B-1))``,
where the sensing operator is ``A x = sum_b phi_b * x_b`` with ``phi`` the
per-band shifted mask. Each stage learns a mask residual ``dphi`` so the
gradient step uses ``phi + dphi`` in place of ``phi``.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .dst import DST, DSTConfig
from .nn import Conv2d, Module, ModuleList, Parameter, dwconv
from .physics import SensingOperator, disperse
from .tensor import Tensor, add, concat, mul, no_grad, pad, tsum


class DLCB(Module):
    """Conv3x3 -> GELU -> Conv3x3 with an identity skip."""

    def __init__(self, c, rng=None):
        super().__init__()
        self.conv1 = Conv2d(c, c, 3, rng=rng)
        self.conv2 = Conv2d(c, c, 3, rng=rng)

    def forward(self, x):
        return x + self.conv2(F.gelu(self.conv1(x)))


class DegradationLearner(Module):
    """Maps ``[y repeated to B bands, phi]`` to the mask residual ``dphi``.

    A 1x1 entry conv narrows the ``2B`` stacked channels to ``B`` so the two
    residual blocks are width-preserving; the 1x1 exit conv starts at zero.
    """

    def __init__(self, bands, rng=None, zero_exit=True):
        super().__init__()
        self.entry = Conv2d(2 * bands, bands, 1, rng=rng)
        self.block1 = DLCB(bands, rng=rng)
        self.block2 = DLCB(bands, rng=rng)
        self.exit = Conv2d(bands, bands, 1, rng=rng, zero=zero_exit)

    def forward(self, y, phi):
        nb = phi.shape[1]
        x = concat([y] * nb + [phi], axis=1)
        return self.exit(self.block2(self.block1(self.entry(x))))


class StageInteraction(Module):
    """Scale/shift modulation of current features from the previous stage's.

    ``scale = sigmoid(dw(h))``, ``shift = dw'(h)`` with
    ``h = gelu(conv(enc_prev) + conv'(dec_prev))``; output ``scale * s + shift``.
    """

    def __init__(self, c, rng=None, zero_heads=True):
        super().__init__()
        self.enc_conv = Conv2d(c, c, 1, rng=rng)
        self.dec_conv = Conv2d(c, c, 1, rng=rng)
        self.scale_dw = dwconv(c, 3, rng=rng, zero=zero_heads)
        self.shift_dw = dwconv(c, 3, rng=rng, zero=zero_heads)

    def modulation(self, enc_prev, dec_prev):
        h = F.gelu(self.enc_conv(enc_prev) + self.dec_conv(dec_prev))
        return F.sigmoid(self.scale_dw(h)), self.shift_dw(h)

    def forward(self, s_hat, enc_prev=None, dec_prev=None):
        if enc_prev is None:
            return s_hat
        pam1, pam2 = self.modulation(enc_prev, dec_prev)
        return mul(pam1, s_hat) + pam2


def stage_interaction(span: StageInteraction | None, enc_prev, dec_prev, s_hat):
    if span is None or enc_prev is None:
        return s_hat
    return span(s_hat, enc_prev, dec_prev)


class Stage(Module):
    def __init__(self, bands, cfg: DSTConfig, index: int, rng=None, use_denoiser=True, beta_init=1.0,
                 shared_dst: DST | None = None):
        super().__init__()
        self.index = index
        self.use_denoiser = use_denoiser
        self.beta = Parameter(np.array(beta_init))
        self.dlcb = DegradationLearner(bands, rng=rng)
        if index > 1:
            self.span = ModuleList([StageInteraction(cfg.channels(lvl), rng=rng) for lvl in range(3)],
                                   prefix="level", start=1)
        else:
            self.span = None
        if use_denoiser and shared_dst is not None:
            # bypass registration so the shared weights are listed once, under their owning stage
            object.__setattr__(self, "dst", shared_dst)
        elif use_denoiser:
            self.dst = DST(bands, cfg, rng=rng)

    def learn_degradation(self, y, phi):
        return self.dlcb(y, phi)

    def gd_step(self, g_prev, y, phi):
        """``g - beta * A_hat^T (A_hat g - y)`` with ``A_hat`` built on ``phi + dphi``."""
        phi_hat = add(phi, self.learn_degradation(y, phi))
        residual = tsum(mul(g_prev, phi_hat), axis=1, keepdims=True) - y
        return g_prev - mul(self.beta, mul(residual, phi_hat))

    def forward(self, g_prev, y, phi, prev=None):
        v = self.gd_step(g_prev, y, phi)
        if not self.use_denoiser:
            return v, None
        width = v.shape[3]
        extra = (-width) % 4
        vp = pad(v, [(0, 0), (0, 0), (0, 0), (0, extra)]) if extra else v

        def modulate(level, feats):
            if prev is None:
                return feats
            return stage_interaction(self.span[level], prev[0][level], prev[1][level], feats)

        out, enc, dec = self.dst(vp, modulate)
        if extra:
            out = out[:, :, :, :width]
        return out, (enc, dec)


def shift_back(x: Tensor, step: int, width: int) -> Tensor:
    """Differentiable crop of band ``b`` from column offset ``step * b``."""
    nb = x.shape[1]
    return concat([x[:, b:b + 1, :, step * b:step * b + width] for b in range(nb)], axis=1)


def cube_to_batch(cube: np.ndarray) -> np.ndarray:
    """``(H, W, B)`` or ``(N, H, W, B)`` -> ``(N, B, H, W)``."""
    cube = np.asarray(cube)
    if cube.ndim == 3:
        cube = cube[None]
    return np.ascontiguousarray(cube.transpose(0, 3, 1, 2))


def batch_to_cube(x) -> np.ndarray:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    out = data.transpose(0, 2, 3, 1)
    return out[0] if out.shape[0] == 1 else out


class UnfoldingModel(Module):
    def __init__(self, stages: int, bands: int, step: int, cfg: DSTConfig | None = None, seed: int = 0,
                 use_denoiser: bool = True, dtype=np.float64, beta_init: float = 1.0,
                 share_denoiser: bool = False):
        super().__init__()
        if stages < 1:
            raise ValueError("at least one stage required")
        self.cfg = cfg or DSTConfig()
        self.bands = bands
        self.step = step
        self.dtype = dtype
        self.share_denoiser = bool(share_denoiser and use_denoiser)
        rng = np.random.default_rng(seed)
        self.stages = ModuleList(prefix="stage", start=1)
        for k in range(stages):
            shared = self.stages[0].dst if self.share_denoiser and k > 0 else None
            self.stages.append(Stage(bands, self.cfg, k + 1, rng=rng, use_denoiser=use_denoiser,
                                     beta_init=beta_init, shared_dst=shared))
        if dtype != np.float64:
            self.astype(dtype)

    def named_parameters(self, prefix=""):
        yield from self.stages.named_parameters(prefix)

    @property
    def num_stages(self):
        return len(self.stages)

    def prepare(self, y: np.ndarray, op: SensingOperator):
        """Constant tensors for one measurement: ``(g0, y, phi)`` in the dispersed domain."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != op.measurement_shape:
            raise ValueError(f"measurement shape {y.shape} != {op.measurement_shape}")
        g0 = disperse(op.initial_estimate(y), op.step)
        dt = self.dtype
        return (Tensor(cube_to_batch(g0).astype(dt)), Tensor(y[None, None].astype(dt)),
                Tensor(cube_to_batch(op.phi).astype(dt)))

    def forward(self, y: np.ndarray, op: SensingOperator, return_stages: bool = False) -> Tensor:
        """Reconstruct ``(1, B, H, W)`` from a single measurement."""
        if op.bands != self.bands:
            raise ValueError(f"operator has {op.bands} bands, model expects {self.bands}")
        g, yt, phi = self.prepare(y, op)
        prev = None
        history = [g]
        for stage in self.stages:
            g, prev = stage(g, yt, phi, prev)
            history.append(g)
        out = shift_back(g, op.step, op.mask.shape[1])
        if return_stages:
            return out, history
        return out

    def reconstruct(self, y: np.ndarray, op: SensingOperator) -> np.ndarray:
        """Inference-only convenience returning an ``(H, W, B)`` array."""
        with no_grad():
            return batch_to_cube(self.forward(y, op)).astype(np.float64)


def unfold_forward(y, op, model: UnfoldingModel) -> Tensor:
    return model(y, op)
