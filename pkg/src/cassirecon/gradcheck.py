"""Central finite-difference verification of the autodiff engine and every layer.

Each case builds a scalar loss ``sum(f(inputs) * R)`` with a fixed random
probe ``R``, evaluates analytic gradients once, and compares a sample of
entries against the fourth-order central difference

    (8 (L(x+h) - L(x-h)) - (L(x+2h) - L(x-2h))) / 12h

whose truncation error is O(h^4), so a moderate ``h`` keeps floating-point
cancellation small even for entries whose gradient is far below the loss
scale.  Per entry the error is

    |a - n| / max(|a|, |n|, floor)

with ``floor = 1e-3 * max|n|`` over the sampled entries of that leaf, so
entries that are tiny compared to the leaf's gradient scale do not report
cancellation noise as relative error.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import functional as F
from .dst import (DSB, DST, GDFN, BlockInteraction, DenseSpatialBranch, DSTConfig, LightweightInception,
                  SpectralAttention, SpectralInteraction)
from .metrics import charbonnier_loss
from .nn import Conv2d, Module
from .physics import SensingOperator, random_mask
from .tensor import Tensor, backward, concat, no_grad, pad, tsum
from .unfolding import DegradationLearner, Stage, StageInteraction, UnfoldingModel


@dataclass
class GradCheckResult:
    name: str
    seed: int
    max_rel_err: float
    threshold: float
    checked: int
    worst: str = ""
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err < self.threshold)

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return (f"{status} {self.name:<22s} seed={self.seed} max_rel_err={self.max_rel_err:.2e} "
                f"(< {self.threshold:.0e}) entries={self.checked} {self.worst}")


def check_gradients(fn: Callable[[], Tensor], leaves: dict, rng, samples_per_leaf: int = 4,
                    h: float = 1e-3, max_leaves: int | None = None) -> tuple[float, int, str]:
    """Compare analytic and numeric gradients of ``sum(fn() * R)``.

    ``leaves`` maps names to leaf tensors (inputs or parameters) whose
    ``data`` is perturbed in place.  Returns ``(max_rel_err, n_checked, worst)``.
    """
    out = fn()
    probe = rng.standard_normal(out.shape)

    def loss_value():
        with no_grad():
            return float(np.sum(fn().data * probe))

    loss = tsum(out * Tensor(probe))
    for t in leaves.values():
        t.requires_grad = True
    grads = backward(loss, list(leaves.items()))

    names = list(leaves)
    if max_leaves is not None and len(names) > max_leaves:
        names = [names[i] for i in sorted(rng.choice(len(names), max_leaves, replace=False))]
    worst, worst_at, count = 0.0, "", 0
    for name in names:
        arr = leaves[name].data
        flat = arr.reshape(-1)
        k = min(samples_per_leaf, flat.size)
        idx = rng.choice(flat.size, k, replace=False)
        analytic = grads[name].reshape(-1)[idx]
        numeric = np.empty(k)
        for j, i in enumerate(idx):
            old = flat[i]
            vals = []
            for step in (h, -h, 2 * h, -2 * h):
                flat[i] = old + step
                vals.append(loss_value())
            flat[i] = old
            numeric[j] = (8.0 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12.0 * h)
        floor = max(1e-3 * np.max(np.abs(numeric)), 1e-12)
        err = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        count += k
        j = int(np.argmax(err))
        if err[j] > worst:
            worst, worst_at = float(err[j]), f"{name}[{idx[j]}]"
    return worst, count, worst_at


def randomize(module: Module, rng, scale: float = 0.3) -> Module:
    """Give every parameter random values so no path is trivially zero."""
    for _, p in module.named_parameters():
        p.data = np.asarray(p.data + scale * rng.standard_normal(p.shape))
    return module


def _params(module: Module, prefix: str = "") -> dict:
    return {prefix + n: p for n, p in module.named_parameters()}


def _x(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# -- cases: each returns (fn, leaves) -------------------------------------------

def _case_elementwise(rng):
    a, b, c = _x(rng, 2, 3, 4), _x(rng, 2, 1, 4), Tensor(rng.uniform(0.5, 2.0, (1, 3, 1)), requires_grad=True)
    return (lambda: (a * b + a / c - b ** 2) * F.gelu(a) + F.sigmoid(b) * (c ** 0.5)), {"a": a, "b": b, "c": c}


def _case_reductions(rng):
    a, b = _x(rng, 3, 4, 5), _x(rng, 4, 5)
    return (lambda: (a.sum(axis=1, keepdims=True) * a).mean(axis=0) + b.transpose(1, 0).reshape(4, 5)), {"a": a, "b": b}


def _case_matmul(rng):
    a, b = _x(rng, 2, 3, 4, 5), _x(rng, 1, 3, 5, 2)
    return (lambda: a @ b), {"a": a, "b": b}


def _case_indexing(rng):
    a, b = _x(rng, 2, 6, 5), _x(rng, 2, 2, 5)
    return (lambda: concat([a[:, 1:4], b, pad(a, [(0, 0), (1, 0), (0, 2)])[:, :2, 1:6], a[:, [0, 0, 5]]], axis=1)), \
        {"a": a, "b": b}


def _case_softmax_norm(rng):
    a = _x(rng, 2, 3, 7)
    g, bt = Tensor(rng.standard_normal(3), requires_grad=True), Tensor(rng.standard_normal(3), requires_grad=True)
    x4 = _x(rng, 1, 3, 2, 2)
    return (lambda: F.softmax(F.l2_normalize(a, axis=-1) * 3.0, axis=-1)
            + F.layer_norm(x4, g, bt, axis=1).reshape(1, 3, 4)[:, :, :1].sum()), {"a": a, "gamma": g, "beta": bt, "x": x4}


def _case_conv_dense(rng):
    x = _x(rng, 2, 3, 7, 6)
    conv = randomize(Conv2d(3, 4, 4, stride=2, padding=1, rng=rng), rng)
    return (lambda: conv(x)), {"x": x, **_params(conv)}


def _case_conv_depthwise(rng):
    x = _x(rng, 1, 4, 5, 6)
    conv = randomize(Conv2d(4, 4, 3, groups=4, rng=rng), rng)
    grouped = randomize(Conv2d(4, 6, 3, groups=2, rng=rng), rng)
    return (lambda: concat([conv(x), grouped(x)], axis=1)), {"x": x, **_params(conv, "dw."), **_params(grouped, "g.")}


def _case_resample_pool(rng):
    x = _x(rng, 1, 2, 3, 5)
    return (lambda: F.resample(x, (6, 4)) * F.resample(F.avg_pool3x3(x), (6, 4))
            + F.adaptive_avg_pool_1x1(x)), {"x": x}


def _case_charbonnier(rng):
    p, t = _x(rng, 1, 3, 4, 4), Tensor(rng.standard_normal((1, 3, 4, 4)))
    return (lambda: charbonnier_loss(p, t)), {"pred": p}


def _module_case(make, in_shape, extra=None):
    def case(rng):
        m = randomize(make(rng), rng)
        x = _x(rng, *in_shape)
        leaves = {"x": x, **_params(m)}
        if extra is None:
            return (lambda: m(x)), leaves
        e = _x(rng, *extra)
        leaves["aux"] = e
        return (lambda: m(x, e)), leaves
    return case


def _case_block_interaction(rng):
    m = randomize(BlockInteraction(4, 8, 16, rng=rng), rng)
    b, a1, a2 = _x(rng, 1, 4, 8, 8), _x(rng, 1, 8, 4, 4), _x(rng, 1, 16, 2, 2)
    return (lambda: m(b, a1, a2)), {"b": b, "a1": a1, "a2": a2, **_params(m)}


def _case_span(rng):
    m = StageInteraction(4, rng=rng, zero_heads=False)
    randomize(m, rng)
    s, e, d = _x(rng, 1, 4, 4, 6), _x(rng, 1, 4, 4, 6), _x(rng, 1, 4, 4, 6)
    return (lambda: m(s, e, d)), {"s_hat": s, "enc_prev": e, "dec_prev": d, **_params(m)}


def _case_dlcb(rng):
    bands = 3
    m = randomize(DegradationLearner(bands, rng=rng, zero_exit=False), rng)
    y, phi = _x(rng, 1, 1, 4, 6), _x(rng, 1, bands, 4, 6)
    return (lambda: m(y, phi)), {"y": y, "phi": phi, **_params(m)}


def _case_gd_step(rng):
    bands = 3
    stage = Stage(bands, DSTConfig(base_channels=4), 1, rng=rng, use_denoiser=False)
    randomize(stage, rng, 0.2)
    g, y, phi = _x(rng, 1, bands, 4, 6), _x(rng, 1, 1, 4, 6), _x(rng, 1, bands, 4, 6)
    return (lambda: stage.gd_step(g, y, phi)), {"g": g, "y": y, **_params(stage)}


def _case_dst(rng):
    m = randomize(DST(4, DSTConfig(base_channels=4), rng=rng), rng, 0.2)
    x = _x(rng, 1, 4, 8, 8)
    return (lambda: m.denoise(x)), {"x": x, **_params(m)}


def _case_unfolding(rng):
    h = w = 8
    bands, step = 4, 1
    model = UnfoldingModel(2, bands, step, DSTConfig(base_channels=4), seed=int(rng.integers(2**31)))
    randomize(model, rng, 0.1)
    op = SensingOperator(random_mask(h, w, rng), bands, step)
    y = op.forward(rng.uniform(0, 1, (h, w, bands)))
    return (lambda: model(y, op)), _params(model)


# name -> (case builder, threshold, max_leaves, deep)
CASES = {
    "elementwise": (_case_elementwise, 1e-4, None, False),
    "reductions": (_case_reductions, 1e-4, None, False),
    "matmul": (_case_matmul, 1e-4, None, False),
    "indexing": (_case_indexing, 1e-4, None, False),
    "softmax_norm": (_case_softmax_norm, 1e-4, None, False),
    "conv_dense": (_case_conv_dense, 1e-4, None, False),
    "conv_grouped": (_case_conv_depthwise, 1e-4, None, False),
    "resample_pool": (_case_resample_pool, 1e-4, None, False),
    "charbonnier": (_case_charbonnier, 1e-4, None, False),
    "inception": (_module_case(lambda r: LightweightInception(4, rng=r), (1, 4, 6, 6)), 1e-4, None, False),
    "dense_branch": (_module_case(lambda r: DenseSpatialBranch(4, 2, rng=r), (1, 4, 6, 6)), 1e-4, None, False),
    "smsa": (_module_case(lambda r: SpectralAttention(4, 2, rng=r), (1, 4, 4, 5), (1, 1, 4, 5)), 1e-4, None, False),
    "spectral_interaction": (_module_case(lambda r: SpectralInteraction(16, rng=r), (1, 16, 4, 4), (1, 16, 4, 4)),
                             1e-4, None, False),
    "gdfn": (_module_case(lambda r: GDFN(4, rng=r), (1, 4, 5, 4)), 1e-4, None, False),
    "dsb": (_module_case(lambda r: DSB(4, 2, rng=r), (1, 4, 4, 4)), 1e-4, None, False),
    "block_interaction": (_case_block_interaction, 1e-4, None, False),
    "span": (_case_span, 1e-4, None, False),
    "dlcb": (_case_dlcb, 1e-4, None, False),
    "gd_step": (_case_gd_step, 1e-4, None, False),
    "dst_full": (_case_dst, 1e-3, 60, True),
    "unfolding_k2": (_case_unfolding, 1e-3, 60, True),
}


def run_case(name: str, seed: int, samples_per_leaf: int = 4) -> GradCheckResult:
    build, threshold, max_leaves, _ = CASES[name]
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    t0 = time.perf_counter()
    fn, leaves = build(rng)
    err, n, worst = check_gradients(fn, leaves, rng, samples_per_leaf, max_leaves=max_leaves)
    return GradCheckResult(name, seed, err, threshold, n, worst, time.perf_counter() - t0)


def run_suite(full: bool = False, seeds=range(5), names=None, report=None) -> list[GradCheckResult]:
    """Run every case for every seed; deep compositions only when ``full``."""
    results = []
    for name, (_, _, _, deep) in CASES.items():
        if names is not None and name not in names:
            continue
        if deep and not full and names is None:
            continue
        for seed in seeds:
            res = run_case(name, seed)
            results.append(res)
            if report:
                report(res.line())
    return results
