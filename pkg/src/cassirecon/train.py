"""Training and held-out evaluation of the unfolding model."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import save_model
from .config import ExperimentConfig
from .io import read_cube, read_mask
from .metrics import charbonnier_loss, cube_ssim, psnr
from .optim import Adam, lr_schedule
from .physics import SensingOperator, shot_noise
from .tensor import Tensor, backward
from .unfolding import UnfoldingModel, cube_to_batch

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "loss", "lr", "holdout_psnr", "holdout_ssim")


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: UnfoldingModel
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    holdout: list = field(default_factory=list)  # (epoch, psnr, ssim)
    best_psnr: float = -math.inf
    initial_psnr: float = math.nan


def load_dataset(cfg: ExperimentConfig) -> D.ToyDataset:
    if not cfg.data_dir:
        return D.generate_toy_dataset(cfg.seed, cfg.n_scenes, cfg.scene_size, cfg.scene_size, cfg.bands, cfg.n_heldout)
    root = Path(cfg.data_dir)
    train = [read_cube(p) for p in sorted((root / "train").glob("*.hsc"))]
    held = [read_cube(p) for p in sorted((root / "heldout").glob("*.hsc"))]
    if not train or not held:
        raise FileNotFoundError(f"{root} needs train/*.hsc and heldout/*.hsc")
    return D.ToyDataset(train, held, cfg.seed)


def load_mask(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.mask_path:
        mask = read_mask(cfg.mask_path).astype(np.float64)
        if mask.shape != (cfg.patch_size, cfg.patch_size):
            raise ValueError(f"mask {mask.shape} must match patch size {cfg.patch_size}")
        return mask
    return D.toy_mask(cfg.seed, cfg.patch_size, cfg.patch_size)


def center_crop(cube: np.ndarray, size: int) -> np.ndarray:
    h, w = cube.shape[:2]
    i, j = (h - size) // 2, (w - size) // 2
    return cube[i:i + size, j:j + size]


def evaluate(model: UnfoldingModel, scenes, op: SensingOperator):
    """Mean PSNR/SSIM over scenes from noiseless measurements."""
    ps, ss = [], []
    for cube in scenes:
        gt = center_crop(cube.data if hasattr(cube, "data") else cube, op.mask.shape[0]).astype(np.float64)
        rec = model.reconstruct(op.forward(gt), op)
        ps.append(psnr(gt, rec))
        ss.append(cube_ssim(gt, rec))
    return float(np.mean(ps)), float(np.mean(ss))


def build_model(cfg: ExperimentConfig) -> UnfoldingModel:
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    return UnfoldingModel(cfg.stages, cfg.bands, cfg.dispersion_step, cfg.dst_config(),
                          seed=int(D.make_rng(cfg.seed, D.STREAM_INIT).integers(2**31)), dtype=dtype,
                          beta_init=cfg.beta_init, share_denoiser=cfg.share_denoiser)


def train(cfg: ExperimentConfig, dataset: D.ToyDataset | None = None, mask: np.ndarray | None = None,
          eval_every_epoch: bool = True) -> TrainResult:
    dataset = dataset if dataset is not None else load_dataset(cfg)
    mask = mask if mask is not None else load_mask(cfg)
    op = SensingOperator(mask, cfg.bands, cfg.dispersion_step)
    model = build_model(cfg)
    named = list(model.named_parameters())
    opt = Adam(named, cfg.lr_max, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
    rng_sample = D.make_rng(cfg.seed, D.STREAM_SAMPLING)
    rng_aug = D.make_rng(cfg.seed, D.STREAM_AUGMENT)
    rng_noise = D.make_rng(cfg.seed, D.STREAM_NOISE)

    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    writer = None
    fh = None
    if cfg.report_path:
        Path(cfg.report_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(cfg.report_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)

    result = TrainResult(model)
    try:
        if eval_every_epoch:
            result.initial_psnr = evaluate(model, dataset.heldout, op)[0]
        step = 0
        for epoch in range(1, cfg.epochs + 1):
            for _ in range(cfg.steps_per_epoch):
                lr = lr_schedule(step, cfg.total_steps, cfg.warmup_steps, cfg.lr_max)
                loss_val, grads = _accumulate(cfg, model, named, dataset, op, rng_sample, rng_aug, rng_noise)
                if not math.isfinite(loss_val) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise NumericalError(f"non-finite loss at step {step}\n--- config ---\n{cfg.dumps()}")
                opt.step(grads, lr)
                result.losses.append(loss_val)
                result.lrs.append(lr)
                step += 1
                last = step % cfg.steps_per_epoch == 0
                row = [epoch, step, repr(loss_val), repr(lr), "", ""]
                if last and eval_every_epoch:
                    hp, hs = evaluate(model, dataset.heldout, op)
                    result.holdout.append((epoch, hp, hs))
                    row[4:] = [repr(hp), repr(hs)]
                    log.info("epoch %d loss %.5f held-out %.2f dB / %.4f", epoch, loss_val, hp, hs)
                    if hp > result.best_psnr:
                        result.best_psnr = hp
                        if ckpt_dir:
                            save_model(ckpt_dir / "best.pgdw", model)
                if writer:
                    writer.writerow(row)
            if ckpt_dir:
                save_model(ckpt_dir / "last.pgdw", model)
    finally:
        if fh:
            fh.close()
    return result


def synthesize(cfg, cube, op, rng_aug, rng_noise, mask=None):
    """One training pair ``(target cube, measurement, operator)``."""
    if cfg.augment:
        if cfg.augment_mask:
            cube, m = D.augment(cube, rng_aug, mask if mask is not None else op.mask)
            op = SensingOperator(m, op.bands, op.step)
        else:
            cube = D.augment(cube, rng_aug)
    y = op.forward(cube)
    if cfg.noise:
        y = shot_noise(y, cfg.noise_bits, rng_noise)
    return cube, y, op


def _accumulate(cfg, model, named, dataset, op, rng_sample, rng_aug, rng_noise):
    total = 0.0
    grads = None
    for _ in range(cfg.batch_size):
        scene = dataset.train[int(rng_sample.integers(len(dataset.train)))]
        patch = D.random_crop(scene.data.astype(np.float64), cfg.patch_size, rng_sample)
        target, y, op_i = synthesize(cfg, patch, op, rng_aug, rng_noise)
        out = model(y, op_i)
        loss = charbonnier_loss(out, Tensor(cube_to_batch(target).astype(model.dtype)), cfg.charbonnier_eps)
        g = backward(loss, named)
        total += float(loss.item())
        grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
    if cfg.batch_size > 1:
        grads = {k: v / cfg.batch_size for k, v in grads.items()}
    return total / cfg.batch_size, grads
