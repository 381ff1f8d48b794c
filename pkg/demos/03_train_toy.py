"""Train the two-stage unfolding model on synthetic scenes and compare it with the baselines.

The default configuration takes roughly six minutes on one core. Pass
--quick for a one-minute run that shows the mechanics but not the final quality.

Run: python3 demos/03_train_toy.py [--quick] [--out runs/demo]
"""
import argparse
import logging
import time

import numpy as np

from cassirecon.baselines import TVSolverConfig, pgd_tv_reconstruct
from cassirecon.config import ExperimentConfig
from cassirecon.metrics import psnr
from cassirecon.physics import SensingOperator
from cassirecon.train import load_dataset, load_mask, train

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--quick", action="store_true")
parser.add_argument("--out", default="", help="directory for checkpoints and the CSV log")
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = ExperimentConfig()
if args.quick:
    cfg = cfg.replace(epochs=3, steps_per_epoch=10, batch_size=4)
if args.out:
    cfg = cfg.replace(checkpoint_dir=args.out, report_path=f"{args.out}/log.csv")
print(cfg.dumps())

ds, mask = load_dataset(cfg), load_mask(cfg)
op = SensingOperator(mask, cfg.bands, cfg.dispersion_step)
t0 = time.perf_counter()
result = train(cfg, ds, mask)
print(f"trained {cfg.total_steps} steps in {time.perf_counter() - t0:.0f}s")

held = [c.data for c in ds.heldout]
g0 = np.mean([psnr(c, op.initial_estimate(op.forward(c))) for c in held])
tv = np.mean([psnr(c, pgd_tv_reconstruct(op.forward(c), op, TVSolverConfig(tv_weight=0.03))) for c in held])
print(f"held-out PSNR  initial estimate {g0:6.2f} dB | TV {tv:6.2f} dB | unfolding {result.holdout[-1][1]:6.2f} dB")
print("learned step sizes:", [round(float(s.beta.data), 3) for s in result.model.stages])
