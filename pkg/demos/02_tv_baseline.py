"""Classical baseline: proximal gradient with a total-variation prior.

The TV weight is chosen on training scenes and then applied to the held-out
pair, the same protocol the learned model is compared against.

Run: python3 demos/02_tv_baseline.py
"""
import numpy as np

from cassirecon.baselines import TVSolverConfig, pgd_tv_reconstruct, power_method_norm, select_tv_weight
from cassirecon.data import generate_toy_dataset, toy_mask
from cassirecon.metrics import cube_ssim, psnr
from cassirecon.physics import SensingOperator

ds = generate_toy_dataset(0, 10)
op = SensingOperator(toy_mask(0, 32, 32), bands=8, step=1)
print(f"operator norm (power iteration): {power_method_norm(op, 100):.4f}")

best, scores = select_tv_weight([c.data for c in ds.train[:4]], op, iterations=150)
for lam, score in scores.items():
    print(f"  weight {lam:<5} training-scene PSNR {score:6.2f} dB")
print(f"selected weight {best}")

for i, cube in enumerate(ds.heldout):
    y = op.forward(cube.data)
    rec, objective = pgd_tv_reconstruct(y, op, TVSolverConfig(iterations=300, tv_weight=best), history=True)
    print(f"held-out {i}: start {psnr(cube.data, op.initial_estimate(y)):5.2f} dB -> TV {psnr(cube.data, rec):5.2f} dB, "
          f"SSIM {cube_ssim(cube.data, rec):.3f}, objective {objective[0]:.3f} -> {objective[-1]:.3f} "
          f"(never increased: {bool(np.all(np.diff(objective) <= 1e-8 * np.abs(objective[:-1])))})")
