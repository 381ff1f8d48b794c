"""Walk through the coded-aperture forward model on a tiny and a toy-sized scene.

Run: python3 demos/01_forward_model.py
"""
import numpy as np

from cassirecon.data import generate_toy_dataset, toy_mask
from cassirecon.metrics import psnr
from cassirecon.physics import SensingOperator, disperse, modulate

# A 1x2 scene with two bands. Band 0 holds [1, 2], band 1 holds [3, 4].
cube = np.stack([[[1.0, 2.0]], [[3.0, 4.0]]], axis=-1)
mask = np.array([[1.0, 0.5]])
print("coded bands:", modulate(cube, mask)[0].T.tolist())
print("after a one-pixel shear, band 1 starts one column later:")
print(disperse(modulate(cube, mask), 1)[0].T.tolist())
op = SensingOperator(mask, bands=2, step=1)
print("detector sums the sheared bands:", op.forward(cube).tolist())

# The adjoint is what gradient methods need; check <Ax, y> == <x, A^T y>.
rng = np.random.default_rng(0)
big = SensingOperator(rng.random((6, 7)), bands=4, step=2)
x, y = rng.standard_normal(big.cube_shape), rng.standard_normal(big.measurement_shape)
print(f"adjoint mismatch on a random 6x7x4 instance: {abs(np.vdot(big.forward(x), y) - np.vdot(x, big.adjoint(y))):.2e}")

# On a 32x32x8 synthetic scene the normalized back-projection is the starting point for every reconstructor.
scene = generate_toy_dataset(0, 4).heldout[0].data
op = SensingOperator(toy_mask(0, 32, 32), bands=8, step=1)
meas = op.forward(scene)
print(f"measurement {meas.shape} from cube {scene.shape}")
print(f"plain A^T y:           {psnr(scene, op.adjoint(meas)):6.2f} dB")
print(f"normalized estimate:   {psnr(scene, op.initial_estimate(meas)):6.2f} dB")
