"""CASSI image formation: coded modulation, integer dispersion, band integration.

Cubes are ``(H, W, B)`` arrays; measurements are ``(H, W + d*(B-1))``. The
sensing operator is matrix-free; :meth:`SensingOperator.dense_matrix` builds
the explicit matrix only for small test instances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DENSE_LIMIT = 10_000


@dataclass
class SpectralCube:
    data: np.ndarray
    wavelengths: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"cube must be (H, W, B), got shape {self.data.shape}")
        if self.wavelengths is None:
            self.wavelengths = default_wavelengths(self.data.shape[2])
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        if self.wavelengths.shape != (self.data.shape[2],):
            raise ValueError("one wavelength per band required")
        if np.any(np.diff(self.wavelengths) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube data must be finite")

    @property
    def shape(self):
        return self.data.shape


def default_wavelengths(bands: int, lo: float = 450.0, hi: float = 650.0) -> np.ndarray:
    if bands == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, bands)


def _check_mask(mask: np.ndarray, hw):
    if mask.shape != tuple(hw):
        raise ValueError(f"mask extents {mask.shape} do not match cube extents {tuple(hw)}")


def modulate(cube: np.ndarray, mask: np.ndarray) -> np.ndarray:
    cube = np.asarray(cube)
    _check_mask(mask, cube.shape[:2])
    return cube * mask[:, :, None]


def measurement_width(width: int, bands: int, step: int) -> int:
    return width + step * (bands - 1)


def disperse(cube: np.ndarray, step: int) -> np.ndarray:
    """Shift band ``b`` by ``step * b`` columns into a widened canvas."""
    h, w, nb = cube.shape
    out = np.zeros((h, measurement_width(w, nb, step), nb), dtype=cube.dtype)
    for b in range(nb):
        out[:, step * b:step * b + w, b] = cube[:, :, b]
    return out


def disperse_adjoint(shifted: np.ndarray, step: int, width: int | None = None) -> np.ndarray:
    """Crop band ``b`` back from column offset ``step * b``."""
    h, wd, nb = shifted.shape
    w = wd - step * (nb - 1) if width is None else width
    if w < 1:
        raise ValueError(f"shifted width {wd} too small for {nb} bands at step {step}")
    out = np.empty((h, w, nb), dtype=shifted.dtype)
    for b in range(nb):
        out[:, :, b] = shifted[:, step * b:step * b + w, b]
    return out


def integrate(shifted: np.ndarray) -> np.ndarray:
    return shifted.sum(axis=2)


def shifted_mask(mask: np.ndarray, bands: int, step: int) -> np.ndarray:
    """Per-band dispersed mask, shape ``(H, W + step*(B-1), B)``."""
    return disperse(np.repeat(np.asarray(mask)[:, :, None], bands, axis=2), step)


class SensingOperator:
    """Matrix-free CASSI operator ``A`` and its adjoint."""

    def __init__(self, mask: np.ndarray, bands: int, step: int = 2):
        mask = np.asarray(mask, dtype=np.float64)
        if mask.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {mask.shape}")
        if step < 0 or int(step) != step:
            raise ValueError(f"dispersion step must be a nonnegative integer, got {step}")
        if bands < 1:
            raise ValueError("bands must be positive")
        self.mask = mask
        self.bands = int(bands)
        self.step = int(step)

    @property
    def cube_shape(self):
        return (*self.mask.shape, self.bands)

    @property
    def measurement_shape(self):
        h, w = self.mask.shape
        return (h, measurement_width(w, self.bands, self.step))

    @property
    def phi(self) -> np.ndarray:
        return shifted_mask(self.mask, self.bands, self.step)

    def forward(self, cube: np.ndarray) -> np.ndarray:
        cube = np.asarray(cube)
        if cube.shape != self.cube_shape:
            raise ValueError(f"cube shape {cube.shape} != operator domain {self.cube_shape}")
        return integrate(disperse(modulate(cube, self.mask), self.step))

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != self.measurement_shape:
            raise ValueError(f"measurement shape {y.shape} != operator range {self.measurement_shape}")
        h, w = self.mask.shape
        out = np.empty(self.cube_shape, dtype=np.result_type(y, self.mask))
        for b in range(self.bands):
            out[:, :, b] = self.mask * y[:, self.step * b:self.step * b + w]
        return out

    __call__ = forward

    def dense_matrix(self) -> np.ndarray:
        """Explicit ``A`` with column ``j`` = forward of the ``j``-th unit cube (row-major h, w, b)."""
        n = int(np.prod(self.cube_shape))
        if n > DENSE_LIMIT:
            raise ValueError(f"dense oracle limited to H*W*B <= {DENSE_LIMIT}, got {n}")
        cols = np.empty((int(np.prod(self.measurement_shape)), n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            cols[:, j] = self.forward(e.reshape(self.cube_shape)).ravel()
            e[j] = 0.0
        return cols

    def initial_estimate(self, y: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        return initial_estimate(y, self, eps)


def dense_oracle(op: SensingOperator) -> np.ndarray:
    return op.dense_matrix()


def initial_estimate(y: np.ndarray, op: SensingOperator, eps: float = 1e-6) -> np.ndarray:
    """``A^T (y / (sum_b phi_b**2 + eps))``, the normalized back-projection."""
    energy = (op.phi ** 2).sum(axis=2)
    return op.adjoint(np.asarray(y) / (energy + eps))


def shot_noise(y: np.ndarray, bit_depth: int = 11, rng=None, seed=None) -> np.ndarray:
    """Poisson noise at a peak of ``2**bit_depth - 1`` photon counts."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("shot noise requires a nonnegative measurement")
    if rng is None:
        rng = np.random.default_rng(seed)
    peak = y.max() if y.size else 0.0
    if peak == 0:
        return np.zeros_like(y)
    s = (2 ** bit_depth - 1) / peak
    return rng.poisson(y * s) / s


def random_mask(h: int, w: int, rng, p: float = 0.5) -> np.ndarray:
    return (rng.random((h, w)) < p).astype(np.float64)
