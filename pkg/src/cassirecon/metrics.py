"""Reconstruction quality metrics and the Charbonnier training loss."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, mean, sqrt

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(ref, test, peak: float = 1.0) -> float:
    """PSNR in dB over all voxels; ``inf`` when the inputs are identical."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    _check_same(ref, test)
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim(ref, test, peak: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM of two 2-D images (Gaussian window, valid positions only)."""
    x = np.asarray(ref, dtype=np.float64)
    y = np.asarray(test, dtype=np.float64)
    _check_same(x, y)
    if x.ndim != 2:
        raise ValueError(f"ssim expects 2-d images, got {x.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image extents {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean())


def cube_ssim(ref, test, peak: float = 1.0) -> float:
    """Unweighted mean of per-band SSIM for ``(H, W, B)`` cubes."""
    ref, test = np.asarray(ref), np.asarray(test)
    _check_same(ref, test)
    return float(np.mean([ssim(ref[:, :, b], test[:, :, b], peak) for b in range(ref.shape[2])]))


def region_spectrum(cube, region=None) -> np.ndarray:
    cube = np.asarray(cube, dtype=np.float64)
    if region is None:
        pix = cube.reshape(-1, cube.shape[2])
    elif isinstance(region, np.ndarray) and region.dtype == bool:
        pix = cube[region]
    else:
        pix = cube[region].reshape(-1, cube.shape[2])
    if pix.shape[0] == 0:
        raise ValueError("empty region")
    return pix.mean(axis=0)


def spectral_correlation(ref, test, region=None) -> float:
    """Pearson correlation of region-averaged spectra; ``nan`` if either is flat."""
    a = region_spectrum(ref, region)
    b = region_spectrum(test, region)
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        return math.nan
    return float(a @ b) / den


def charbonnier_loss(pred, target, eps: float = 1e-3):
    """Mean of ``sqrt(diff**2 + eps**2)``; a Tensor when ``pred`` is one."""
    if isinstance(pred, Tensor):
        diff = pred - as_tensor(target, pred.dtype)
        return mean(sqrt(diff * diff + eps * eps))
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(np.sqrt(diff * diff + eps * eps)))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, scene: str, ref, test, peak: float = 1.0, region=None):
        self.rows.append({
            "scene": scene,
            "psnr_db": psnr(ref, test, peak),
            "ssim": cube_ssim(ref, test, peak),
            "spectral_corr": spectral_correlation(ref, test, region),
        })
        return self.rows[-1]

    def means(self) -> dict:
        return {k: float(np.mean([r[k] for r in self.rows])) for k in ("psnr_db", "ssim", "spectral_corr")}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scene", "psnr_db", "ssim", "spectral_corr"])
            for r in self.rows:
                w.writerow([r["scene"], _fmt(r["psnr_db"]), _fmt(r["ssim"]), _fmt(r["spectral_corr"])])

    @classmethod
    def read_csv(cls, path) -> "MetricReport":
        with open(path, newline="") as fh:
            rows = [{"scene": r["scene"], **{k: float(r[k]) for k in ("psnr_db", "ssim", "spectral_corr")}}
                    for r in csv.DictReader(fh)]
        return cls(rows)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return repr(float(v))
