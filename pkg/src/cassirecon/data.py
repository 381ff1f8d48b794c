"""Synthetic spectral scenes, augmentation and seeded random streams."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .physics import SpectralCube, default_wavelengths, random_mask

# stream ids for independent random draws under one seed
STREAM_DATA = 0
STREAM_MASK = 1
STREAM_INIT = 2
STREAM_SAMPLING = 3
STREAM_AUGMENT = 4
STREAM_NOISE = 5


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, stream)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class ToyDataset:
    train: list
    heldout: list
    seed: int

    @property
    def scenes(self):
        return self.train + self.heldout


def _smooth_spectrum(rng, bands):
    x = np.linspace(0.0, 1.0, bands)
    spec = np.full(bands, rng.uniform(0.05, 0.3))
    for _ in range(rng.integers(1, 3)):
        center = rng.uniform(-0.2, 1.2)
        width = rng.uniform(0.25, 0.7)
        spec += rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((x - center) / width) ** 2)
    return spec


def generate_scene(rng, h, w, bands, n_blobs=None) -> np.ndarray:
    """Sum of anisotropic Gaussian blobs, each carrying its own smooth spectrum."""
    n_blobs = int(rng.integers(4, 9)) if n_blobs is None else n_blobs
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cube = np.zeros((h, w, bands))
    cube += 0.1 * _smooth_spectrum(rng, bands)[None, None, :]
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sy, sx = rng.uniform(0.06, 0.25) * h, rng.uniform(0.06, 0.25) * w
        amp = rng.uniform(0.4, 1.0)
        blob = amp * np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
        cube += blob[:, :, None] * _smooth_spectrum(rng, bands)[None, None, :]
    cube -= cube.min()
    return cube / cube.max()


def generate_toy_dataset(seed: int = 0, n_scenes: int = 10, h: int = 32, w: int = 32, bands: int = 8,
                         n_heldout: int = 2) -> ToyDataset:
    if h % 4 or w % 4:
        raise ValueError(f"scene extents {h}x{w} must be divisible by 4")
    if not 0 <= n_heldout < n_scenes:
        raise ValueError("need at least one training scene")
    rng = make_rng(seed, STREAM_DATA)
    wl = default_wavelengths(bands)
    cubes = [SpectralCube(generate_scene(rng, h, w, bands), wl) for _ in range(n_scenes)]
    # held-out scenes come first so they do not depend on n_scenes
    return ToyDataset(cubes[n_heldout:], cubes[:n_heldout], seed)


def toy_mask(seed: int, h: int, w: int) -> np.ndarray:
    return random_mask(h, w, make_rng(seed, STREAM_MASK))


def adjacent_band_correlation(cube: np.ndarray) -> float:
    cube = np.asarray(cube)
    cs = [np.corrcoef(cube[:, :, b].ravel(), cube[:, :, b + 1].ravel())[0, 1] for b in range(cube.shape[2] - 1)]
    return float(np.mean(cs))


AUGMENTATIONS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270", "rot90_flip", "rot270_flip")


def apply_augmentation(arr: np.ndarray, kind: str) -> np.ndarray:
    """Apply one of :data:`AUGMENTATIONS` to the two leading (spatial) axes."""
    if kind == "identity":
        return arr.copy()
    if kind == "hflip":
        return arr[:, ::-1].copy()
    if kind == "vflip":
        return arr[::-1].copy()
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"rotation needs a square patch, got {arr.shape[:2]}")
    if kind == "rot90":
        return np.rot90(arr, 1).copy()
    if kind == "rot180":
        return np.rot90(arr, 2).copy()
    if kind == "rot270":
        return np.rot90(arr, 3).copy()
    if kind == "rot90_flip":
        return np.rot90(arr, 1)[:, ::-1].copy()
    if kind == "rot270_flip":
        return np.rot90(arr, 3)[:, ::-1].copy()
    raise ValueError(f"unknown augmentation {kind!r}")


def augment(cube: np.ndarray, rng, mask: np.ndarray | None = None):
    """Random dihedral transform; a mask, if given, gets the same transform."""
    cube = np.asarray(cube)
    kind = AUGMENTATIONS[int(rng.integers(len(AUGMENTATIONS)))]
    if kind.startswith("rot") and cube.shape[0] != cube.shape[1]:
        raise ValueError(f"rotation needs a square patch, got {cube.shape[:2]}")
    out = apply_augmentation(cube, kind)
    if mask is None:
        return out
    return out, apply_augmentation(mask, kind)


def random_crop(cube: np.ndarray, size: int, rng) -> np.ndarray:
    h, w = cube.shape[:2]
    if size > min(h, w):
        raise ValueError(f"patch {size} larger than scene {h}x{w}")
    i = int(rng.integers(0, h - size + 1))
    j = int(rng.integers(0, w - size + 1))
    return cube[i:i + size, j:j + size]
