"""Coded-aperture snapshot spectral imaging: physics, a deep-unfolding reconstructor, and tooling."""
from .physics import SensingOperator, SpectralCube, initial_estimate, shot_noise
from .dst import DST, DSTConfig
from .unfolding import UnfoldingModel
from .baselines import TVSolverConfig, pgd_tv_reconstruct
from .metrics import MetricReport, charbonnier_loss, cube_ssim, psnr, ssim, spectral_correlation
from .config import ExperimentConfig

__version__ = "0.1.0"

__all__ = [
    "SensingOperator", "SpectralCube", "initial_estimate", "shot_noise",
    "DST", "DSTConfig", "UnfoldingModel",
    "TVSolverConfig", "pgd_tv_reconstruct",
    "MetricReport", "charbonnier_loss", "cube_ssim", "psnr", "ssim", "spectral_correlation",
    "ExperimentConfig",
]
