"""Fields-of-Experts MAP denoising as robustified nonlinear least squares,
solved with Levenberg-Marquardt on grid-banded normal equations."""

__version__ = "0.1.0"

from .energy import EnergyBreakdown, Problem, energy, gradient, residual_blocks
from .estimator import FoeDenoiser, GaussianNoise
from .image import Image, NoiseSpec, add_gaussian_noise, clamp_round, psnr, read_pgm, synthetic_image, write_pgm
from .model import FoeModel, builtin_model, parse_model, random_model, serialize_model
from .optimizer import LmOptions, SolveReport, check_gradient, gd_denoise, lm_denoise

__all__ = [
    "EnergyBreakdown",
    "FoeDenoiser",
    "FoeModel",
    "GaussianNoise",
    "Image",
    "LmOptions",
    "NoiseSpec",
    "Problem",
    "SolveReport",
    "add_gaussian_noise",
    "builtin_model",
    "check_gradient",
    "clamp_round",
    "energy",
    "gd_denoise",
    "gradient",
    "lm_denoise",
    "parse_model",
    "psnr",
    "random_model",
    "read_pgm",
    "residual_blocks",
    "serialize_model",
    "synthetic_image",
    "write_pgm",
]
