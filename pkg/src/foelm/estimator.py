"""scikit-learn style wrappers so denoising composes with pipelines.

Images are 2-D arrays ``(height, width)``; stacks of equally sized images
are 3-D arrays ``(n_images, height, width)``.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_model, check_sigma
from .energy import Problem
from .image import Image, NoiseSpec, add_gaussian_noise, clamp_round, psnr
from .optimizer import LmOptions, lm_denoise

__all__ = ["FoeDenoiser", "GaussianNoise"]


class FoeDenoiser(TransformerMixin, BaseEstimator):
    """MAP denoiser under a Fields-of-Experts prior.

    ``fit`` only validates and resolves the model (the filter bank is not
    learned). ``transform`` runs Levenberg-Marquardt from each noisy image.

    Parameters
    ----------
    model : FoeModel or str, default="diff2x2"
        Filter bank, builtin name, or path to an FOE file.
    sigma : float, default=20.0
        Noise standard deviation.
    max_iterations, function_tolerance, gradient_tolerance, initial_damping
        Forwarded to :class:`~foelm.optimizer.LmOptions`.
    round_output : bool, default=False
        Round results to integers in [0, 255].

    Attributes
    ----------
    model_ : FoeModel
    reports_ : list of SolveReport
        One per image of the last ``transform`` call.
    """

    def __init__(self, model="diff2x2", sigma=20.0, max_iterations=100, function_tolerance=1e-6,
                 gradient_tolerance=1e-10, initial_damping=1e-4, round_output=False):
        self.model = model
        self.sigma = sigma
        self.max_iterations = max_iterations
        self.function_tolerance = function_tolerance
        self.gradient_tolerance = gradient_tolerance
        self.initial_damping = initial_damping
        self.round_output = round_output

    def fit(self, X=None, y=None):
        self.sigma_ = check_sigma(self.sigma)
        self.model_ = check_model(self.model)
        self.options_ = LmOptions(
            max_iterations=self.max_iterations,
            function_tolerance=self.function_tolerance,
            gradient_tolerance=self.gradient_tolerance,
            initial_damping=self.initial_damping,
        )
        if X is not None:
            check_images(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        stack, single = check_images(X)
        out = np.empty_like(stack)
        self.reports_ = []
        for i, noisy in enumerate(stack):
            x, report = lm_denoise(Problem(Image(noisy), self.model_, self.sigma_), opts=self.options_)
            if self.round_output:
                x = clamp_round(x)
            out[i] = x.pixels
            self.reports_.append(report)
        return out[0] if single else out

    def score(self, X, y):
        """Mean PSNR (dB) of the denoised ``X`` against clean ``y``; identical
        images count as 100 dB so the mean stays finite."""
        clean, _ = check_images(y)
        denoised, _ = check_images(self.transform(X))
        values = [psnr(Image(d), Image(c)) for d, c in zip(denoised, clean)]
        return float(np.mean([100.0 if math.isinf(v) else v for v in values]))


class GaussianNoise(TransformerMixin, BaseEstimator):
    """Add seeded N(0, sigma**2) noise; image ``i`` of a stack uses ``seed + i``."""

    def __init__(self, sigma=20.0, seed=0, clamp=False):
        self.sigma = sigma
        self.seed = seed
        self.clamp = clamp

    def fit(self, X=None, y=None):
        self.sigma_ = check_sigma(self.sigma)
        return self

    def transform(self, X):
        check_is_fitted(self, "sigma_")
        stack, single = check_images(X)
        out = np.empty_like(stack)
        for i, img in enumerate(stack):
            noisy = add_gaussian_noise(Image(img), NoiseSpec(self.sigma_, self.seed + i))
            out[i] = (clamp_round(noisy) if self.clamp else noisy).pixels
        return out[0] if single else out
