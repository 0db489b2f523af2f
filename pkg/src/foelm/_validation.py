"""Input checks shared by the estimator wrappers."""

import numbers

import numpy as np

from .model import FoeModel, load_model


def check_images(X):
    """Return ``(stack, was_single)`` with ``stack`` of shape (n, height, width)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (2, 3):
        raise ValueError(f"expected an image (2-D) or a stack of images (3-D), got {X.ndim}-D input")
    if 0 in X.shape:
        raise ValueError(f"empty input of shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    if X.ndim == 2:
        return X[None], True
    return X, False


def check_sigma(sigma):
    if not isinstance(sigma, numbers.Real) or not np.isfinite(sigma) or sigma <= 0:
        raise ValueError(f"sigma must be a positive finite number, got {sigma!r}")
    return float(sigma)


def check_model(model):
    if isinstance(model, FoeModel):
        return model
    if isinstance(model, str):
        return load_model(model)
    raise TypeError(f"model must be a FoeModel, builtin name or path, got {type(model).__name__}")
