"""The Fields-of-Experts denoising energy and its least-squares form.

For a noisy image ``u`` and candidate ``x``::

    f(x) = sum_i (x_i - u_i)**2 / (2 sigma**2)
         + sum_P sum_k alpha_k * log(1 + (b_k . x_P)**2 / 2)

where ``P`` runs over every ``m x m`` window lying fully inside the image
(no padding, no wraparound). Written as ``sum rho(r**2)`` it has one
identity-loss residual ``(x_i - u_i) / (sqrt(2) sigma)`` per pixel and one
log-loss residual ``b_k . x_P`` per (window, expert).

Gradient convention: ``assemble_normal_system`` returns ``g = J~^T r~``
built from corrected residuals, and ``gradient(problem, x) == 2 * g``.
"""

from dataclasses import dataclass
import math
from typing import NamedTuple

import numpy as np

from .exceptions import DimensionError, NumericalStateError
from .image import Image
from .linalg import GridSystem, stencil_offsets
from .loss import IDENTITY, LossDescriptor, foe_rho, foe_rho1
from .model import FoeModel

__all__ = [
    "Problem",
    "PatchIndex",
    "EnergyBreakdown",
    "patch_set",
    "filter_responses",
    "energy",
    "objective",
    "objective_extended",
    "residual_blocks",
    "gradient",
    "normal_equations",
    "damping_scale",
    "assemble_normal_system",
    "DIAG_MIN",
    "DIAG_MAX",
]

DIAG_MIN = 1e-12
DIAG_MAX = 1e32


class PatchIndex(NamedTuple):
    top: int
    left: int


@dataclass(frozen=True)
class EnergyBreakdown:
    data_term: float
    prior_term: float
    total: float


@dataclass(frozen=True)
class Problem:
    """Noisy observation, prior and noise level."""

    noisy: Image
    model: FoeModel
    sigma: float

    def __post_init__(self):
        if not isinstance(self.noisy, Image):
            object.__setattr__(self, "noisy", Image(self.noisy))
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        m = self.model.m
        if self.model.K > 0 and (self.noisy.width < m or self.noisy.height < m):
            raise DimensionError(
                f"{self.noisy.width}x{self.noisy.height} image has no {m}x{m} patch; the prior would be empty"
            )

    @property
    def shape(self):
        return self.noisy.shape

    @property
    def n(self) -> int:
        return self.noisy.size


def patch_set(width: int, height: int, m: int):
    """All interior ``m x m`` windows, row-major (top outer, left inner)."""
    if m > width or m > height:
        raise DimensionError(f"{m}x{m} patch does not fit in a {width}x{height} image")
    return [PatchIndex(t, l) for t in range(height - m + 1) for l in range(width - m + 1)]


def _pixels(problem: Problem, x) -> np.ndarray:
    px = x.pixels if isinstance(x, Image) else np.asarray(x)
    if px.dtype.kind != "f":
        px = px.astype(np.float64)
    if px.shape != problem.shape:
        if px.ndim == 1 and px.size == problem.n:
            return px.reshape(problem.shape)
        raise DimensionError(f"candidate shape {px.shape} does not match noisy image {problem.shape}")
    return px


def filter_responses(model: FoeModel, px: np.ndarray) -> np.ndarray:
    """``out[k, t, l] = b_k . x_P`` for the window at ``(t, l)``."""
    m, K = model.m, model.K
    h, w = px.shape
    P, Q = h - m + 1, w - m + 1
    out = np.zeros((K, max(P, 0), max(Q, 0)), dtype=np.result_type(px.dtype, np.float64))
    if K == 0 or P <= 0 or Q <= 0:
        return out
    for a in range(m):
        for c in range(m):
            out += model.filters[:, a, c, None, None] * px[None, a : a + P, c : c + Q]
    return out


def _scatter(model: FoeModel, weights: np.ndarray, shape) -> np.ndarray:
    """Adjoint of :func:`filter_responses`: sum_k sum_P weights[k, P] b_k placed at P."""
    m = model.m
    out = np.zeros(shape)
    if model.K == 0:
        return out
    P, Q = weights.shape[1:]
    for a in range(m):
        for c in range(m):
            out[a : a + P, c : c + Q] += np.tensordot(model.filters[:, a, c], weights, axes=1)
    return out


def _terms(problem, px, dtype=np.float64):
    px = px.astype(dtype, copy=False)
    u = problem.noisy.pixels.astype(dtype)
    data = np.sum((px - u) ** 2) / (2 * dtype(problem.sigma) ** 2)
    prior = dtype(0)
    if problem.model.K:
        resp = filter_responses(problem.model, px)
        alphas = problem.model.alphas[:, None, None]
        prior = np.sum(foe_rho(alphas, resp * resp))
    return data, prior


def energy(problem: Problem, x) -> EnergyBreakdown:
    data, prior = _terms(problem, _pixels(problem, x))
    data, prior = float(data), float(prior)
    return EnergyBreakdown(data, prior, data + prior)


def objective(problem: Problem, x) -> float:
    return energy(problem, x).total


def objective_extended(problem: Problem, x) -> np.longdouble:
    """The energy evaluated in ``np.longdouble`` (80-bit on x86 Linux).

    Used by finite-difference checks, where cancellation in
    ``f(x + h) - f(x - h)`` would otherwise swamp small derivatives.
    """
    data, prior = _terms(problem, _pixels(problem, x), np.longdouble)
    return data + prior


def residual_blocks(problem: Problem, x):
    """Yield ``(block_id, residual, LossDescriptor)`` for every scalar block.

    Data blocks come first with ids ``("data", i)`` for pixel ``i`` in
    row-major order; prior blocks follow with ids
    ``("prior", PatchIndex, k)``, windows row-major and experts inner.
    """
    px = _pixels(problem, x)
    scale = math.sqrt(2.0) * problem.sigma
    identity = LossDescriptor(IDENTITY)
    for i, (xi, ui) in enumerate(zip(px.ravel(), problem.noisy.data)):
        yield ("data", i), float((xi - ui) / scale), identity
    model = problem.model
    if model.K == 0:
        return
    losses = [LossDescriptor.foe_log(a) for a in model.alphas]
    resp = filter_responses(model, px)
    h, w = px.shape
    for patch in patch_set(w, h, model.m):
        for k in range(model.K):
            yield ("prior", patch, k), float(resp[k, patch.top, patch.left]), losses[k]


def gradient(problem: Problem, x) -> np.ndarray:
    """Analytic gradient of the energy, flattened row-major."""
    px = _pixels(problem, x)
    grad = (px - problem.noisy.pixels) / problem.sigma**2
    model = problem.model
    if model.K:
        resp = filter_responses(model, px)
        psi = model.alphas[:, None, None] * resp / (1.0 + 0.5 * resp * resp)
        grad = grad + _scatter(model, psi, px.shape)
    return grad.ravel()


def normal_equations(problem: Problem, x) -> GridSystem:
    """Undamped Gauss-Newton system ``J~^T J~`` with rhs ``g = J~^T r~``.

    Each log-loss block is corrected by ``sqrt(rho1)``, so it contributes
    ``rho1 * b b^T`` to the matrix and ``rho1 * r * b`` to ``g``.
    """
    px = _pixels(problem, x)
    model = problem.model
    h, w = px.shape
    m = model.m
    band = m - 1 if model.K else 0
    offsets = stencil_offsets(band)
    values = np.zeros((len(offsets), h, w))
    inv2s2 = 1.0 / (2.0 * problem.sigma**2)
    values[0] += inv2s2
    rhs = (px - problem.noisy.pixels) * inv2s2

    if model.K:
        resp = filter_responses(model, px)
        rho1 = foe_rho1(model.alphas[:, None, None], resp * resp)
        rhs = rhs + _scatter(model, rho1 * resp, px.shape)
        P, Q = resp.shape[1:]
        where = {off: o for o, off in enumerate(offsets)}
        b = model.filters.reshape(model.K, m * m)
        for i in range(m * m):
            a1, c1 = divmod(i, m)
            for j in range(m * m):
                a2, c2 = divmod(j, m)
                o = where.get((a2 - a1, c2 - c1))
                if o is None:
                    continue
                coef = b[:, i] * b[:, j]
                if not coef.any():
                    continue
                values[o, a1 : a1 + P, c1 : c1 + Q] += np.tensordot(coef, rho1, axes=1)

    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(rhs))):
        raise NumericalStateError("non-finite residuals or Jacobian entries while assembling")
    return GridSystem(w, h, band, values, rhs.ravel())


def damping_scale(system: GridSystem) -> np.ndarray:
    """Marquardt scaling: ``diag(J~^T J~)`` clamped to [1e-12, 1e32]."""
    return np.clip(system.diagonal, DIAG_MIN, DIAG_MAX)


def assemble_normal_system(problem: Problem, x, damping: float = 0.0) -> GridSystem:
    """``H = J~^T J~ + damping * D`` and ``g = J~^T r~`` at ``x``."""
    if not damping >= 0:
        raise ValueError(f"damping must be >= 0, got {damping}")
    system = normal_equations(problem, x)
    if damping == 0:
        return system
    return system.with_damping(damping, damping_scale(system))
