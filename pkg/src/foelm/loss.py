"""Robust losses applied to squared residual norms, and the corrector that
lets plain Gauss-Newton machinery minimise ``sum rho(r**2)``.

All residual blocks here are scalar, so the corrector reduces to scaling
the residual and its Jacobian row by two numbers.
"""

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "IDENTITY",
    "FOE_LOG",
    "LossDescriptor",
    "CorrectedBlock",
    "rho",
    "rho_derivatives",
    "correct",
    "corrector",
    "foe_rho",
    "foe_rho1",
    "foe_rho2",
]

IDENTITY = "identity"
FOE_LOG = "foe_log"


@dataclass(frozen=True)
class LossDescriptor:
    kind: str = IDENTITY
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in (IDENTITY, FOE_LOG):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == FOE_LOG and not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"foe_log loss needs alpha > 0, got {self.alpha}")

    @classmethod
    def foe_log(cls, alpha):
        return cls(FOE_LOG, float(alpha))


@dataclass(frozen=True)
class CorrectedBlock:
    residual: float
    jacobian_scale: float


# Vectorised kernels for rho(s) = alpha * log(1 + s/2); shared with the
# energy module so both evaluate the same floating-point expressions.
def foe_rho(alpha, s):
    return alpha * np.log1p(0.5 * s)


def foe_rho1(alpha, s):
    return alpha / (2.0 + s)


def foe_rho2(alpha, s):
    d = 2.0 + s
    return -alpha / d / d


def _check_s(s):
    if not s >= 0:
        raise ValueError(f"loss argument must be >= 0, got {s}")


def rho(desc: LossDescriptor, s: float) -> float:
    _check_s(s)
    if desc.kind == IDENTITY:
        return float(s)
    return float(foe_rho(desc.alpha, s))


def rho_derivatives(desc: LossDescriptor, s: float):
    """First and second derivative of ``rho`` with respect to ``s``."""
    _check_s(s)
    if desc.kind == IDENTITY:
        return 1.0, 0.0
    return float(foe_rho1(desc.alpha, s)), float(foe_rho2(desc.alpha, s))


def corrector(residual: float, rho1: float, rho2: float) -> CorrectedBlock:
    """Rescale a scalar residual so that ``r~ * J~ = rho1 * r * J``.

    For ``rho2 <= 0`` (or ``r == 0``) this is the plain ``sqrt(rho1)``
    weighting. For convex losses the residual is additionally stretched by
    ``1 / (1 - a)`` and the Jacobian shrunk by ``(1 - a)`` where
    ``a = 1 - sqrt(1 + 2 s rho2 / rho1)``, which folds the loss curvature
    into the Gauss-Newton model.
    """
    s = residual * residual
    sqrt_rho1 = math.sqrt(rho1)
    if s == 0.0 or rho2 <= 0.0:
        return CorrectedBlock(sqrt_rho1 * residual, sqrt_rho1)
    one_minus_a = math.sqrt(1.0 + 2.0 * s * rho2 / rho1)
    return CorrectedBlock(sqrt_rho1 / one_minus_a * residual, sqrt_rho1 * one_minus_a)


def correct(desc: LossDescriptor, residual: float) -> CorrectedBlock:
    if not math.isfinite(residual):
        raise ValueError(f"residual must be finite, got {residual}")
    if desc.kind == IDENTITY:
        return CorrectedBlock(float(residual), 1.0)
    rho1, rho2 = rho_derivatives(desc, residual * residual)
    # the log loss is concave everywhere, so only the first-order branch
    # applies; rho2 may underflow to -0.0 for huge s
    assert rho2 <= 0.0, "foe_log loss must be concave"
    return corrector(residual, rho1, rho2)
