"""Symmetric grid-stencil systems ``H x = -g`` and their solvers.

Pixels are numbered row-major. A system with coupling radius ``band``
stores, for each canonical offset ``(dr, dc)`` (``dr > 0``, or ``dr == 0``
and ``dc >= 0``, with ``|dr|, |dc| <= band``), one coefficient per pixel:
``values[o, r, c] = H[(r, c), (r + dr, c + dc)]``. The lower triangle is
implied by symmetry; coefficients whose partner pixel falls off the grid
are structurally zero.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .exceptions import DimensionError, IndefiniteSystemError

__all__ = ["stencil_offsets", "GridSystem", "SolveOutcome", "matvec", "solve_spd"]

_TINY = np.finfo(np.float64).tiny


def stencil_offsets(band: int):
    return [(dr, dc) for dr in range(band + 1) for dc in range(-band, band + 1) if dr > 0 or dc >= 0]


def _overlap(n, d):
    """Source slice ``s`` and partner slice ``s + d`` along one axis of length ``n``."""
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


@dataclass(frozen=True, eq=False)
class GridSystem:
    """Stencil-stored symmetric matrix plus right-hand side ``g``.

    ``values`` has shape ``(len(stencil_offsets(band)), height, width)``.
    """

    width: int
    height: int
    band: int
    values: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        offsets = stencil_offsets(self.band)
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (len(offsets), self.height, self.width):
            raise DimensionError(
                f"stencil values have shape {values.shape}, expected {(len(offsets), self.height, self.width)}"
            )
        rhs = np.array(self.rhs, dtype=np.float64).reshape(-1)
        if rhs.size != self.width * self.height:
            raise DimensionError("rhs length does not match grid")
        # zero the coefficients that would couple to pixels off the grid
        for o, (dr, dc) in enumerate(offsets):
            if dr:
                values[o, self.height - dr :, :] = 0.0
            if dc > 0:
                values[o, :, self.width - dc :] = 0.0
            elif dc < 0:
                values[o, :, :-dc] = 0.0
        values.setflags(write=False)
        rhs.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rhs", rhs)

    @property
    def n(self) -> int:
        return self.width * self.height

    @property
    def offsets(self):
        return stencil_offsets(self.band)

    @property
    def diagonal(self) -> np.ndarray:
        return self.values[0].ravel()

    @classmethod
    def identity(cls, width, height, rhs=None, band=0):
        values = np.zeros((len(stencil_offsets(band)), height, width))
        values[0] = 1.0
        return cls(width, height, band, values, np.zeros(width * height) if rhs is None else rhs)

    @classmethod
    def from_dense(cls, H, width, height, band, rhs):
        """Pick the stencil entries out of a dense matrix (testing helper)."""
        H = np.asarray(H, dtype=np.float64)
        offsets = stencil_offsets(band)
        values = np.zeros((len(offsets), height, width))
        for o, (dr, dc) in enumerate(offsets):
            for r in range(height):
                for c in range(width):
                    r2, c2 = r + dr, c + dc
                    if 0 <= r2 < height and 0 <= c2 < width:
                        values[o, r, c] = H[r * width + c, r2 * width + c2]
        return cls(width, height, band, values, rhs)

    def with_damping(self, damping, scale):
        """Return ``H + damping * diag(scale)`` with the same rhs."""
        values = self.values.copy()
        values[0] += damping * np.asarray(scale).reshape(self.height, self.width)
        return GridSystem(self.width, self.height, self.band, values, self.rhs)

    def to_dia(self) -> scipy.sparse.dia_matrix:
        """Both triangles as diagonals of the row-major ordering."""
        n, w = self.n, self.width
        diags = {}
        for o, (dr, dc) in enumerate(self.offsets):
            d = dr * w + dc
            coef = self.values[o].ravel()[: n - d]
            # offsets only collide when width <= band, and then carry zeros
            diags.setdefault(d, np.zeros(n))[d:] += coef
            if d:
                diags.setdefault(-d, np.zeros(n))[: n - d] += coef
        keys = sorted(diags)
        return scipy.sparse.dia_matrix((np.array([diags[k] for k in keys]), keys), shape=(n, n))

    def to_sparse(self) -> scipy.sparse.csr_matrix:
        rows, cols, vals = [], [], []
        idx = np.arange(self.n).reshape(self.height, self.width)
        for o, (dr, dc) in enumerate(self.offsets):
            rs, rp = _overlap(self.height, dr)
            cs, cp = _overlap(self.width, dc)
            i = idx[rs, cs].ravel()
            j = idx[rp, cp].ravel()
            v = self.values[o][rs, cs].ravel()
            rows.append(i)
            cols.append(j)
            vals.append(v)
            if (dr, dc) != (0, 0):
                rows.append(j)
                cols.append(i)
                vals.append(v)
        return scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()


@dataclass(frozen=True)
class SolveOutcome:
    solution: np.ndarray
    iterations: int
    residual_norm_rel: float
    method: str = "cg"


def matvec(system: GridSystem, v) -> np.ndarray:
    """``H @ v`` applied through the stencil."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (system.n,):
        raise DimensionError(f"vector has shape {v.shape}, expected ({system.n},)")
    h, w = system.height, system.width
    V = v.reshape(h, w)
    out = system.values[0] * V
    for o, (dr, dc) in enumerate(system.offsets[1:], start=1):
        rs, rp = _overlap(h, dr)
        cs, cp = _overlap(w, dc)
        coef = system.values[o][rs, cs]
        out[rs, cs] += coef * V[rp, cp]
        out[rp, cp] += coef * V[rs, cs]
    return out.ravel()


def _pcg(system, b, tol, max_iter):
    op = system.to_dia()
    inv_diag = 1.0 / system.diagonal
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = max(np.linalg.norm(b), _TINY)
    if np.linalg.norm(r) <= tol * bnorm:
        return x, 0
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Hp = op @ p
        curv = p @ Hp
        if not curv > 0:
            raise IndefiniteSystemError(f"non-positive curvature {curv:g} at CG iteration {it}")
        step = rz / curv
        x += step * p
        r -= step * Hp
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise IndefiniteSystemError(f"CG did not reach tol={tol:g} within {max_iter} iterations")


def _banded(system, b):
    # upper band storage of the row-major ordering; bandwidth band*(width+1)
    w = system.width
    u = system.band * (w + 1)
    n = system.n
    ab = np.zeros((u + 1, n))
    for o, (dr, dc) in enumerate(system.offsets):
        d = dr * w + dc
        if d > u or d < 0:
            continue
        # entry H[i, i+d] lives at ab[u - d, i + d]
        coef = system.values[o].ravel()
        ab[u - d, d:] += coef[: n - d]
    try:
        return scipy.linalg.solveh_banded(ab, b, lower=False, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteSystemError(f"banded Cholesky failed: {exc}") from exc


def solve_spd(system: GridSystem, tol: float = 1e-9, method: str = "cg", max_iter=None) -> SolveOutcome:
    """Solve ``H @ x = -g`` for the system's rhs ``g``.

    Parameters
    ----------
    system : GridSystem
    tol : float
        Required bound on ``||H x + g|| / ||g||``, checked after solving for
        either method.
    method : {"cg", "banded"}
        Jacobi-preconditioned conjugate gradients (linear cost per
        iteration), or a banded Cholesky factorisation (exact, but its cost
        grows with the square of the image width).
    max_iter : int, optional
        CG iteration cap, default ``10 * n``.

    Raises
    ------
    IndefiniteSystemError
        Non-positive diagonal or curvature, factorisation failure, or the
        residual bound was not met.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    diag = system.diagonal
    if not np.all(diag > 0):
        raise IndefiniteSystemError("system diagonal is not strictly positive")
    b = -system.rhs
    if system.n == 1:
        x = b / diag
        iters = 1
    elif method == "cg":
        # the recurrence residual drifts from the true one; aim below tol
        x, iters = _pcg(system, b, 0.5 * tol, 10 * system.n if max_iter is None else max_iter)
    elif method == "banded":
        x = _banded(system, b)
        iters = 1
    else:
        raise ValueError(f"unknown method {method!r}")
    resid = np.linalg.norm(matvec(system, x) - b) / max(np.linalg.norm(b), _TINY)
    if not resid <= tol:
        raise IndefiniteSystemError(f"residual {resid:.3g} exceeds tolerance {tol:g}")
    return SolveOutcome(x, iters, float(resid), method)
