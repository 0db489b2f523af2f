"""Levenberg-Marquardt on the corrected normal equations, plus a
steepest-descent baseline and a finite-difference gradient check."""

from dataclasses import dataclass, field
import csv
import io
import logging
import math
import time

import numpy as np

from .energy import Problem, damping_scale, gradient, normal_equations, objective, objective_extended
from .exceptions import IndefiniteSystemError, NumericalStateError
from .image import Image
from .linalg import solve_spd

__all__ = [
    "LmOptions",
    "BacktrackingRule",
    "IterationRecord",
    "SolveReport",
    "lm_denoise",
    "gd_denoise",
    "check_gradient",
]

log = logging.getLogger(__name__)

FUNCTION_TOL = "function_tol"
GRADIENT_TOL = "gradient_tol"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class LmOptions:
    """Solver settings.

    ``function_tolerance`` bounds the relative objective decrease of an
    accepted step; ``gradient_tolerance`` bounds ``max|grad f|`` relative to
    its value at the starting point. ``max_iterations`` counts accepted and
    rejected steps alike.
    """

    max_iterations: int = 100
    function_tolerance: float = 1e-6
    gradient_tolerance: float = 1e-10
    initial_damping: float = 1e-4
    damping_increase: float = 2.0
    min_damping: float = 1e-32
    max_damping: float = 1e32
    linear_tol: float = 1e-9
    linear_solver: str = "cg"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("function_tolerance", "gradient_tolerance", "initial_damping", "linear_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.damping_increase > 1:
            raise ValueError("damping_increase must exceed 1")
        if not 0 < self.min_damping <= self.max_damping:
            raise ValueError("need 0 < min_damping <= max_damping")


@dataclass(frozen=True)
class BacktrackingRule:
    c: float = 1e-4
    shrink: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 40


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    step_norm: float
    damping: float
    accepted: bool
    seconds: float


@dataclass
class SolveReport:
    """Per-iteration trace of one solve.

    ``iterations[i].objective`` is the objective after step ``i`` was
    accepted, or the unchanged current objective when it was rejected.
    """

    initial_objective: float
    iterations: list = field(default_factory=list)
    final_objective: float = math.nan
    termination: str = MAX_ITER
    wall_seconds: float = 0.0
    initial_gradient_norm: float = math.nan
    final_gradient_norm: float = math.nan
    message: str = ""

    @property
    def accepted_objectives(self):
        return [self.initial_objective] + [r.objective for r in self.iterations if r.accepted]

    @property
    def n_accepted(self) -> int:
        return sum(r.accepted for r in self.iterations)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "objective", "step_norm", "damping", "accepted", "seconds"])
        for r in self.iterations:
            writer.writerow(
                [r.iteration, f"{r.objective:.17g}", f"{r.step_norm:.17g}", f"{r.damping:.17g}", int(r.accepted), f"{r.seconds:.6f}"]
            )
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _start(problem, x0):
    if x0 is None:
        x0 = problem.noisy
    px = x0.pixels if isinstance(x0, Image) else np.asarray(x0, dtype=np.float64)
    if px.shape != problem.shape:
        raise ValueError(f"initial point shape {px.shape} does not match {problem.shape}")
    return px.ravel().copy()


def lm_denoise(problem: Problem, x0=None, opts: LmOptions = None):
    """Minimise the FoE energy with Levenberg-Marquardt.

    Each iteration solves ``(J~^T J~ + lambda D) delta = -g`` with
    ``D = clamp(diag(J~^T J~))`` and accepts the step iff the objective
    strictly decreases. Damping follows Nielsen's rule: on acceptance
    ``lambda *= max(1/3, 1 - (2 rho - 1)**3)`` where ``rho`` is the ratio of
    actual to predicted decrease; on rejection ``lambda *= nu`` and ``nu``
    doubles. The Jacobian is only rebuilt after accepted steps.

    Parameters
    ----------
    problem : Problem
    x0 : Image or ndarray, optional
        Starting point; defaults to the noisy image.
    opts : LmOptions, optional

    Returns
    -------
    x : Image
    report : SolveReport
    """
    opts = opts or LmOptions()
    t0 = time.perf_counter()
    x = _start(problem, x0)
    shape = problem.shape
    f = objective(problem, x)
    if not math.isfinite(f):
        raise NumericalStateError("objective is not finite at the initial point")
    grad = gradient(problem, x)
    gnorm0 = float(np.max(np.abs(grad)))
    report = SolveReport(initial_objective=f, initial_gradient_norm=gnorm0, final_gradient_norm=gnorm0)

    def finish(termination, message=""):
        report.termination = termination
        report.message = message
        report.final_objective = f
        report.final_gradient_norm = float(np.max(np.abs(grad)))
        report.wall_seconds = time.perf_counter() - t0
        log.debug("lm: %s after %d steps, f=%.12g", termination, len(report.iterations), f)
        return Image(x.reshape(shape)), report

    if gnorm0 == 0.0:
        return finish(GRADIENT_TOL, "initial point is stationary")

    lam = min(max(opts.initial_damping, opts.min_damping), opts.max_damping)
    nu = opts.damping_increase
    system = normal_equations(problem, x)
    scale = damping_scale(system)

    for it in range(1, opts.max_iterations + 1):
        lam_used = lam
        try:
            delta = solve_spd(system.with_damping(lam, scale), opts.linear_tol, opts.linear_solver).solution
        except IndefiniteSystemError as exc:
            delta = None
            log.debug("lm: linear solve failed at damping %g: %s", lam, exc)

        accepted = False
        step_norm = math.nan
        if delta is not None:
            step_norm = float(np.linalg.norm(delta))
            x_new = x + delta
            f_new = objective(problem, x_new)
            if math.isfinite(f_new) and f_new < f:
                predicted = float(delta @ (lam * scale * delta - system.rhs))
                gain = (f - f_new) / predicted if predicted > 0 else 0.0
                accepted = True

        if accepted:
            f_old = f
            x, f = x_new, f_new
            lam = lam * max(1.0 / 3.0, 1.0 - (2.0 * gain - 1.0) ** 3)
            lam = min(max(lam, opts.min_damping), opts.max_damping)
            nu = opts.damping_increase
            report.iterations.append(IterationRecord(it, f, step_norm, lam_used, True, time.perf_counter() - t0))
            grad = gradient(problem, x)
            if float(np.max(np.abs(grad))) <= opts.gradient_tolerance * gnorm0:
                return finish(GRADIENT_TOL)
            if f_old - f <= opts.function_tolerance * abs(f_old):
                return finish(FUNCTION_TOL)
            try:
                system = normal_equations(problem, x)
            except NumericalStateError as exc:
                return finish(NUMERICAL_FAILURE, str(exc))
            scale = damping_scale(system)
        else:
            report.iterations.append(IterationRecord(it, f, step_norm, lam_used, False, time.perf_counter() - t0))
            if lam >= opts.max_damping:
                return finish(NUMERICAL_FAILURE, "no acceptable step at maximum damping")
            lam = min(lam * nu, opts.max_damping)
            nu *= 2.0
    return finish(MAX_ITER)


def gd_denoise(problem: Problem, x0=None, step_rule: BacktrackingRule = None, max_iterations: int = 100):
    """Steepest descent with Armijo backtracking; same report as :func:`lm_denoise`.

    Every iteration restarts from ``step_rule.initial_step``. Stops early
    when the gradient vanishes or no step of the backtracking sequence
    satisfies the sufficient-decrease condition.
    """
    rule = step_rule or BacktrackingRule()
    t0 = time.perf_counter()
    x = _start(problem, x0)
    f = objective(problem, x)
    grad = gradient(problem, x)
    gnorm0 = float(np.max(np.abs(grad)))
    report = SolveReport(initial_objective=f, initial_gradient_norm=gnorm0)
    termination = MAX_ITER
    for it in range(1, max_iterations + 1):
        gg = float(grad @ grad)
        if gg == 0.0:
            termination = GRADIENT_TOL
            break
        t = rule.initial_step
        for _ in range(rule.max_backtracks + 1):
            x_new = x - t * grad
            f_new = objective(problem, x_new)
            if math.isfinite(f_new) and f_new <= f - rule.c * t * gg:
                break
            t *= rule.shrink
        else:
            termination = FUNCTION_TOL
            break
        step_norm = t * math.sqrt(gg)
        x, f = x_new, f_new
        grad = gradient(problem, x)
        report.iterations.append(IterationRecord(it, f, step_norm, t, True, time.perf_counter() - t0))
    report.termination = termination
    report.final_objective = f
    report.final_gradient_norm = float(np.max(np.abs(grad)))
    report.wall_seconds = time.perf_counter() - t0
    return Image(x.reshape(problem.shape)), report


def check_gradient(problem: Problem, x, h: float = 1e-5, extended: bool = True) -> float:
    """Worst ``|a - fd| / max(|a|, |fd|, 1e-8)`` over all pixels, comparing
    the analytic gradient with central differences of step ``h``.

    With ``extended`` the differenced energies are evaluated in
    ``np.longdouble``; the analytic gradient is always double precision.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    px = x.pixels if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    base = px.ravel().astype(np.float64)
    analytic = gradient(problem, base)
    f = objective_extended if extended else objective
    dtype = np.longdouble if extended else np.float64
    probe = base.astype(dtype)
    step = dtype(h)
    worst = 0.0
    for i in range(base.size):
        probe[i] = base[i] + step
        fp = f(problem, probe)
        probe[i] = base[i] - step
        fm = f(problem, probe)
        probe[i] = base[i]
        fd = float((fp - fm) / (2 * step))
        a = float(analytic[i])
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst
