"""Command-line interface: ``foelm <command> ...`` (or ``python -m foelm``)."""

import argparse
import contextlib
import logging
import math
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .bench import benchmark, rows_to_markdown, run_suite, scaling_summary, write_rows_csv
from .energy import Problem, energy
from .exceptions import FoeError
from .image import Image, NoiseSpec, add_gaussian_noise, clamp_round, load_image, psnr, save_image
from .model import load_model, random_model
from .optimizer import LmOptions, check_gradient, lm_denoise

log = logging.getLogger("foelm")

CHECK_GRAD_THRESHOLD = 1e-4

_LM_DEFAULTS = LmOptions()


def _g(v):
    """12 significant digits, always '.' as decimal separator."""
    return f"{v:.12g}"


def _add_model_args(p, required=True):
    group = p.add_mutually_exclusive_group(required=required)
    group.add_argument("--model", metavar="PATH", help="FOE model file")
    group.add_argument("--builtin", metavar="NAME", help="built-in stand-in model (diff2x2)")


def _add_lm_args(p):
    p.add_argument("--max-iters", type=int, default=_LM_DEFAULTS.max_iterations,
                   help="LM iteration cap, accepted and rejected steps (default %(default)s)")
    p.add_argument("--function-tol", type=float, default=_LM_DEFAULTS.function_tolerance,
                   help="stop when an accepted step lowers f by less than this fraction (default %(default)g)")
    p.add_argument("--gradient-tol", type=float, default=_LM_DEFAULTS.gradient_tolerance,
                   help="stop when max|grad f| falls below this fraction of its initial value (default %(default)g)")
    p.add_argument("--initial-damping", type=float, default=_LM_DEFAULTS.initial_damping,
                   help="initial Marquardt damping (default %(default)g)")
    p.add_argument("--linear-tol", type=float, default=_LM_DEFAULTS.linear_tol,
                   help="relative residual required of each linear solve (default %(default)g)")
    p.add_argument("--linear-solver", choices=["cg", "banded"], default=_LM_DEFAULTS.linear_solver)


def _lm_options(args):
    return LmOptions(
        max_iterations=args.max_iters,
        function_tolerance=args.function_tol,
        gradient_tolerance=args.gradient_tol,
        initial_damping=args.initial_damping,
        linear_tol=args.linear_tol,
        linear_solver=args.linear_solver,
    )


def _model(args):
    return load_model(args.builtin if args.builtin else args.model)


def _write_output(path, img):
    """Write ``img``; PGM output is clamped and rounded, with a warning if clamping bites."""
    if str(path).endswith(".npy"):
        save_image(path, img)
        return img
    px = img.pixels
    n_out = int(np.count_nonzero((px < -0.5) | (px >= 255.5)))
    if n_out:
        log.warning("%d pixel(s) outside [0, 255] clamped for PGM output", n_out)
    out = clamp_round(img)
    save_image(path, out)
    return out


def cmd_add_noise(args):
    img = load_image(args.input)
    noisy = add_gaussian_noise(img, NoiseSpec(args.sigma, args.seed))
    if args.clamp:
        noisy = clamp_round(noisy)
    _write_output(args.output, noisy)
    return 0


def cmd_denoise(args):
    noisy = load_image(args.input)
    problem = Problem(noisy, _model(args), args.sigma)
    x, report = lm_denoise(problem, opts=_lm_options(args))
    print(f"initial_objective {_g(report.initial_objective)}")
    print(f"final_objective {_g(report.final_objective)}")
    print(f"iterations {len(report.iterations)}")
    print(f"accepted {report.n_accepted}")
    print(f"termination {report.termination}")
    print(f"wall_seconds {report.wall_seconds:.6f}")
    if args.round:
        rounded = clamp_round(x)
        f_round = energy(problem, rounded).total
        gap = (f_round - report.final_objective) / abs(report.final_objective) if report.final_objective else 0.0
        print(f"rounded_objective {_g(f_round)}")
        print(f"rounding_gap {_g(gap)}")
        x = rounded
    if args.report:
        report.write_csv(args.report)
    _write_output(args.output, x)
    return 0


def cmd_energy(args):
    noisy = load_image(args.noisy)
    cand = load_image(args.candidate)
    e = energy(Problem(noisy, _model(args), args.sigma), cand)
    print(f"data {_g(e.data_term)}")
    print(f"prior {_g(e.prior_term)}")
    print(f"total {_g(e.total)}")
    return 0


def cmd_psnr(args):
    value = psnr(load_image(args.a), load_image(args.b))
    print(f"psnr {'inf' if math.isinf(value) else _g(value)}")
    return 0


def cmd_benchmark(args):
    scales = [float(s) for s in args.scales.split(",") if s.strip()]
    rows = benchmark(load_image(args.input), _model(args), args.sigma, scales, args.seed, _lm_options(args))
    header = ["pixels", "seconds", "final_objective", "iterations"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(f"{r.pixels},{r.seconds:.6f},{_g(r.final_objective)},{r.iterations}")
    text = "\n".join(lines) + "\n"
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)
    slope, ratio = scaling_summary(rows)
    print(f"slope_seconds_per_pixel {_g(slope)}")
    print(f"per_pixel_time_ratio {_g(ratio)}")
    return 0


def _parse_size(text):
    w, _, h = text.lower().partition("x")
    return int(w), int(h)


def cmd_check_grad(args):
    width, height = _parse_size(args.size)
    rng = np.random.default_rng(args.seed)
    fixed = None if args.random else _model(args)
    worst = 0.0
    for trial in range(args.trials):
        if args.random:
            m, _, K = args.random.lower().partition("x")
            model = random_model(int(m), int(K), seed=rng.integers(2**32))
        else:
            model = fixed
        u = rng.uniform(0.0, 255.0, (height, width))
        x = u + rng.normal(0.0, args.sigma, (height, width))
        err = check_gradient(Problem(Image(u), model, args.sigma), x, args.h)
        worst = max(worst, err)
    print(f"trials {args.trials}")
    print(f"worst_relative_error {worst:.6e}")
    if worst > CHECK_GRAD_THRESHOLD:
        print(f"FAIL: exceeds {CHECK_GRAD_THRESHOLD:g}")
        return 1
    return 0


def cmd_bench_suite(args):
    sources = [s.strip() for s in args.models.split(",") if s.strip()]
    out_dir = args.denoised_dir
    if out_dir is None:
        out_dir = os.path.splitext(args.out)[0] + "_denoised"
    rows = run_suite(args.images, sources, args.sigma, args.seed, _lm_options(args), out_dir, workers=args.workers)
    write_rows_csv(args.out, rows)
    md = rows_to_markdown(rows)
    with open(os.path.splitext(args.out)[0] + ".md", "w") as fh:
        fh.write(md)
    sys.stdout.write(md)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="foelm", description="Fields-of-Experts MAP denoising with Levenberg-Marquardt.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=None, metavar="UINT",
                        help="cap BLAS/OpenMP threads (1 = single-threaded timing)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("add-noise", help="add seeded Gaussian noise")
    p.add_argument("input")
    p.add_argument("output", help=".pgm (rounded) or .npy (exact)")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clamp", action="store_true", help="clamp and round explicitly (silences the PGM warning)")
    p.set_defaults(func=cmd_add_noise)

    p = sub.add_parser("denoise", help="minimise the FoE energy starting from the noisy image")
    p.add_argument("input")
    p.add_argument("output", help=".pgm (rounded) or .npy (exact)")
    _add_model_args(p)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--round", action="store_true", help="round to {0..255} and report the objective gap")
    p.add_argument("--report", "--csv", dest="report", metavar="CSV", help="per-iteration trace")
    _add_lm_args(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("energy", help="evaluate the energy of a candidate image")
    p.add_argument("noisy")
    p.add_argument("candidate")
    _add_model_args(p)
    p.add_argument("--sigma", type=float, required=True)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("psnr", help="PSNR between two images (peak 255)")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_psnr)

    p = sub.add_parser("benchmark", help="solve time against pixel count")
    p.add_argument("input")
    _add_model_args(p)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--scales", default="0.5,1,2,4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", metavar="PATH")
    _add_lm_args(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("check-grad", help="finite-difference check of the analytic gradient")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", metavar="PATH")
    group.add_argument("--builtin", metavar="NAME")
    group.add_argument("--random", metavar="MxK", help="fresh random model per trial, e.g. 3x8")
    p.add_argument("--size", default="8x8", metavar="WxH")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=20.0)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("bench-suite", help="noise, denoise and tabulate every PGM in a directory")
    p.add_argument("--images", required=True, metavar="DIR")
    p.add_argument("--models", required=True, metavar="LIST", help="comma-separated builtin names or model paths")
    p.add_argument("--sigma", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="CSV")
    p.add_argument("--denoised-dir", metavar="DIR", help="default: <out stem>_denoised")
    p.add_argument("--workers", type=int, default=1)
    _add_lm_args(p)
    p.set_defaults(func=cmd_bench_suite)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "sigma", None) is not None and not args.sigma > 0:
        parser.error("--sigma must be positive")
    limits = threadpool_limits(limits=args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            return args.func(args)
    except (FoeError, ValueError, OSError) as exc:
        print(f"foelm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
