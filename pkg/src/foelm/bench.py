"""Experiment drivers: the pixel-count scaling benchmark and the
noise -> denoise -> report suite over a directory of images."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
import csv
import logging
import math
import os
import zlib

import numpy as np

from .energy import Problem, objective
from .image import NoiseSpec, add_gaussian_noise, clamp_round, load_pgm, psnr, resize, save_image
from .model import load_model, model_id
from .optimizer import LmOptions, lm_denoise

__all__ = ["ScaleRow", "benchmark", "scaling_summary", "BenchRow", "run_suite", "image_seed", "write_rows_csv", "rows_to_markdown"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScaleRow:
    scale: float
    width: int
    height: int
    pixels: int
    seconds: float
    final_objective: float
    iterations: int


def benchmark(image, model, sigma, scales=(0.5, 1.0, 2.0, 4.0), seed=0, opts=None):
    """Resize, add noise and denoise once per scale factor.

    Returns one :class:`ScaleRow` per scale, in the given order. Timing is
    the solver's wall time and excludes resizing and noise generation.
    """
    opts = opts or LmOptions()
    rows = []
    for s in scales:
        if not s > 0:
            raise ValueError(f"scale must be positive, got {s}")
        w = max(int(round(image.width * s)), model.m)
        h = max(int(round(image.height * s)), model.m)
        clean = resize(image, w, h)
        noisy = add_gaussian_noise(clean, NoiseSpec(sigma, seed))
        _, report = lm_denoise(Problem(noisy, model, sigma), opts=opts)
        rows.append(ScaleRow(s, w, h, w * h, report.wall_seconds, report.final_objective, len(report.iterations)))
    return rows


def scaling_summary(rows):
    """Least-squares slope of seconds vs pixels, and max/min of seconds per pixel."""
    pixels = np.array([r.pixels for r in rows], dtype=float)
    seconds = np.array([r.seconds for r in rows], dtype=float)
    slope = float(np.polyfit(pixels, seconds, 1)[0]) if len(rows) > 1 else math.nan
    per_pixel = seconds / pixels
    return slope, float(per_pixel.max() / per_pixel.min())


@dataclass
class BenchRow:
    image_id: str
    model_id: str
    m: int
    K: int
    pixels: int
    sigma: float
    initial_objective: float = math.nan
    final_objective: float = math.nan
    rounded_objective: float = math.nan
    rounding_gap: float = math.nan
    seconds: float = math.nan
    iterations: int = 0
    termination: str = ""
    psnr_noisy: float = math.nan
    psnr_denoised: float = math.nan
    status: str = "ok"
    error: str = ""


def image_seed(seed: int, image_id: str) -> int:
    """Per-image noise seed; stable under adding or removing other images."""
    return (int(seed) + zlib.crc32(image_id.encode("utf-8"))) % 2**64


def _denoise_one(image_id, clean, source, model, sigma, seed, opts, out_dir):
    row = BenchRow(image_id, model_id(source), model.m, model.K, clean.size, sigma)
    noisy = add_gaussian_noise(clean, NoiseSpec(sigma, image_seed(seed, image_id)))
    problem = Problem(noisy, model, sigma)
    x, report = lm_denoise(problem, opts=opts)
    rounded = clamp_round(x)
    row.initial_objective = report.initial_objective
    row.final_objective = report.final_objective
    row.rounded_objective = objective(problem, rounded)
    row.rounding_gap = (row.rounded_objective - row.final_objective) / abs(row.final_objective)
    row.seconds = report.wall_seconds
    row.iterations = len(report.iterations)
    row.termination = report.termination
    row.psnr_noisy = psnr(clean, noisy)
    row.psnr_denoised = psnr(clean, rounded)
    if out_dir:
        stem = os.path.join(out_dir, f"{image_id}__{row.model_id}")
        save_image(os.path.join(out_dir, f"{image_id}__noisy.npy"), noisy)
        save_image(stem + ".npy", x)
        save_image(stem + ".pgm", rounded)
    return row


def run_suite(image_dir, model_sources, sigma=20.0, seed=0, opts=None, out_dir=None, workers=1):
    """Denoise every ``*.pgm`` in ``image_dir`` with every model.

    Each image (treated as clean) gets noise seeded by :func:`image_seed`.
    A failing (image, model) pair yields a row with ``status="failed"``;
    the remaining rows are still computed. Rows are sorted by image id,
    then model id.

    With ``out_dir`` the noisy input (``<image>__noisy.npy``), the
    continuous result (``<image>__<model>.npy``) and its rounded PGM are
    written there.
    """
    opts = opts or LmOptions()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    names = sorted(f for f in os.listdir(image_dir) if f.lower().endswith(".pgm"))
    models = []
    for src in model_sources:
        models.append((src, load_model(src)))

    jobs = []
    for name in names:
        image_id = os.path.splitext(name)[0]
        for src, model in models:
            jobs.append((image_id, os.path.join(image_dir, name), src, model))

    def run(job):
        image_id, path, src, model = job
        try:
            clean = load_pgm(path)
            return _denoise_one(image_id, clean, src, model, sigma, seed, opts, out_dir)
        except Exception as exc:  # one bad image must not sink the suite
            log.warning("suite: %s with %s failed: %s", image_id, src, exc)
            return BenchRow(image_id, model_id(src), model.m, model.K, 0, sigma, status="failed", error=str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(job) for job in jobs]
    rows.sort(key=lambda r: (r.image_id, r.model_id))
    return rows


_FLOAT_FIELDS = {"sigma", "initial_objective", "final_objective", "rounded_objective", "rounding_gap", "seconds", "psnr_noisy", "psnr_denoised"}


def _fmt(key, value):
    if key in _FLOAT_FIELDS:
        return "" if isinstance(value, float) and math.isnan(value) else f"{value:.12g}"
    return str(value)


def write_rows_csv(path, rows, header=None):
    header = header or list(BenchRow.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            d = asdict(row)
            writer.writerow([_fmt(k, d[k]) for k in header])


def rows_to_markdown(rows) -> str:
    cols = ["image_id", "model_id", "pixels", "initial_objective", "final_objective", "rounding_gap", "seconds", "psnr_denoised", "status"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in rows:
        d = asdict(row)
        lines.append("| " + " | ".join(_fmt(k, d[k]) for k in cols) + " |")
    return "\n".join(lines) + "\n"
