"""Grayscale images: PGM I/O, seeded Gaussian noise, rounding and PSNR.

Noise generator
---------------
Noise is reproducible across implementations. Pixel ``i`` (row-major,
0-based) of a ``width * height`` image uses standard normal deviate ``i``
of the following stream:

1. SplitMix64 with state initialised to ``seed``. Output ``j`` (``j >= 1``)
   is ``mix(seed + j * 0x9E3779B97F4A7C15 mod 2**64)`` where ``mix(z)`` is::

       z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
       z = (z ^ (z >> 27)) * 0x94D049BB133111EB
       z = z ^ (z >> 31)

   (all arithmetic modulo 2**64).
2. Output ``j`` becomes a uniform ``U_j = (out_j >> 11) * 2**-53`` in [0, 1).
3. Deviates are produced in pairs by Box-Muller from ``(U_{2p+1}, U_{2p+2})``::

       r = sqrt(-2 ln(1 - U_{2p+1}))
       z_{2p} = r cos(2 pi U_{2p+2}),   z_{2p+1} = r sin(2 pi U_{2p+2})

The noisy value is ``x_i + sigma * z_i``; nothing is clamped.
"""

from dataclasses import dataclass
import math

import numpy as np

from .exceptions import DimensionError, PgmError

__all__ = [
    "Image",
    "NoiseSpec",
    "read_pgm",
    "write_pgm",
    "load_pgm",
    "save_pgm",
    "load_image",
    "save_image",
    "splitmix64",
    "standard_normal",
    "add_gaussian_noise",
    "clamp_round",
    "round_half_away",
    "psnr",
    "resize",
    "synthetic_image",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class Image:
    """Dense grayscale raster with real-valued intensities.

    Parameters
    ----------
    pixels : array_like, shape (height, width)
        Intensities. Copied to a read-only float64 array.
    """

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.array(pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        arr.setflags(write=False)
        self._pixels = arr

    @classmethod
    def from_data(cls, width, height, data):
        """Build from a flat row-major sequence of ``width * height`` values."""
        data = np.asarray(data, dtype=np.float64)
        if width < 1 or height < 1 or data.shape != (width * height,):
            raise DimensionError(
                f"data length {data.size} does not match {width}x{height}"
            )
        return cls(data.reshape(height, width))

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def shape(self):
        return self._pixels.shape

    @property
    def size(self) -> int:
        return self._pixels.size

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the intensities."""
        return self._pixels.ravel()

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._pixels, other._pixels))

    def __repr__(self):
        return f"Image(width={self.width}, height={self.height})"


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


# --------------------------------------------------------------------------
# PGM

_WS = b" \t\n\r\v\f"


class _HeaderReader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def skip_ws(self):
        buf = self.buf
        while self.pos < len(buf):
            c = buf[self.pos : self.pos + 1]
            if c == b"#":
                end = buf.find(b"\n", self.pos)
                self.pos = len(buf) if end < 0 else end + 1
            elif c in _WS:
                self.pos += 1
            else:
                break

    def token(self, what):
        self.skip_ws()
        start = self.pos
        buf = self.buf
        while self.pos < len(buf) and buf[self.pos : self.pos + 1] not in _WS + b"#":
            self.pos += 1
        if start == self.pos:
            raise PgmError(f"unexpected end of data while reading {what}", start)
        return buf[start : self.pos], start

    def integer(self, what):
        tok, start = self.token(what)
        if not tok.isdigit():
            raise PgmError(f"invalid {what} {tok!r}", start)
        return int(tok), start


def read_pgm(buf: bytes) -> Image:
    """Parse a binary (P5) or ASCII (P2) PGM file with maxval <= 255.

    Sample values are returned unscaled as floats.
    """
    buf = bytes(buf)
    if len(buf) < 2:
        raise PgmError("file too short for a PGM magic number", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P2"):
        raise PgmError(f"bad magic {magic!r}, expected P5 or P2", 0)
    rd = _HeaderReader(buf)
    rd.pos = 2
    width, off = rd.integer("width")
    if width < 1:
        raise PgmError("width must be positive", off)
    height, off = rd.integer("height")
    if height < 1:
        raise PgmError("height must be positive", off)
    maxval, off = rd.integer("maxval")
    if not 0 < maxval <= 255:
        raise PgmError(f"maxval {maxval} not in 1..255", off)
    n = width * height

    if magic == b"P5":
        if rd.pos >= len(buf) or buf[rd.pos : rd.pos + 1] not in _WS:
            raise PgmError("missing whitespace after maxval", rd.pos)
        start = rd.pos + 1
        payload = buf[start : start + n]
        if len(payload) < n:
            raise PgmError(f"truncated payload: expected {n} bytes, got {len(payload)}", start + len(payload))
        values = np.frombuffer(payload, dtype=np.uint8)
        if values.max(initial=0) > maxval:
            bad = int(np.argmax(values > maxval))
            raise PgmError(f"sample exceeds maxval {maxval}", start + bad)
    else:
        values = np.empty(n, dtype=np.uint8)
        for i in range(n):
            v, off = rd.integer("sample")
            if v > maxval:
                raise PgmError(f"sample {v} exceeds maxval {maxval}", off)
            values[i] = v
    return Image(values.astype(np.float64).reshape(height, width))


def round_half_away(values) -> np.ndarray:
    """Round to the nearest integer, ties away from zero."""
    values = np.asarray(values, dtype=np.float64)
    whole = np.trunc(values)
    frac = values - whole  # exact for doubles
    return whole + np.where(np.abs(frac) >= 0.5, np.sign(values), 0.0)


def write_pgm(img: Image, ascii: bool = False) -> bytes:
    """Serialise to P5 (or P2 when ``ascii``) with maxval 255.

    Intensities are rounded to the nearest integer; anything outside
    [-0.5, 255.5) raises :class:`PgmError` (clamp first).
    """
    px = img.pixels
    if px.min() < -0.5 or px.max() >= 255.5:
        raise PgmError(
            f"intensity range [{px.min():g}, {px.max():g}] outside [-0.5, 255.5); clamp first"
        )
    q = np.clip(round_half_away(px), 0, 255).astype(np.uint8)
    if ascii:
        lines = [f"P2\n{img.width} {img.height}\n255\n"]
        lines.extend(" ".join(str(v) for v in row) + "\n" for row in q)
        return "".join(lines).encode("ascii")
    return f"P5\n{img.width} {img.height}\n255\n".encode("ascii") + q.tobytes()


def load_pgm(path) -> Image:
    with open(path, "rb") as fh:
        return read_pgm(fh.read())


def save_pgm(path, img: Image, ascii: bool = False):
    data = write_pgm(img, ascii=ascii)
    with open(path, "wb") as fh:
        fh.write(data)


def load_image(path) -> Image:
    """Load a PGM file, or a 2-D float array saved with ``numpy.save`` (``.npy``)."""
    if str(path).endswith(".npy"):
        return Image(np.load(path))
    return load_pgm(path)


def save_image(path, img: Image):
    """Save losslessly to ``.npy``, or as binary PGM (values must be in range)."""
    if str(path).endswith(".npy"):
        np.save(path, img.pixels)
    else:
        save_pgm(path, img)


# --------------------------------------------------------------------------
# Noise


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of a SplitMix64 stream seeded with ``seed``."""
    with np.errstate(over="ignore"):
        j = np.arange(1, count + 1, dtype=np.uint64)
        state = np.uint64(seed) + j * _GOLDEN
        return _mix64(state)


def standard_normal(seed: int, count: int) -> np.ndarray:
    """``count`` N(0, 1) deviates via SplitMix64 + Box-Muller (see module docs)."""
    pairs = (count + 1) // 2
    uniform = (splitmix64(seed, 2 * pairs) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u1 = 1.0 - uniform[0::2]
    u2 = uniform[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:count]


def add_gaussian_noise(img: Image, noise: NoiseSpec) -> Image:
    """Return ``img`` plus i.i.d. N(0, sigma**2) noise; no clamping."""
    z = standard_normal(int(noise.seed), img.size).reshape(img.shape)
    return Image(img.pixels + noise.sigma * z)


# --------------------------------------------------------------------------
# Quantisation and metrics


def clamp_round(img: Image) -> Image:
    """Nearest integer in {0, ..., 255} per pixel, ties away from zero."""
    return Image(np.clip(round_half_away(img.pixels), 0.0, 255.0))


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB for peak 255.

    Returns ``math.inf`` when the images are identical.
    """
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def resize(img: Image, width: int, height: int) -> Image:
    """Resample to ``width x height``.

    Each axis is handled independently: nearest neighbour when enlarging,
    box average when shrinking (every source pixel contributes to exactly
    one target pixel, ``floor(i * new / old)``).
    """
    px = img.pixels
    px = _resize_axis(px, height, axis=0)
    px = _resize_axis(px, width, axis=1)
    return Image(px)


def _resize_axis(px, new, axis):
    old = px.shape[axis]
    if new < 1:
        raise ValueError("target size must be positive")
    if new == old:
        return px
    if new > old:
        idx = np.minimum((np.arange(new) * old) // new, old - 1)
        return np.take(px, idx, axis=axis)
    bins = (np.arange(old) * new) // old
    counts = np.bincount(bins, minlength=new).astype(np.float64)
    moved = np.moveaxis(px, axis, 0)
    sums = np.zeros((new,) + moved.shape[1:])
    np.add.at(sums, bins, moved)
    sums /= counts.reshape((-1,) + (1,) * (moved.ndim - 1))
    return np.moveaxis(sums, 0, axis)


def synthetic_image(width: int = 240, height: int = 160, seed: int = 0) -> Image:
    """Piecewise-smooth test scene with integer intensities in [0, 255].

    A shaded background with a few flat rectangles and discs and one
    textured patch; ``seed`` moves the shapes around.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    px = 60.0 + 80.0 * xx / max(width - 1, 1) + 40.0 * yy / max(height - 1, 1)
    for _ in range(3):
        w, h = rng.integers(width // 8 + 1, width // 3 + 2), rng.integers(height // 8 + 1, height // 3 + 2)
        x0, y0 = rng.integers(0, max(width - w, 1)), rng.integers(0, max(height - h, 1))
        px[y0 : y0 + h, x0 : x0 + w] = rng.uniform(20, 235)
    for _ in range(2):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        rad = rng.uniform(0.08, 0.2) * min(width, height)
        px[(xx - cx) ** 2 + (yy - cy) ** 2 <= rad**2] = rng.uniform(20, 235)
    tx, ty = rng.integers(0, max(width - width // 4, 1)), rng.integers(0, max(height - height // 4, 1))
    tex = px[ty : ty + height // 4, tx : tx + width // 4]
    tex += 25.0 * np.sin(xx[: tex.shape[0], : tex.shape[1]] * 0.7) * np.cos(yy[: tex.shape[0], : tex.shape[1]] * 0.5)
    return Image(np.clip(np.round(px), 0, 255))
