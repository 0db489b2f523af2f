"""Fields-of-Experts filter banks and the ``FOE`` text format.

File layout (UTF-8)::

    FOE
    <m> <K>
    <alpha_1> <m*m filter coefficients, row-major>
    ...
    <alpha_K> ...

Everything after the second line is a whitespace-separated token stream.
"""

from dataclasses import dataclass
import math
import os

import numpy as np

from .exceptions import ModelParseError

__all__ = ["FoeModel", "parse_model", "serialize_model", "builtin_model", "random_model", "load_model", "model_id", "BUILTIN_MODELS"]


@dataclass(frozen=True, eq=False)
class FoeModel:
    """Filter bank ``{(alpha_k, b_k)}`` over ``m x m`` patches.

    Attributes
    ----------
    m : int
        Patch side length.
    alphas : ndarray, shape (K,)
        Positive expert weights.
    filters : ndarray, shape (K, m, m)
        Filter coefficients; ``filters[k].ravel()`` is ``b_k`` in row-major
        order.
    """

    m: int
    alphas: np.ndarray
    filters: np.ndarray

    def __post_init__(self):
        m = int(self.m)
        if m < 1:
            raise ValueError(f"patch size must be >= 1, got {m}")
        alphas = np.array(self.alphas, dtype=np.float64).reshape(-1)
        filters = np.array(self.filters, dtype=np.float64)
        K = alphas.size
        try:
            filters = filters.reshape(K, m, m)
        except ValueError:
            raise ValueError(
                f"expected {K} filters of {m * m} coefficients, got array of shape {filters.shape}"
            ) from None
        if not np.all(np.isfinite(filters)):
            raise ValueError("filter coefficients must be finite")
        if not np.all(np.isfinite(alphas) & (alphas > 0)):
            raise ValueError("every alpha must be positive and finite")
        alphas.setflags(write=False)
        filters.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "filters", filters)

    @property
    def K(self) -> int:
        return self.alphas.size

    @property
    def experts(self):
        """List of ``(alpha, b)`` with ``b`` the flat length-``m*m`` filter."""
        return [(float(a), f.ravel()) for a, f in zip(self.alphas, self.filters)]

    def __eq__(self, other):
        if not isinstance(other, FoeModel):
            return NotImplemented
        return (
            self.m == other.m
            and np.array_equal(self.alphas, other.alphas)
            and np.array_equal(self.filters, other.filters)
        )

    def __repr__(self):
        return f"FoeModel(m={self.m}, K={self.K})"


def _tokens(text):
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            yield lineno, tok


def parse_model(text: str) -> FoeModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "FOE":
        raise ModelParseError("missing 'FOE' magic", 1)
    if len(lines) < 2:
        raise ModelParseError("missing '<m> <K>' header", 2)
    head = lines[1].split()
    if len(head) != 2 or not all(t.isdigit() for t in head):
        raise ModelParseError(f"expected '<m> <K>', got {lines[1]!r}", 2)
    m, K = int(head[0]), int(head[1])
    if m < 1:
        raise ModelParseError("patch size m must be >= 1", 2)

    stream = _tokens("\n".join(lines[2:]))
    alphas = np.empty(K)
    filters = np.empty((K, m * m))
    last_line = 2

    def take(what):
        nonlocal last_line
        try:
            lineno, tok = next(stream)
        except StopIteration:
            raise ModelParseError(
                f"unexpected end of file: expected {K} experts of {m * m} coefficients, ran out at {what}",
                last_line,
            ) from None
        lineno += 2
        last_line = lineno
        try:
            val = float(tok)
        except ValueError:
            raise ModelParseError(f"invalid number {tok!r} for {what}", lineno) from None
        if not math.isfinite(val):
            raise ModelParseError(f"non-finite value {tok!r} for {what}", lineno)
        return val, lineno

    for k in range(K):
        a, lineno = take(f"alpha of expert {k + 1}")
        if a <= 0:
            raise ModelParseError(f"alpha of expert {k + 1} must be positive, got {a!r}", lineno)
        alphas[k] = a
        for j in range(m * m):
            filters[k, j], _ = take(f"coefficient {j + 1} of expert {k + 1}")
    extra = next(stream, None)
    if extra is not None:
        raise ModelParseError(
            f"trailing token {extra[1]!r}: more coefficients than m={m}, K={K} allow", extra[0] + 2
        )
    return FoeModel(m, alphas, filters)


def _fmt(v):
    return f"{v:.17g}"


def _fmt_alpha(v):
    # weights always carry a decimal point so they stand apart from filter rows
    s = _fmt(v)
    return s if any(c in s for c in ".eninf") else s + ".0"


def serialize_model(model: FoeModel) -> str:
    """Canonical text form; floats printed with 17 significant digits."""
    out = ["FOE", f"{model.m} {model.K}"]
    for a, b in model.experts:
        out.append(_fmt_alpha(a))
        out.append(" ".join(_fmt(v) for v in b))
    return "\n".join(out) + "\n"


def _diff2x2():
    # Stand-in for a trained 2x2 bank: horizontal, vertical and diagonal
    # differences with unit weights.
    filters = [[1, -1, 0, 0], [1, 0, -1, 0], [1, 0, 0, -1]]
    return FoeModel(2, [1.0, 1.0, 1.0], filters)


BUILTIN_MODELS = {"diff2x2": _diff2x2}


def builtin_model(name: str) -> FoeModel:
    """Return a built-in stand-in model.

    These are NOT trained Fields-of-Experts filters; they exist so that the
    solver can be exercised without external data. ``"diff2x2"`` has
    ``m=2``, ``K=3``, unit weights and the unscaled difference filters
    ``(1,-1,0,0)``, ``(1,0,-1,0)`` and ``(1,0,0,-1)``.
    """
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown builtin model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None


def random_model(m: int, K: int, seed=None, alpha_range=(0.1, 1.0)) -> FoeModel:
    """Random zero-mean, unit-norm filters with uniform weights in ``alpha_range``.

    Useful for exercising higher-order cliques (3x3, 5x5) when no trained
    bank is at hand.
    """
    rng = np.random.default_rng(seed)
    filters = rng.standard_normal((K, m * m))
    if m > 1:
        filters -= filters.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(filters, axis=1, keepdims=True)
    filters /= np.where(norms > 0, norms, 1.0)
    alphas = rng.uniform(*alpha_range, size=K)
    return FoeModel(m, alphas, filters)


def load_model(source) -> FoeModel:
    """A builtin name, ``random:<m>x<K>[:<seed>]``, or a path to an FOE file."""
    source = str(source)
    if source in BUILTIN_MODELS:
        return builtin_model(source)
    if source.startswith("random:"):
        dims, _, seed = source[len("random:"):].partition(":")
        m, _, K = dims.partition("x")
        return random_model(int(m), int(K), seed=int(seed) if seed else 0)
    with open(source, encoding="utf-8") as fh:
        return parse_model(fh.read())


def model_id(source) -> str:
    """Short label for reports: builtin name or file stem."""
    source = str(source)
    if source in BUILTIN_MODELS or source.startswith("random:"):
        return source
    return os.path.splitext(os.path.basename(source))[0]
