"""Dense row-major matrices over doubles and fixed-point words.

The real side is plain numpy.  The fixed side stores int64 rep arrays and
implements multiply-accumulate the way a narrow datapath would: exact wide
products, a saturation-checked wide accumulator, and a single rounding when
the finished cell is narrowed back to the word format.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fixedpoint import (
    FixedFormat,
    FixedWord,
    RoundingMode,
    SaturationStats,
    cast_wide_array,
    cast_wide_simple_array,
    convert_array,
    float_sqrt,
    integer_sqrt,
    saturating_acc_add,
)

RealMatrix = np.ndarray


@dataclass(frozen=True)
class FixedMatrix:
    """Row-major matrix of fixed-point reps sharing one format."""

    data: np.ndarray  # int64, 2-D, C-order
    fmt: FixedFormat

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {self.data.shape}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, rows: int, cols: int, fmt: FixedFormat) -> "FixedMatrix":
        return cls(np.zeros((rows, cols), dtype=np.int64), fmt)

    @classmethod
    def from_reps(cls, reps, fmt: FixedFormat) -> "FixedMatrix":
        arr = np.ascontiguousarray(np.asarray(reps, dtype=np.int64))
        if (arr > fmt.ubound).any() or (arr < fmt.lbound).any():
            raise ValueError("rep outside the format's representable range")
        return cls(arr, fmt)

    def to_real(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.fmt.epsilon


# -- real helpers ------------------------------------------------------------

def transpose(m: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(m.T)


def mat_mul_real(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def add_mat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def sub_mat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a - b


def scale(m: np.ndarray, s: float) -> np.ndarray:
    return m * s


# -- quantization ------------------------------------------------------------

def quantize_matrix(
    m: np.ndarray,
    fmt: FixedFormat,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
    stats: SaturationStats | None = None,
) -> FixedMatrix:
    """Cellwise conversion of a real matrix into reps."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    return FixedMatrix(convert_array(m, fmt, mode, rng, stats), fmt)


def dequantize_matrix(f: FixedMatrix) -> np.ndarray:
    """Exact real values of all cells."""
    return f.to_real()


# -- fixed kernels -----------------------------------------------------------

def _check_like(a: FixedMatrix, b: FixedMatrix) -> FixedFormat:
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return a.fmt


def accumulate_product_wide(
    a: np.ndarray,
    b: np.ndarray,
    fmt: FixedFormat,
    stats: SaturationStats | None = None,
) -> np.ndarray:
    """Wide accumulator for reps(a) @ reps(b): exact int64 products, with the
    running sum saturation-checked after every addition.

    Returns the (m, p) wide sums carrying 2*FL fraction bits, before any
    rounding.  The k-loop keeps the per-cell accumulation order fixed, so the
    result for a given output column never depends on which other columns are
    present.
    """
    m, n = a.shape
    p = b.shape[1]
    acc = np.zeros((m, p), dtype=np.int64)
    for k in range(n):
        term = a[:, k : k + 1] * b[k : k + 1, :]
        acc = saturating_acc_add(acc, term, fmt, stats)
    return acc


def mat_mul_fixed(
    a: FixedMatrix,
    b: FixedMatrix,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
    stats: SaturationStats | None = None,
) -> FixedMatrix:
    """Matrix product with exactly one rounding per output cell."""
    fmt = _check_like(a, b)
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    acc = accumulate_product_wide(a.data, b.data, fmt, stats)
    return FixedMatrix(cast_wide_array(acc, fmt, mode, rng, stats=stats), fmt)


def dot_fixed(
    u: FixedMatrix,
    v: FixedMatrix,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
    stats: SaturationStats | None = None,
) -> FixedWord:
    """Inner product of a 1 x m row with an m x 1 column."""
    fmt = _check_like(u, v)
    if u.rows != 1 or v.cols != 1 or u.cols != v.rows:
        raise ValueError(f"expected 1xm . mx1, got {u.shape} . {v.shape}")
    acc = accumulate_product_wide(u.data, v.data, fmt, stats)
    rep = cast_wide_array(acc, fmt, mode, rng, stats=stats)
    return FixedWord(int(rep[0, 0]), fmt)


def sum_squares_wide(
    reps: np.ndarray,
    fmt: FixedFormat,
    stats: SaturationStats | None = None,
) -> np.ndarray:
    """Column-wise sum of squared reps in the wide container.

    Squares are non-negative, so the running saturating sum equals the exact
    big-integer sum clamped at the container bound; the fast int64 path is
    taken whenever overflow is provably impossible.
    """
    m, p = reps.shape
    sq = reps * reps  # exact: |rep| < 2**31 -> square < 2**62
    if m == 0:
        return np.zeros(p, dtype=np.int64)
    max_sq = int(sq.max())
    if m * max_sq <= fmt.wide_ubound:
        return sq.sum(axis=0)
    exact = [int(s) for s in sq.astype(object).sum(axis=0)]
    if stats is not None:
        stats.count(sum(s > fmt.wide_ubound for s in exact))
    return np.array([min(s, fmt.wide_ubound) for s in exact], dtype=np.int64)


def norm_fixed(
    v: FixedMatrix,
    sqrt_path: str = "float",
    stats: SaturationStats | None = None,
) -> FixedWord:
    """Euclidean norm of a fixed-point vector (m x 1 or 1 x m).

    Squares accumulate exactly in the wide container with saturation checks;
    the configured square-root path then produces the word-format result.
    """
    data = v.data
    if v.rows == 1:
        data = data.T
    elif v.cols != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    total = int(sum_squares_wide(data, v.fmt, stats)[0])
    if sqrt_path == "float":
        return float_sqrt(total, v.fmt)
    if sqrt_path == "integer":
        return integer_sqrt(total, v.fmt)
    raise ValueError(f"unknown sqrt_path {sqrt_path!r}")


def add_fixed(
    a: FixedMatrix, b: FixedMatrix, stats: SaturationStats | None = None
) -> FixedMatrix:
    fmt = _check_like(a, b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return FixedMatrix(cast_wide_simple_array(a.data + b.data, fmt, stats), fmt)


def sub_fixed(
    a: FixedMatrix, b: FixedMatrix, stats: SaturationStats | None = None
) -> FixedMatrix:
    fmt = _check_like(a, b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return FixedMatrix(cast_wide_simple_array(a.data - b.data, fmt, stats), fmt)


def scale_fixed(
    m: FixedMatrix,
    s: FixedWord,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
    stats: SaturationStats | None = None,
) -> FixedMatrix:
    """Cellwise multiplication by a scalar word."""
    if m.fmt != s.fmt:
        raise ValueError(f"format mismatch: {m.fmt} vs {s.fmt}")
    wide = m.data * np.int64(s.rep)
    return FixedMatrix(cast_wide_array(wide, m.fmt, mode, rng, stats=stats), m.fmt)


def transpose_fixed(m: FixedMatrix) -> FixedMatrix:
    return FixedMatrix(np.ascontiguousarray(m.data.T), m.fmt)
