"""Bit-exact fixed-point scalars: formats, rounding conversions, saturating ops.

A value is stored as a two's-complement integer representation (a "rep"); a rep
``r`` in a format with ``FL`` fraction bits denotes the real number
``r * 2**-FL``.  Intermediate products and sums live in a "wide" container of
twice the word length.  Every operation saturates to the format bounds instead
of wrapping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import NamedTuple

import numpy as np


class RoundingMode(Enum):
    DOWN = "down"
    UP = "up"
    NEAREST = "nearest"
    STOCHASTIC = "stochastic"


DETERMINISTIC_MODES = (RoundingMode.DOWN, RoundingMode.UP, RoundingMode.NEAREST)

_INT64_MAX = (1 << 63) - 1
_INT64_MIN = -(1 << 63)


class FixedFormatError(ValueError):
    """Invalid word-length / fraction-length combination."""


@dataclass(frozen=True)
class FixedFormat:
    """A two's-complement word of ``word_length`` bits, ``fraction_length`` of
    which sit right of the binary point.

    Only 16- and 32-bit words are supported; the fraction length must leave at
    least one integer bit beside the sign.
    """

    word_length: int
    fraction_length: int

    def __post_init__(self) -> None:
        if self.word_length not in (16, 32):
            raise FixedFormatError(f"word_length must be 16 or 32, got {self.word_length}")
        if not 0 < self.fraction_length < self.word_length:
            raise FixedFormatError(
                f"fraction_length must lie in (0, {self.word_length}), got {self.fraction_length}"
            )

    @property
    def integer_length(self) -> int:
        return self.word_length - self.fraction_length

    @cached_property
    def epsilon(self) -> float:
        """Smallest representable positive value, 2**-FL."""
        return 2.0 ** -self.fraction_length

    @property
    def ubound(self) -> int:
        """Rep of the largest value: all bits set except the sign bit."""
        return (1 << (self.word_length - 1)) - 1

    @property
    def lbound(self) -> int:
        """Rep of the smallest value: only the sign bit set."""
        return -(1 << (self.word_length - 1))

    @cached_property
    def ubound_value(self) -> float:
        return self.ubound * self.epsilon

    @cached_property
    def lbound_value(self) -> float:
        return self.lbound * self.epsilon

    @property
    def one(self) -> int:
        return 1 << self.fraction_length

    @property
    def minus_one(self) -> int:
        return -(1 << self.fraction_length)

    @property
    def wide_ubound(self) -> int:
        """Upper bound of the 2x-word-length accumulator container."""
        return (1 << (2 * self.word_length - 1)) - 1

    @property
    def wide_lbound(self) -> int:
        return -(1 << (2 * self.word_length - 1))

    def word(self, rep: int) -> "FixedWord":
        if not self.lbound <= rep <= self.ubound:
            raise ValueError(f"rep {rep} outside [{self.lbound}, {self.ubound}]")
        return FixedWord(int(rep), self)


FIXED16 = FixedFormat(16, 10)
FIXED32 = FixedFormat(32, 18)


class FixedWord(NamedTuple):
    """A rep bundled with its format."""

    rep: int
    fmt: FixedFormat

    @property
    def value(self) -> float:
        return self.rep * self.fmt.epsilon


def value_of(w: FixedWord) -> float:
    """Exact real value of a word: rep * 2**-FL."""
    return w.rep * w.fmt.epsilon


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based random stream derived from a global seed and a call-site key.

    Distinct keys give statistically independent streams, so concurrent
    consumers stay reproducible regardless of scheduling.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _require_rng(mode: RoundingMode, rng: np.random.Generator | None) -> None:
    if mode is RoundingMode.STOCHASTIC and rng is None:
        raise ValueError("stochastic rounding requires a random stream")


# -- conversions -------------------------------------------------------------

def convert(
    x: float,
    fmt: FixedFormat,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
) -> FixedWord:
    """Quantize a real number, saturating at the format bounds.

    Down rounds toward -inf, up toward +inf, nearest rounds halves toward
    +inf; stochastic rounds up with probability proportional to the distance
    from the lower neighbour.
    """
    _require_rng(mode, rng)
    if math.isnan(x):
        raise ValueError("cannot convert NaN")
    if x >= fmt.ubound_value:
        return FixedWord(fmt.ubound, fmt)
    if x <= fmt.lbound_value:
        return FixedWord(fmt.lbound, fmt)
    # Scaling by a power of two is exact for in-range doubles, so floor and
    # the fractional remainder are computed without rounding error.
    y = x * float(1 << fmt.fraction_length)
    low = math.floor(y)
    frac = y - low
    if mode is RoundingMode.DOWN:
        incr = 0
    elif mode is RoundingMode.UP:
        incr = 1 if frac > 0.0 else 0
    elif mode is RoundingMode.NEAREST:
        incr = 1 if frac >= 0.5 else 0
    else:
        incr = 0 if rng.random() <= 1.0 - frac else 1
    return FixedWord(low + incr, fmt)


def convert_array(
    x: np.ndarray,
    fmt: FixedFormat,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
    stats: "SaturationStats | None" = None,
) -> np.ndarray:
    """Vectorised ``convert``: float64 array in, int64 rep array out.

    Bit-identical to the scalar path element by element.
    """
    _require_rng(mode, rng)
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("cannot convert NaN")
    sat_hi = x >= fmt.ubound_value
    sat_lo = x <= fmt.lbound_value
    # Clamp before scaling so inf and huge values never reach the int cast.
    safe = np.clip(x, fmt.lbound_value, fmt.ubound_value)
    y = safe * float(1 << fmt.fraction_length)
    low = np.floor(y)
    frac = y - low
    low = low.astype(np.int64)
    if mode is RoundingMode.DOWN:
        rep = low
    elif mode is RoundingMode.UP:
        rep = low + (frac > 0.0)
    elif mode is RoundingMode.NEAREST:
        rep = low + (frac >= 0.5)
    else:
        u = rng.random(x.shape)
        rep = low + (u > 1.0 - frac)
    rep = np.where(sat_hi, fmt.ubound, np.where(sat_lo, fmt.lbound, rep))
    if stats is not None:
        stats.count(int(sat_hi.sum()) + int(sat_lo.sum()))
    return rep


# -- wide-container casts ----------------------------------------------------

def cast_wide_simple(t: int, fmt: FixedFormat) -> FixedWord:
    """Narrow a wide sum (format-resolution fraction bits) back to a word.

    Saturates out-of-range sums; in-range sums pass through unchanged.
    """
    t = int(t)
    if t >= fmt.ubound:
        return FixedWord(fmt.ubound, fmt)
    if t <= fmt.lbound:
        return FixedWord(fmt.lbound, fmt)
    return FixedWord(t, fmt)


def cast_wide(
    t: int,
    fmt: FixedFormat,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
) -> FixedWord:
    """Narrow a wide product (2*FL fraction bits) back to a word.

    The wide value is first checked against the format bounds shifted up by
    FL; otherwise the low FL bits are dropped with the requested rounding
    applied to the discarded fraction.  The shift is arithmetic, so
    truncation is toward -inf on the rep.
    """
    _require_rng(mode, rng)
    t = int(t)
    fl = fmt.fraction_length
    if t >= fmt.ubound << fl:
        return FixedWord(fmt.ubound, fmt)
    if t <= fmt.lbound << fl:
        return FixedWord(fmt.lbound, fmt)
    base = t >> fl
    diff = t & ((1 << fl) - 1)
    if mode is RoundingMode.DOWN:
        incr = 0
    elif mode is RoundingMode.UP:
        incr = 1 if diff != 0 else 0
    elif mode is RoundingMode.NEAREST:
        incr = 1 if diff >= (1 << (fl - 1)) else 0
    else:
        prob = 1.0 - diff * fmt.epsilon
        incr = 0 if rng.random() <= prob else 1
    return FixedWord(base + incr, fmt)


def _stochastic_incr_array(
    diff: np.ndarray,
    fmt: FixedFormat,
    rng: np.random.Generator | None,
    col_rngs: "list[np.random.Generator] | None",
) -> np.ndarray:
    prob = 1.0 - diff * fmt.epsilon
    if col_rngs is not None:
        # One stream per column keeps results independent of how columns are
        # grouped across workers.
        u = np.empty(diff.shape, dtype=np.float64)
        for j, gen in enumerate(col_rngs):
            u[..., j] = gen.random(diff.shape[:-1])
        return u > prob
    return rng.random(diff.shape) > prob


def cast_wide_array(
    t: np.ndarray,
    fmt: FixedFormat,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
    col_rngs: "list[np.random.Generator] | None" = None,
    stats: "SaturationStats | None" = None,
) -> np.ndarray:
    """Vectorised ``cast_wide`` over an int64 array of wide products."""
    if mode is RoundingMode.STOCHASTIC and rng is None and col_rngs is None:
        raise ValueError("stochastic rounding requires a random stream")
    fl = fmt.fraction_length
    hi = fmt.ubound << fl
    lo = fmt.lbound << fl
    sat_hi = t >= hi
    sat_lo = t <= lo
    base = t >> fl
    diff = t & ((1 << fl) - 1)
    if mode is RoundingMode.DOWN:
        rep = base
    elif mode is RoundingMode.UP:
        rep = base + (diff != 0)
    elif mode is RoundingMode.NEAREST:
        rep = base + (diff >= (1 << (fl - 1)))
    else:
        rep = base + _stochastic_incr_array(diff, fmt, rng, col_rngs)
    rep = np.where(sat_hi, fmt.ubound, np.where(sat_lo, fmt.lbound, rep))
    if stats is not None:
        stats.count(int(sat_hi.sum()) + int(sat_lo.sum()))
    return rep


def cast_wide_simple_array(
    t: np.ndarray,
    fmt: FixedFormat,
    stats: "SaturationStats | None" = None,
) -> np.ndarray:
    """Vectorised ``cast_wide_simple``."""
    if stats is not None:
        stats.count(int((t >= fmt.ubound).sum()) + int((t <= fmt.lbound).sum()))
    return np.clip(t, fmt.lbound, fmt.ubound)


def saturating_acc_add(
    acc: np.ndarray,
    term: np.ndarray,
    fmt: FixedFormat,
    stats: "SaturationStats | None" = None,
) -> np.ndarray:
    """One accumulation step of the wide MAC: ``acc + term`` with saturation
    at the wide-container bounds instead of wrap-around.

    For 32-bit words the container is int64 and overflow is detected with the
    two's-complement sign trick; for 16-bit words the container is int32 and
    the int64 sum is simply clamped.
    """
    if fmt.word_length == 16:
        s = acc + term  # |values| < 2**31 + 2**30, no int64 overflow possible
        clipped = np.clip(s, fmt.wide_lbound, fmt.wide_ubound)
        if stats is not None:
            stats.count(int((s != clipped).sum()))
        return clipped
    s = acc + term  # may wrap
    ovf = ((acc ^ s) & (term ^ s)) < 0
    if ovf.any():
        s = np.where(ovf, np.where(term > 0, _INT64_MAX, _INT64_MIN), s)
        if stats is not None:
            stats.count(int(ovf.sum()))
    return s


# -- primitive arithmetic ----------------------------------------------------

def _check_fmt(a: FixedWord, b: FixedWord) -> FixedFormat:
    if a.fmt != b.fmt:
        raise FixedFormatError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return a.fmt


def add_f(a: FixedWord, b: FixedWord) -> FixedWord:
    """Saturating addition: exact wide sum, then narrow."""
    fmt = _check_fmt(a, b)
    return cast_wide_simple(a.rep + b.rep, fmt)


def sub_f(a: FixedWord, b: FixedWord) -> FixedWord:
    fmt = _check_fmt(a, b)
    return cast_wide_simple(a.rep - b.rep, fmt)


def neg_f(a: FixedWord) -> FixedWord:
    return cast_wide_simple(-a.rep, a.fmt)


def multiply_f(
    a: FixedWord,
    b: FixedWord,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: np.random.Generator | None = None,
) -> FixedWord:
    """Multiply via the exact wide product (2*FL fraction bits), then narrow
    with the given rounding mode."""
    fmt = _check_fmt(a, b)
    return cast_wide(a.rep * b.rep, fmt, mode, rng)


def trunc_div(num: int, den: int) -> int:
    """C-style integer division: truncates toward zero."""
    q = abs(num) // abs(den)
    return -q if (num < 0) != (den < 0) else q


def trunc_div_array(num: np.ndarray, den: np.ndarray | int) -> np.ndarray:
    q = np.abs(num) // np.abs(den)
    neg = (num < 0) != (np.asarray(den) < 0)
    return np.where(neg, -q, q)


def divide_f(a: FixedWord, b: FixedWord) -> FixedWord:
    """Saturating division: shift the dividend left by FL, integer-divide
    (truncating toward zero), then narrow the FL-fraction quotient."""
    fmt = _check_fmt(a, b)
    if b.rep == 0:
        raise ZeroDivisionError("fixed-point division by zero")
    q = trunc_div(a.rep << fmt.fraction_length, b.rep)
    return cast_wide_simple(q, fmt)


# -- square roots ------------------------------------------------------------

def integer_sqrt(t: int, fmt: FixedFormat) -> FixedWord:
    """Floor square root of a wide sum of squares (2*FL fraction bits).

    Because sqrt(v * 2**-2FL) = sqrt(v) * 2**-FL, the integer square root of
    the wide rep is directly the FL-fraction result.
    """
    t = int(t)
    if t < 0:
        raise ValueError("square root of a negative value")
    return cast_wide_simple(math.isqrt(t), fmt)


def float_sqrt(t: int, fmt: FixedFormat) -> FixedWord:
    """Square root of a wide sum of squares via double arithmetic.

    Converts the wide value to a double, takes the IEEE sqrt and quantizes
    back with nearest rounding.  This is the default norm path.
    """
    t = int(t)
    if t < 0:
        raise ValueError("square root of a negative value")
    value = float(t) * fmt.epsilon * fmt.epsilon
    return convert(math.sqrt(value), fmt, RoundingMode.NEAREST)


def float_sqrt_array(t: np.ndarray, fmt: FixedFormat) -> np.ndarray:
    """Vectorised ``float_sqrt`` over int64 wide values (must be >= 0)."""
    if (t < 0).any():
        raise ValueError("square root of a negative value")
    value = t.astype(np.float64) * (fmt.epsilon * fmt.epsilon)
    return convert_array(np.sqrt(value), fmt, RoundingMode.NEAREST)


def integer_sqrt_array(t: np.ndarray, fmt: FixedFormat) -> np.ndarray:
    if (t < 0).any():
        raise ValueError("square root of a negative value")
    flat = [math.isqrt(int(v)) for v in t.ravel()]
    out = np.array(flat, dtype=np.int64).reshape(t.shape)
    return cast_wide_simple_array(out, fmt)


class SaturationStats:
    """Mutable counter of saturation events observed by the kernels."""

    __slots__ = ("events",)

    def __init__(self) -> None:
        self.events = 0

    def count(self, n: int = 1) -> None:
        self.events += n

    def merge(self, other: "SaturationStats") -> None:
        self.events += other.events

    def __repr__(self) -> str:
        return f"SaturationStats(events={self.events})"
