"""Arbitrary-width binary fixed-point formats and exact saturating arithmetic.

A format is written ``u:I.F`` (unsigned) or ``s:I.F`` (signed), where I counts
integer bits and F fractional bits.  For signed formats the sign bit is part of
I.  A stored integer code ``c`` represents the real value ``c * 2**-F``.

Conventions used throughout:

* rounding is round-half-up, i.e. ties go toward +infinity, for every
  quantization and requantization step;
* out-of-range values saturate at the format bounds, never wrap;
* products and sums are formed exactly at full width (plain Python/numpy
  integers) and only narrowed at explicit requantization points.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

MAX_TOTAL_BITS = 32

_FORMAT_RE = re.compile(r"^([su]):(\d+)\.(\d+)$")


@dataclass(frozen=True)
class QFormat:
    """A fixed-point format: signedness plus an integer/fractional bit split."""

    signed: bool
    int_bits: int
    frac_bits: int

    def __post_init__(self) -> None:
        if self.int_bits < 0 or self.frac_bits < 0:
            raise ValueError(f"bit counts must be non-negative, got {self}")
        total = self.int_bits + self.frac_bits
        if not 1 <= total <= MAX_TOTAL_BITS:
            raise ValueError(
                f"total width must be in [1, {MAX_TOTAL_BITS}] bits, got {total}"
            )
        if self.signed and self.int_bits < 1:
            raise ValueError("signed formats need at least the sign bit in int_bits")

    @property
    def total_bits(self) -> int:
        return self.int_bits + self.frac_bits

    @property
    def step(self) -> float:
        """Value of one least-significant code, 2**-frac_bits (exact)."""
        return 2.0 ** -self.frac_bits

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def max_code(self) -> int:
        if self.signed:
            return (1 << (self.total_bits - 1)) - 1
        return (1 << self.total_bits) - 1

    @property
    def min_value(self) -> float:
        return self.min_code * self.step

    @property
    def max_value(self) -> float:
        return self.max_code * self.step

    def contains_code(self, code: Union[int, np.ndarray]) -> Union[bool, np.ndarray]:
        if isinstance(code, np.ndarray):
            return bool(np.all((code >= self.min_code) & (code <= self.max_code)))
        return self.min_code <= code <= self.max_code

    def to_real(self, code: Union[int, np.ndarray]):
        """Exact real value of a code (power-of-two scaling is lossless)."""
        if isinstance(code, np.ndarray):
            return code.astype(np.float64) * self.step
        return code * self.step

    def __str__(self) -> str:
        return f"{'s' if self.signed else 'u'}:{self.int_bits}.{self.frac_bits}"

    @classmethod
    def parse(cls, text: str) -> "QFormat":
        m = _FORMAT_RE.match(text.strip())
        if m is None:
            raise ValueError(f"bad fixed-point format {text!r}, expected e.g. 's:1.5'")
        return cls(signed=m.group(1) == "s", int_bits=int(m.group(2)), frac_bits=int(m.group(3)))


@dataclass(frozen=True)
class FixedValue:
    """A single quantized value: integer code plus its format."""

    code: int
    fmt: QFormat

    def __post_init__(self) -> None:
        if not self.fmt.contains_code(self.code):
            raise ValueError(f"code {self.code} outside {self.fmt} range")

    @property
    def value(self) -> float:
        return self.fmt.to_real(self.code)


def quantize(x: float, fmt: QFormat, rounding: str = "half-up") -> FixedValue:
    """Quantize a finite real to ``fmt``, round-half-up, saturating at the bounds."""
    if rounding != "half-up":
        raise ValueError(f"unsupported rounding mode {rounding!r}")
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        raise ValueError("cannot quantize a non-finite value")
    if x >= fmt.max_value:
        return FixedValue(fmt.max_code, fmt)
    if x <= fmt.min_value:
        return FixedValue(fmt.min_code, fmt)
    # Scaling by a power of two is exact in binary floating point, so the
    # half-up decision below is made on the exact scaled value.
    code = math.floor(x * (2.0 ** fmt.frac_bits) + 0.5)
    code = max(fmt.min_code, min(fmt.max_code, code))
    return FixedValue(code, fmt)


def quantize_array(x: np.ndarray, fmt: QFormat) -> np.ndarray:
    """Vectorized ``quantize``: float array in, int64 code array out."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    scaled = x * np.float64(2.0 ** fmt.frac_bits)
    codes = np.floor(scaled + 0.5)
    codes = np.clip(codes, fmt.min_code, fmt.max_code)
    return codes.astype(np.int64)


def requantize_code(code, frac_from: int, fmt: QFormat):
    """Exact integer change of fractional width, half-up, saturating.

    Accepts a Python int or an int64 ndarray; returns the same flavour.
    Widening (more fractional bits) is an exact left shift; narrowing adds
    half an output LSB and floor-shifts, which realizes ties-toward-+inf.
    """
    shift = fmt.frac_bits - frac_from
    if shift >= 0:
        c = code << shift
    else:
        s = -shift
        half = 1 << (s - 1)
        c = (code + half) >> s
    if isinstance(c, np.ndarray):
        return np.clip(c, fmt.min_code, fmt.max_code)
    return max(fmt.min_code, min(fmt.max_code, int(c)))


def fx_mul(a: FixedValue, b: FixedValue, out_fmt: QFormat) -> FixedValue:
    """Multiply exactly at full width, then requantize to ``out_fmt``."""
    prod = a.code * b.code
    frac = a.fmt.frac_bits + b.fmt.frac_bits
    return FixedValue(int(requantize_code(prod, frac, out_fmt)), out_fmt)


def fx_accumulate(values: Sequence[FixedValue]) -> int:
    """Exact integer sum of same-format codes.

    The result is a plain integer code at the shared fractional width; it is
    never saturated here, narrowing happens only at an explicit requantize.
    Use :func:`accumulator_width` for the bit width that provably holds it.
    """
    values = list(values)
    if not values:
        raise ValueError("cannot accumulate an empty sequence")
    fmt = values[0].fmt
    for v in values[1:]:
        if v.fmt != fmt:
            raise ValueError(f"mixed formats in accumulation: {v.fmt} vs {fmt}")
    return sum(v.code for v in values)


def accumulator_width(fmt: QFormat, count: int) -> int:
    """Bit width guaranteed to hold the exact sum of ``count`` codes of ``fmt``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    # (count-1).bit_length() == ceil(log2(count)) for count >= 1, exactly.
    return fmt.total_bits + (count - 1).bit_length()


def join_format(a: QFormat, b: QFormat) -> QFormat:
    """Smallest format whose range and resolution cover both operands.

    Used by elementwise addition: both operands convert to the join exactly
    (the conversion can neither round nor saturate by construction).
    """
    signed = a.signed or b.signed
    frac = max(a.frac_bits, b.frac_bits)

    def lifted_int(f: QFormat) -> int:
        # An unsigned range folded into a signed format needs one more bit.
        return f.int_bits + (1 if signed and not f.signed else 0)

    int_bits = max(lifted_int(a), lifted_int(b))
    return QFormat(signed=signed, int_bits=int_bits, frac_bits=frac)
