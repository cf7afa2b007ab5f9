"""Exact rate and time helpers.

Rates are kept as :class:`fractions.Fraction` bits per second using decimal
SI prefixes (1 Mb/s = 10**6 b/s), so catalog figures never drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Union

Number = Union[int, Fraction]

KILO = 10**3
MEGA = 10**6
GIGA = 10**9

NS_PER_MS = 10**6


def as_fraction(value: Union[int, float, str, Fraction]) -> Fraction:
    """Convert *value* to a Fraction; floats go through their shortest repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("bool is not a number here")
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value!r}")
        return Fraction(repr(value))
    if isinstance(value, (int, Rational, str)):
        return Fraction(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Fraction")


def round_half_up(value: Fraction) -> int:
    """Round to the nearest integer, ties away from negative infinity."""
    return math.floor(value + Fraction(1, 2))


def ms_to_ns(ms: Fraction) -> int:
    return round_half_up(ms * NS_PER_MS)


def ns_to_ms(ns: int) -> Fraction:
    return Fraction(ns, NS_PER_MS)


@dataclass(frozen=True, order=True)
class DataRate:
    """A nonnegative data rate in bits per second."""

    bits_per_second: Fraction

    def __post_init__(self) -> None:
        bps = as_fraction(self.bits_per_second)
        if bps < 0:
            raise ValueError(f"negative data rate: {bps}")
        object.__setattr__(self, "bits_per_second", bps)

    @classmethod
    def bps(cls, value: Number) -> DataRate:
        return cls(as_fraction(value))

    @classmethod
    def kbps(cls, value: Union[Number, str]) -> DataRate:
        return cls(as_fraction(value) * KILO)

    @classmethod
    def mbps(cls, value: Union[Number, str]) -> DataRate:
        return cls(as_fraction(value) * MEGA)

    @classmethod
    def gbps(cls, value: Union[Number, str]) -> DataRate:
        return cls(as_fraction(value) * GIGA)

    @property
    def in_mbps(self) -> Fraction:
        return self.bits_per_second / MEGA

    @property
    def bits_per_ms(self) -> Fraction:
        return self.bits_per_second / KILO

    def __add__(self, other: DataRate) -> DataRate:
        if not isinstance(other, DataRate):
            return NotImplemented
        return DataRate(self.bits_per_second + other.bits_per_second)

    def __radd__(self, other: object) -> DataRate:
        # lets sum() start from 0
        if other == 0:
            return self
        return NotImplemented

    def __mul__(self, factor: Number) -> DataRate:
        return DataRate(self.bits_per_second * as_fraction(factor))

    __rmul__ = __mul__

    def __truediv__(self, other: DataRate) -> Fraction:
        if not isinstance(other, DataRate):
            return NotImplemented
        return self.bits_per_second / other.bits_per_second

    def __bool__(self) -> bool:
        return self.bits_per_second != 0

    def format(self, places: int = 2) -> str:
        """Human-readable rate, rounded half-up to *places* decimals."""
        bps = self.bits_per_second
        for scale, unit in ((GIGA, "Gb/s"), (MEGA, "Mb/s"), (KILO, "kb/s")):
            if bps >= scale:
                return f"{_fixed(bps / scale, places)} {unit}"
        return f"{_fixed(bps, places)} b/s"

    def __str__(self) -> str:
        return self.format()


def _fixed(value: Fraction, places: int) -> str:
    scaled = round_half_up(value * 10**places)
    whole, frac = divmod(scaled, 10**places)
    if places == 0:
        return str(whole)
    return f"{whole}.{frac:0{places}d}"
