"""Token-bucket pacing used to impose a link rate on emulated traffic."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..units import DataRate

# bytes metered per token-bucket reservation; keeps bursts well under a frame
SEND_QUANTUM = 16 * 1024


@dataclass(frozen=True)
class ShaperConfig:
    rate: DataRate
    bucket_depth: int  # bits
    added_one_way_delay: Fraction  # ms

    def __post_init__(self) -> None:
        if self.rate.bits_per_second <= 0:
            raise ValueError("shaper rate must be > 0")
        if self.bucket_depth < SEND_QUANTUM * 8:
            raise ValueError(f"bucket depth must hold one send quantum ({SEND_QUANTUM * 8} bits)")
        if self.added_one_way_delay < 0:
            raise ValueError("added delay must be >= 0")

    @classmethod
    def for_profile(cls, profile, quantum: int = SEND_QUANTUM) -> ShaperConfig:
        return cls(profile.uplink_rate, quantum * 8, profile.rtt_mean / 2)


class TokenBucket:
    """Token bucket working on caller-supplied timestamps (seconds).

    :meth:`reserve` books *bits* and returns the earliest time at which they
    conform; the caller is expected to hold the data until then. Requests
    are served in call order, so departures never decrease.
    """

    def __init__(self, rate_bps: float, depth_bits: float, now: float = 0.0) -> None:
        if rate_bps <= 0:
            raise ValueError("rate must be > 0")
        if depth_bits <= 0:
            raise ValueError("depth must be > 0")
        self.rate = float(rate_bps)
        self.depth = float(depth_bits)
        self._tokens = self.depth
        self._stamp = now

    def _refill(self, now: float) -> None:
        if now > self._stamp:
            self._tokens = min(self.depth, self._tokens + (now - self._stamp) * self.rate)
            self._stamp = now

    def tokens(self, now: float) -> float:
        self._refill(now)
        return self._tokens

    def reserve(self, bits: float, now: float) -> float:
        if bits > self.depth:
            raise ValueError(f"request of {bits} bits exceeds bucket depth {self.depth}")
        # bookings already made may lie in the future
        now = max(now, self._stamp)
        self._refill(now)
        if self._tokens >= bits:
            self._tokens -= bits
            return now
        wait = (bits - self._tokens) / self.rate
        self._stamp = now + wait
        self._tokens = 0.0
        return self._stamp
