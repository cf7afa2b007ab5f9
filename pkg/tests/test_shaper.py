from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from limbnet.emu.shaper import SEND_QUANTUM, ShaperConfig, TokenBucket
from limbnet.link import get_profile
from limbnet.units import DataRate


def test_for_profile():
    cfg = ShaperConfig.for_profile(get_profile("5g100opt"))
    assert cfg.rate == DataRate.mbps(236)
    assert cfg.added_one_way_delay == Fraction(27, 2)
    assert cfg.bucket_depth == SEND_QUANTUM * 8


def test_config_validation():
    with pytest.raises(ValueError):
        ShaperConfig(DataRate.bps(0), SEND_QUANTUM * 8, 0)
    with pytest.raises(ValueError):
        ShaperConfig(DataRate.mbps(1), 8, 0)


def test_burst_then_paced():
    bucket = TokenBucket(rate_bps=1000, depth_bits=300, now=0.0)
    departures = [bucket.reserve(100, 0.0) for _ in range(6)]
    # three fit in the full bucket, then one every 0.1 s
    assert departures == pytest.approx([0.0, 0.0, 0.0, 0.1, 0.2, 0.3])


def test_refill_is_capped_at_depth():
    bucket = TokenBucket(1000, 300, 0.0)
    bucket.reserve(300, 0.0)
    assert bucket.tokens(0.1) == pytest.approx(100)
    assert bucket.tokens(100.0) == pytest.approx(300)


def test_oversized_request_rejected():
    with pytest.raises(ValueError):
        TokenBucket(1000, 300).reserve(301, 0.0)


@given(st.integers(1, 10**9), st.integers(1, 64), st.integers(10, 2000))
def test_long_run_rate(rate, quanta_in_bucket, n):
    quantum = 1000
    bucket = TokenBucket(rate, quantum * quanta_in_bucket, 0.0)
    last = 0.0
    for _ in range(n):
        last = bucket.reserve(quantum, 0.0)
    # everything beyond the initial burst leaves at exactly the configured rate
    expected = max(0, n - quanta_in_bucket) * quantum / rate
    assert last == pytest.approx(expected, rel=1e-9, abs=1e-12)


@given(st.lists(st.tuples(st.integers(1, 500), st.floats(0, 0.01)), max_size=50))
def test_departures_never_decrease(requests):
    bucket = TokenBucket(10_000, 500, 0.0)
    now, last = 0.0, 0.0
    for bits, gap in requests:
        now += gap
        dep = bucket.reserve(bits, now)
        assert dep >= last and dep >= now
        last = dep
