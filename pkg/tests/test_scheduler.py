from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from limbnet.catalog import builtin_catalog
from limbnet.link import get_profile
from limbnet.scheduler import (Discipline, DuplicateFrameError, LinkScheduler, NoPendingWork,
                               SchedulerPolicy, TransferJob, feasibility_report)
from limbnet.units import DataRate

from oracles import tick_strict_priority

FRAME = 3_256_320
ONE_BIT_PER_MS = DataRate.bps(1000)
STRICT = SchedulerPolicy()
SLICED_HALF = SchedulerPolicy(Discipline.SLICED, {0: Fraction(1, 2), 1: Fraction(1, 2)})


def job(stream, seq, size, t=0, rank=0):
    return TransferJob(stream, seq, size, t, rank)


def test_single_frame_at_236_mbps():
    s = LinkScheduler(DataRate.mbps(236))
    s.enqueue(job("cam", 0, FRAME))
    done = s.next_completion(0)
    assert done.finish_time == Fraction(FRAME, 236_000)
    assert abs(done.finish_time - Fraction("13.8")) < Fraction(1, 100)


def test_rank0_served_before_rank1():
    s = LinkScheduler(DataRate.mbps(100))
    s.enqueue(job("b", 0, 1000, rank=1))
    s.enqueue(job("a", 0, 1000, rank=0))
    first, second = s.drain()
    assert first.job.stream_id == "a"
    assert first.finish_time == Fraction(1, 100)
    assert second.finish_time == Fraction(2, 100)


def test_sliced_even_split_finishes_together():
    s = LinkScheduler(DataRate.mbps(236), SLICED_HALF)
    s.enqueue(job("a", 0, FRAME, rank=0))
    s.enqueue(job("b", 0, FRAME, rank=1))
    done = s.drain()
    single = Fraction(FRAME, 236_000)
    assert [d.finish_time for d in done] == [2 * single, 2 * single]


def test_preemption_and_resume():
    s = LinkScheduler(ONE_BIT_PER_MS)
    s.enqueue(job("low", 0, 10, 0, rank=2))
    s.enqueue(job("high", 0, 4, 3, rank=0))
    done = {d.job.stream_id: d for d in s.drain()}
    assert done["high"].start_time == 3 and done["high"].finish_time == 7
    assert done["low"].start_time == 0 and done["low"].finish_time == 14


def test_non_preemptive_keeps_job_in_service():
    s = LinkScheduler(ONE_BIT_PER_MS, SchedulerPolicy(preemptive=False))
    s.enqueue(job("low", 0, 10, 0, rank=2))
    s.enqueue(job("high", 0, 4, 3, rank=0))
    done = {d.job.stream_id: d.finish_time for d in s.drain()}
    assert done == {"low": 10, "high": 14}


def test_duplicate_frame_rejected():
    s = LinkScheduler(ONE_BIT_PER_MS)
    s.enqueue(job("a", 1, 10))
    with pytest.raises(DuplicateFrameError, match="duplicate frame"):
        s.enqueue(job("a", 1, 10))


def test_empty_scheduler_has_no_work():
    with pytest.raises(NoPendingWork, match="no pending work"):
        LinkScheduler(ONE_BIT_PER_MS).next_completion(0)


def test_enqueue_in_the_past_rejected():
    s = LinkScheduler(ONE_BIT_PER_MS)
    s.enqueue(job("a", 0, 10))
    s.advance(5)
    with pytest.raises(ValueError):
        s.enqueue(job("b", 0, 10, 2))


def test_discard_only_before_service():
    s = LinkScheduler(ONE_BIT_PER_MS)
    a, b = job("a", 0, 10), job("a", 1, 10)
    s.enqueue(a)
    s.enqueue(b)
    s.advance(1)
    assert not s.discard(a)
    assert s.discard(b)
    assert [d.job for d in s.drain()] == [a]


def test_pause_stops_service():
    s = LinkScheduler(ONE_BIT_PER_MS)
    s.enqueue(job("a", 0, 10))
    s.advance(4)
    s.set_paused(True)
    assert s.advance(50) == []
    s.set_paused(False)
    assert s.next_completion().finish_time == 56


def test_peek_does_not_change_state():
    s = LinkScheduler(ONE_BIT_PER_MS)
    s.enqueue(job("a", 0, 10, 0, rank=1))
    s.enqueue(job("b", 0, 2, 5, rank=0))
    assert s.peek_completion() == (7, job("b", 0, 2, 5, rank=0))
    assert s.now == 0
    assert [d.finish_time for d in s.drain()] == [7, 12]


def test_unreserved_rank_starves_while_reserved_backlogged():
    policy = SchedulerPolicy(Discipline.SLICED, {0: Fraction(1, 4)})
    s = LinkScheduler(ONE_BIT_PER_MS, policy)
    s.enqueue(job("a", 0, 8, rank=0))
    s.enqueue(job("b", 0, 8, rank=1))
    done = {d.job.stream_id: d.finish_time for d in s.drain()}
    assert done == {"a": 8, "b": 16}


def test_policy_validation():
    with pytest.raises(ValueError):
        SchedulerPolicy(Discipline.SLICED, {0: Fraction(3, 4), 1: Fraction(1, 2)})
    with pytest.raises(ValueError):
        SchedulerPolicy(Discipline.STRICT, {0: Fraction(1, 2)})
    assert SchedulerPolicy.from_json(SLICED_HALF.to_json()) == SLICED_HALF


def test_feasibility_of_builtin_uplink():
    report = feasibility_report([s for s in builtin_catalog() if s.id != "xr_feedback"],
                                get_profile("5g100opt"))
    ul = report["Uplink"]
    assert ul["feasible"]
    assert abs(ul["utilization"] - Fraction(43, 100)) < Fraction(1, 100)
    assert ul["offered_load"] == DataRate.bps(97_689_600 + 2_048_000 + 1_024_000 + 3_600)


def test_xr_feedback_infeasible_on_every_downlink():
    from limbnet.catalog import catalog_by_id
    from limbnet.link import builtin_profiles
    xr = catalog_by_id()["xr_feedback"]
    for p in builtin_profiles():
        assert not feasibility_report([xr], p)["Downlink"]["feasible"]


def test_empty_stream_list_feasible():
    report = feasibility_report([], get_profile("4g10"))
    assert report["Uplink"]["utilization"] == 0 and report["Uplink"]["feasible"]


# -- properties -------------------------------------------------------------

job_sets = st.lists(st.tuples(st.integers(1, 20), st.integers(0, 30), st.integers(0, 3)),
                    min_size=1, max_size=7)


def _load(sched, job_list):
    jobs = [TransferJob(f"s{i}", 0, size, t, rank) for i, (size, t, rank) in enumerate(job_list)]
    for j in jobs:
        sched.enqueue(j)
    return jobs


def _busy_period_end(job_list, per_ms):
    """Last completion of any work-conserving server: FIFO recursion."""
    end = Fraction(0)
    for size, t, _ in sorted(job_list, key=lambda x: x[1]):
        end = max(end, Fraction(t)) + Fraction(size) / per_ms
    return end


@given(job_sets, st.booleans())
def test_strict_matches_bit_by_bit_oracle(job_list, preemptive):
    s = LinkScheduler(ONE_BIT_PER_MS, SchedulerPolicy(preemptive=preemptive))
    _load(s, job_list)
    got = {d.job.key: d.finish_time for d in s.drain()}
    want = tick_strict_priority([((f"s{i}", 0), size, t, rank) for i, (size, t, rank) in enumerate(job_list)],
                                preemptive=preemptive)
    assert got == want


@settings(max_examples=200)
@given(job_sets, st.sampled_from(["strict", "sliced"]))
def test_work_conservation(job_list, discipline):
    policy = SLICED_HALF if discipline == "sliced" else STRICT
    s = LinkScheduler(DataRate.mbps(3), policy, record=True)
    _load(s, job_list)
    done = s.drain()
    assert max(d.finish_time for d in done) == _busy_period_end(job_list, DataRate.mbps(3).bits_per_ms)
    for seg in s.segments:
        assert sum(seg.served.values()) == DataRate.mbps(3).bits_per_ms * (seg.end - seg.start)


@given(job_sets)
def test_strict_never_serves_lower_rank_while_higher_backlogged(job_list):
    s = LinkScheduler(ONE_BIT_PER_MS, record=True)
    _load(s, job_list)
    s.drain()
    for seg in s.segments:
        assert seg.served_ranks == {min(seg.backlogged_bits)}


@given(job_sets, st.lists(st.fractions(0, 1), min_size=4, max_size=4))
def test_slice_guarantee(job_list, raw):
    total = sum(raw)
    slices = {r: (f / total if total > 1 else f) for r, f in enumerate(raw)}
    s = LinkScheduler(ONE_BIT_PER_MS, SchedulerPolicy(Discipline.SLICED, slices), record=True)
    _load(s, job_list)
    s.drain()
    for seg in s.segments:
        served = {}
        for (stream, _), bits in seg.served.items():
            rank = job_list[int(stream[1:])][2]
            served[rank] = served.get(rank, 0) + bits
        for rank in seg.backlogged_bits:
            assert served.get(rank, 0) >= slices[rank] * (seg.end - seg.start)


@given(st.lists(st.integers(1, 50), min_size=1, max_size=8), st.sampled_from([STRICT, SLICED_HALF]))
def test_fifo_within_stream(sizes, policy):
    s = LinkScheduler(ONE_BIT_PER_MS, policy)
    for seq, size in enumerate(sizes):
        s.enqueue(job("cam", seq, size, seq))
    assert [d.job.frame_seq for d in s.drain()] == list(range(len(sizes)))
