"""Fluid link scheduler shared by the streams of one link direction.

Two disciplines are supported:

* strict priority: the head job of the lowest non-empty rank gets the whole
  link. By default a newly enqueued higher-priority job preempts the one in
  service, which later resumes with its remaining bits.
* sliced weighted share: every backlogged rank gets its reserved fraction
  of the rate; capacity that is unreserved or reserved by idle ranks is
  redistributed in proportion to the reservations of the backlogged ranks.
  Ranks without a reservation only get service when no reserved rank is
  backlogged.

Time is in milliseconds and sizes in bits, both exact ``Fraction`` values.
"""
from __future__ import annotations

import bisect
import copy
import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional

from .catalog import Direction, StreamSpec
from .units import DataRate, Number, as_fraction


class DuplicateFrameError(ValueError):
    pass


class NoPendingWork(LookupError):
    pass


class Discipline(str, enum.Enum):
    STRICT = "strict"
    SLICED = "sliced"


@dataclass(frozen=True)
class SchedulerPolicy:
    discipline: Discipline = Discipline.STRICT
    slices: Mapping[int, Fraction] = field(default_factory=dict)
    preemptive: bool = True
    # waiting (not yet started) frames kept per stream; older ones are dropped
    queue_limit: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "discipline", Discipline(self.discipline))
        slices = {int(rank): as_fraction(frac) for rank, frac in dict(self.slices).items()}
        object.__setattr__(self, "slices", slices)
        if self.discipline is Discipline.STRICT and slices:
            raise ValueError("strict priority takes no slices")
        for rank, frac in slices.items():
            if rank < 0 or not 0 <= frac <= 1:
                raise ValueError(f"slice for rank {rank} must have fraction in [0, 1], got {frac}")
        if sum(slices.values(), Fraction(0)) > 1:
            raise ValueError("reserved slice fractions sum to more than 1")
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be >= 1")

    def to_json(self) -> dict[str, Any]:
        return {
            "discipline": self.discipline.value,
            "slices": [{"rank": r, "fraction": float(f)} for r, f in sorted(self.slices.items())],
            "preemptive": self.preemptive,
            "queue_limit": self.queue_limit,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> SchedulerPolicy:
        return cls(
            discipline=Discipline(doc.get("discipline", "strict")),
            slices={int(s["rank"]): as_fraction(s["fraction"]) for s in doc.get("slices", [])},
            preemptive=bool(doc.get("preemptive", True)),
            queue_limit=int(doc.get("queue_limit", 3)),
        )


@dataclass(frozen=True)
class TransferJob:
    stream_id: str
    frame_seq: int
    size: Fraction
    enqueue_time: Fraction
    priority: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "size", as_fraction(self.size))
        object.__setattr__(self, "enqueue_time", as_fraction(self.enqueue_time))
        if self.size <= 0:
            raise ValueError(f"job {self.key}: size must be > 0")
        if self.priority < 0:
            raise ValueError(f"job {self.key}: priority must be >= 0")

    @property
    def key(self) -> tuple[str, int]:
        return (self.stream_id, self.frame_seq)

    @property
    def order(self) -> tuple[Fraction, str, int]:
        """Position within a rank: earliest enqueue, then stream id."""
        return (self.enqueue_time, self.stream_id, self.frame_seq)


@dataclass(frozen=True)
class Completion:
    job: TransferJob
    start_time: Fraction
    finish_time: Fraction


@dataclass(frozen=True)
class ServiceSegment:
    """An interval of constant service rates, kept when recording."""

    start: Fraction
    end: Fraction
    served: dict[tuple[str, int], Fraction]
    served_ranks: frozenset[int]
    backlogged_bits: dict[int, Fraction]


@dataclass(eq=False)
class _Entry:
    job: TransferJob
    remaining: Fraction
    started: Optional[Fraction] = None


class LinkScheduler:
    """Serves :class:`TransferJob` bits over one link direction.

    Jobs may be enqueued ahead of time; an arrival in the future becomes
    eligible (and may preempt) when the clock reaches its ``enqueue_time``.
    """

    def __init__(self, rate: DataRate, policy: SchedulerPolicy = SchedulerPolicy(),
                 *, record: bool = False, start: Number = 0) -> None:
        if rate.bits_per_second <= 0:
            raise ValueError("nonpositive link rate")
        self.rate = rate
        self.policy = policy
        self.now = as_fraction(start)
        self.paused = False
        self.segments: Optional[list[ServiceSegment]] = [] if record else None
        self._per_ms = rate.bits_per_ms
        self._queues: dict[int, list[_Entry]] = {}
        self._arrivals: list[tuple[Fraction, int, _Entry]] = []
        self._arrival_count = 0
        self._locked: Optional[_Entry] = None
        self._seen: set[tuple[str, int]] = set()
        self._last: dict[str, tuple[int, Fraction]] = {}

    # -- queue maintenance -------------------------------------------------

    def enqueue(self, job: TransferJob) -> None:
        if job.key in self._seen:
            raise DuplicateFrameError(f"duplicate frame {job.key}")
        if job.enqueue_time < self.now:
            raise ValueError(f"job {job.key} enqueued at {job.enqueue_time} before clock {self.now}")
        last = self._last.get(job.stream_id)
        if last is not None:
            seq, t = last
            if job.frame_seq <= seq:
                raise ValueError(f"job {job.key}: frame_seq must increase per stream")
            if job.enqueue_time < t:
                raise ValueError(f"job {job.key}: enqueue_time must not decrease per stream")
        self._seen.add(job.key)
        self._last[job.stream_id] = (job.frame_seq, job.enqueue_time)
        entry = _Entry(job, job.size)
        if job.enqueue_time <= self.now:
            self._admit(entry)
        else:
            self._arrival_count += 1
            bisect.insort(self._arrivals, (job.enqueue_time, self._arrival_count, entry),
                          key=lambda a: (a[0], a[1]))

    def _admit(self, entry: _Entry) -> None:
        queue = self._queues.setdefault(entry.job.priority, [])
        bisect.insort(queue, entry, key=lambda e: e.job.order)

    def _admit_due(self) -> None:
        while self._arrivals and self._arrivals[0][0] <= self.now:
            self._admit(self._arrivals.pop(0)[2])

    def discard(self, job: TransferJob) -> bool:
        """Remove a job that has not received any service yet."""
        for entry in self._queues.get(job.priority, []):
            if entry.job.key == job.key:
                if entry.started is not None:
                    return False
                self._queues[job.priority].remove(entry)
                return True
        for i, (_, _, entry) in enumerate(self._arrivals):
            if entry.job.key == job.key:
                del self._arrivals[i]
                return True
        return False

    def waiting(self, stream_id: str) -> list[TransferJob]:
        """Admitted jobs of *stream_id* that have not started, oldest first."""
        jobs = [e.job for q in self._queues.values() for e in q
                if e.job.stream_id == stream_id and e.started is None]
        return sorted(jobs, key=lambda j: j.frame_seq)

    @property
    def backlogged(self) -> bool:
        return any(self._queues.values())

    @property
    def pending_bits(self) -> Fraction:
        admitted = sum((e.remaining for q in self._queues.values() for e in q), Fraction(0))
        return admitted + sum((a[2].remaining for a in self._arrivals), Fraction(0))

    def set_paused(self, paused: bool) -> None:
        """Stop or resume all service (link outage) at the current clock."""
        self.paused = paused

    # -- service -----------------------------------------------------------

    def _shares(self) -> dict[int, tuple[_Entry, Fraction]]:
        """Map rank -> (head entry, fraction of the link rate)."""
        active = {r: q[0] for r, q in self._queues.items() if q}
        if not active or self.paused:
            return {}
        if self.policy.discipline is Discipline.STRICT:
            if self._locked is not None:
                return {self._locked.job.priority: (self._locked, Fraction(1))}
            rank = min(active)
            return {rank: (active[rank], Fraction(1))}
        weights = {r: self.policy.slices.get(r, Fraction(0)) for r in active}
        total = sum(weights.values(), Fraction(0))
        if total == 0:
            share = Fraction(1, len(active))
            return {r: (e, share) for r, e in active.items()}
        return {r: (active[r], w / total) for r, w in weights.items() if w > 0}

    def _earliest_finish(self, shares) -> Optional[tuple[Fraction, int, _Entry]]:
        best = None
        for rank, (entry, share) in shares.items():
            dt = entry.remaining / (share * self._per_ms)
            cand = (dt, rank, entry.job.order, entry)
            if best is None or cand[:3] < best[:3]:
                best = cand
        if best is None:
            return None
        return best[0], best[1], best[3]

    def _serve(self, shares, dt: Fraction) -> None:
        if dt < 0:
            raise AssertionError("negative service interval")
        if self.segments is not None and dt > 0:
            self.segments.append(ServiceSegment(
                start=self.now,
                end=self.now + dt,
                served={e.job.key: share * self._per_ms * dt for e, share in shares.values()},
                served_ranks=frozenset(shares),
                backlogged_bits={r: sum((e.remaining for e in q), Fraction(0))
                                 for r, q in self._queues.items() if q},
            ))
        for entry, share in shares.values():
            if dt == 0:
                continue
            if entry.started is None:
                entry.started = self.now
            entry.remaining -= share * self._per_ms * dt
            if (self.policy.discipline is Discipline.STRICT and not self.policy.preemptive
                    and self._locked is None):
                self._locked = entry
        self.now += dt

    def _step(self, limit: Optional[Fraction]) -> tuple[bool, Optional[Completion]]:
        """Advance to the next arrival, completion or *limit*.

        Returns ``(progressed, completion)``; ``progressed`` is False once
        the clock sits at *limit* with nothing left to do there.
        """
        self._admit_due()
        shares = self._shares()
        t_arrival = self._arrivals[0][0] if self._arrivals else None
        finish = self._earliest_finish(shares)

        if finish is None:
            # idle (or paused): jump to the next arrival
            if t_arrival is not None and (limit is None or t_arrival <= limit):
                self.now = max(self.now, t_arrival)
                return True, None
            if limit is None:
                raise NoPendingWork("no pending work")
            self.now = max(self.now, limit)
            return False, None

        dt, rank, entry = finish
        t_done = self.now + dt
        if (t_arrival is None or t_done <= t_arrival) and (limit is None or t_done <= limit):
            self._serve(shares, dt)
            self._queues[rank].remove(entry)
            if self._locked is entry:
                self._locked = None
            return True, Completion(entry.job, entry.started, self.now)
        if t_arrival is not None and (limit is None or t_arrival <= limit):
            self._serve(shares, t_arrival - self.now)
            return True, None
        self._serve(shares, limit - self.now)
        return False, None

    def next_completion(self, now: Optional[Number] = None) -> Completion:
        """Serve until the next job finishes and return it.

        *now* moves an idle clock forward; it has no effect while work is
        backlogged.
        """
        if now is not None:
            now = as_fraction(now)
            if now < self.now:
                raise ValueError(f"time regression: {now} < {self.now}")
            self._admit_due()
            idle_until_now = not self.backlogged and (not self._arrivals or self._arrivals[0][0] >= now)
            if idle_until_now:
                self.now = now
        if not self.backlogged and not self._arrivals:
            raise NoPendingWork("no pending work")
        while True:
            _, done = self._step(None)
            if done is not None:
                return done

    def peek_completion(self) -> Optional[tuple[Fraction, TransferJob]]:
        """Time and job of the next completion, without changing state."""
        if self._arrivals:
            probe = copy.deepcopy(self)
            probe.segments = None
            try:
                done = probe.next_completion()
            except NoPendingWork:
                return None
            return done.finish_time, done.job
        self._admit_due()
        finish = self._earliest_finish(self._shares())
        if finish is None:
            return None
        return self.now + finish[0], finish[2].job

    def advance(self, until: Number) -> list[Completion]:
        """Serve up to time *until*, returning every job finishing by then."""
        until = as_fraction(until)
        if until < self.now:
            raise ValueError(f"time regression: {until} < {self.now}")
        done: list[Completion] = []
        while True:
            progressed, completion = self._step(until)
            if completion is not None:
                done.append(completion)
            if not progressed:
                return done

    def drain(self) -> list[Completion]:
        """Serve everything, including future arrivals."""
        done = []
        while self.backlogged or self._arrivals:
            done.append(self.next_completion())
        return done


def feasibility_report(streams: Iterable[StreamSpec], profile) -> dict[str, dict[str, Any]]:
    """Offered load against link capacity, per direction."""
    streams = list(streams)
    report = {}
    for direction, capacity in ((Direction.UPLINK, profile.uplink_rate),
                                (Direction.DOWNLINK, profile.downlink_rate)):
        offered = sum((s.rate for s in streams if s.direction is direction), DataRate(0))
        report[direction.value] = {
            "offered_load": offered,
            "capacity": capacity,
            "utilization": offered / capacity,
            "feasible": offered <= capacity,
        }
    return report
