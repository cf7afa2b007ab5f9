"""Discrete-event simulation of the device -> edge -> device control loop.

Every uplink frame is transmitted over the shared uplink scheduler, travels
half a round trip to the edge, is processed there, and triggers one small
command that is sent back over the downlink scheduler and another half
round trip. Downlink feedback streams originate at the edge and only use
the downlink leg.

The clock is exact (``Fraction`` milliseconds); traces carry integer
nanoseconds.
"""
from __future__ import annotations

import enum
import heapq
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional

from .catalog import COMMAND_PAYLOAD_BITS, Direction, StreamKind, StreamSpec
from .control import FailsafeConfig, FailsafeController, LinkEvent, ModeTransition, Outcome
from .link import (JitterMode, LatencyBudget, LinkProfile, RttModel, frame_transmission_time,
                   sample_rtt)
from .scheduler import LinkScheduler, SchedulerPolicy, TransferJob
from .units import Number, as_fraction, ms_to_ns

TRACE_VERSION = 1


class ScenarioError(ValueError):
    """Invalid simulation input; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class CrosscheckUndefined(ValueError):
    pass


@dataclass(frozen=True)
class EdgeProcessing:
    """Edge compute time per frame: constant, or normal truncated at zero."""

    mean: Fraction = Fraction(0)
    sigma: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", as_fraction(self.mean))
        object.__setattr__(self, "sigma", as_fraction(self.sigma))
        if self.mean < 0 or self.sigma < 0:
            raise ValueError("edge processing mean and sigma must be nonnegative")

    @property
    def deterministic(self) -> bool:
        return self.sigma == 0

    def sample(self, rng: random.Random) -> Fraction:
        if self.sigma == 0:
            return self.mean
        while True:
            x = rng.gauss(float(self.mean), float(self.sigma))
            if x >= 0:
                return Fraction(round(x * 1_000_000), 1_000_000)

    def to_json(self) -> Any:
        if self.sigma == 0:
            return float(self.mean)
        return {"mean": float(self.mean), "sigma": float(self.sigma)}


@dataclass(frozen=True)
class Scenario:
    streams: tuple[StreamSpec, ...]
    link: LinkProfile
    rtt_model: Optional[RttModel] = None
    qos: SchedulerPolicy = SchedulerPolicy()
    edge_processing: EdgeProcessing = EdgeProcessing()
    budget: LatencyBudget = LatencyBudget()
    failsafe: FailsafeConfig = FailsafeConfig()
    duration: Fraction = Fraction(2)  # seconds
    seed: int = 0
    link_events: tuple[tuple[Fraction, LinkEvent], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "streams", tuple(self.streams))
        if self.rtt_model is None:
            object.__setattr__(self, "rtt_model", RttModel.deterministic(self.link.rtt_mean))
        object.__setattr__(self, "duration", as_fraction(self.duration))
        events = tuple(sorted(((as_fraction(t), LinkEvent(e)) for t, e in self.link_events),
                              key=lambda te: te[0]))
        object.__setattr__(self, "link_events", events)
        if self.duration <= 0:
            raise ScenarioError("duration_s", "must be > 0")
        ids = [s.id for s in self.streams]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ScenarioError("streams", f"duplicate stream ids {dupes}")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed", "must be a 64-bit unsigned integer")
        for t, _ in events:
            if t < 0:
                raise ScenarioError("link_events", "event times must be >= 0")

    @property
    def duration_ms(self) -> Fraction:
        return self.duration * 1000

    @property
    def command_deadline(self) -> Fraction:
        deadline = self.failsafe.command_deadline
        return self.budget.upper if deadline is None else deadline

    @property
    def command_stream(self) -> StreamSpec:
        for s in self.streams:
            if s.kind is StreamKind.COMMAND and s.direction is Direction.DOWNLINK:
                return s
        return StreamSpec("command", StreamKind.COMMAND, Direction.DOWNLINK, priority=0,
                          payload_bits=COMMAND_PAYLOAD_BITS, frame_interval=Fraction(1, 30))

    def traffic_streams(self) -> list[StreamSpec]:
        """Streams that generate frames on their own schedule."""
        return [s for s in self.streams if s.kind is not StreamKind.COMMAND]


class FrameOutcome(str, enum.Enum):
    DELIVERED = "Delivered"
    DROPPED = "Dropped"
    IN_FLIGHT = "InFlightAtEnd"


@dataclass
class FrameRecord:
    stream_id: str
    seq: int
    direction: Direction
    t_generated: Fraction
    t_tx_start: Optional[Fraction] = None
    t_tx_done: Optional[Fraction] = None
    t_edge_in: Optional[Fraction] = None
    t_edge_done: Optional[Fraction] = None
    t_dl_tx_start: Optional[Fraction] = None
    t_dl_tx_done: Optional[Fraction] = None
    t_cmd_received: Optional[Fraction] = None
    t_dropped: Optional[Fraction] = None
    outcome: FrameOutcome = FrameOutcome.IN_FLIGHT

    @property
    def control_latency(self) -> Optional[Fraction]:
        if self.outcome is not FrameOutcome.DELIVERED:
            return None
        return self.t_cmd_received - self.t_generated

    def components(self) -> Optional[dict[str, Fraction]]:
        """Latency split; the parts add up to ``control_latency`` exactly."""
        if self.outcome is not FrameOutcome.DELIVERED:
            return None
        return {
            "queueing": self.t_tx_start - self.t_generated,
            "transmission": self.t_tx_done - self.t_tx_start,
            "propagation": (self.t_edge_in - self.t_tx_done) + (self.t_cmd_received - self.t_dl_tx_done),
            "processing": self.t_edge_done - self.t_edge_in,
            "downlink": self.t_dl_tx_done - self.t_edge_done,
        }

    def to_json(self) -> dict[str, Any]:
        def ns(t: Optional[Fraction]) -> Optional[int]:
            return None if t is None else ms_to_ns(t)

        latency = self.control_latency
        parts = self.components()
        return {
            "type": "frame",
            "trace_version": TRACE_VERSION,
            "stream_id": self.stream_id,
            "seq": self.seq,
            "direction": self.direction.value,
            "t_generated_ns": ns(self.t_generated),
            "t_tx_start_ns": ns(self.t_tx_start),
            "t_tx_done_ns": ns(self.t_tx_done),
            "t_edge_in_ns": ns(self.t_edge_in),
            "t_edge_done_ns": ns(self.t_edge_done),
            "t_dl_tx_start_ns": ns(self.t_dl_tx_start),
            "t_dl_tx_done_ns": ns(self.t_dl_tx_done),
            "t_cmd_received_ns": ns(self.t_cmd_received),
            "t_dropped_ns": ns(self.t_dropped),
            "outcome": self.outcome.value,
            "control_latency_ms": None if latency is None else _ms(latency),
            "components_ms": None if parts is None else {k: _ms(v) for k, v in parts.items()},
        }


def _ms(value: Fraction) -> float:
    return round(float(value), 6)


@dataclass
class EventTrace:
    frames: list[FrameRecord] = field(default_factory=list)
    transitions: list[ModeTransition] = field(default_factory=list)

    def records(self) -> list[dict[str, Any]]:
        keyed = [((f.t_generated, 1, f.stream_id, f.seq), f.to_json()) for f in self.frames]
        for i, t in enumerate(self.transitions):
            doc = t.to_json()
            doc["trace_version"] = TRACE_VERSION
            keyed.append(((t.time, 0, "", i), doc))
        keyed.sort(key=lambda kv: kv[0])
        return [doc for _, doc in keyed]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def _percentile(ordered: list[Fraction], p: int) -> Fraction:
    """Nearest-rank percentile of an ascending list."""
    rank = max(1, math.ceil(p * len(ordered) / 100))
    return ordered[rank - 1]


@dataclass
class LatencyStats:
    count: int
    mean: Fraction
    p50: Fraction
    p95: Fraction
    p99: Fraction
    max: Fraction

    @classmethod
    def of(cls, samples: Iterable[Fraction]) -> Optional[LatencyStats]:
        ordered = sorted(samples)
        if not ordered:
            return None
        return cls(len(ordered), sum(ordered, Fraction(0)) / len(ordered),
                   _percentile(ordered, 50), _percentile(ordered, 95),
                   _percentile(ordered, 99), ordered[-1])

    def to_json(self) -> dict[str, Any]:
        return {"count": self.count, "mean_ms": _ms(self.mean), "p50_ms": _ms(self.p50),
                "p95_ms": _ms(self.p95), "p99_ms": _ms(self.p99), "max_ms": _ms(self.max)}


@dataclass
class StreamMetrics:
    generated: int = 0
    delivered: int = 0
    dropped: int = 0
    in_flight: int = 0
    latency: Optional[LatencyStats] = None

    def to_json(self) -> dict[str, Any]:
        return {"generated": self.generated, "delivered": self.delivered,
                "dropped": self.dropped, "in_flight": self.in_flight,
                "latency": None if self.latency is None else self.latency.to_json()}


class ConservationError(AssertionError):
    pass


@dataclass
class Metrics:
    per_stream: dict[str, StreamMetrics]
    budget_violation_fraction: Fraction
    fallback_episodes: int
    fallback_time_ms: Fraction

    def __post_init__(self) -> None:
        self.check_conservation()
        if not 0 <= self.budget_violation_fraction <= 1:
            raise ValueError("violation fraction outside [0, 1]")

    @property
    def generated(self) -> int:
        return sum(m.generated for m in self.per_stream.values())

    @property
    def delivered(self) -> int:
        return sum(m.delivered for m in self.per_stream.values())

    @property
    def dropped(self) -> int:
        return sum(m.dropped for m in self.per_stream.values())

    @property
    def in_flight(self) -> int:
        return sum(m.in_flight for m in self.per_stream.values())

    def check_conservation(self) -> None:
        for sid, m in self.per_stream.items():
            if m.generated != m.delivered + m.dropped + m.in_flight:
                raise ConservationError(
                    f"{sid}: generated {m.generated} != delivered {m.delivered} "
                    f"+ dropped {m.dropped} + in-flight {m.in_flight}")

    def to_json(self) -> dict[str, Any]:
        return {
            "trace_version": TRACE_VERSION,
            "frames": {"generated": self.generated, "delivered": self.delivered,
                       "dropped": self.dropped, "in_flight": self.in_flight},
            "per_stream": {sid: m.to_json() for sid, m in sorted(self.per_stream.items())},
            "budget_violation_fraction": float(self.budget_violation_fraction),
            "fallback": {"episodes": self.fallback_episodes,
                         "total_time_ms": _ms(self.fallback_time_ms)},
        }


class _Ev(enum.IntEnum):
    # processing order for simultaneous events
    LINK = 0
    CMD_ARRIVE = 1
    EDGE_ARRIVE = 2
    EDGE_DONE = 3
    GENERATE = 4
    DEADLINE = 5


class _Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.sc = scenario
        self.end = scenario.duration_ms
        self.ul = LinkScheduler(scenario.link.uplink_rate, scenario.qos)
        self.dl = LinkScheduler(scenario.link.downlink_rate, scenario.qos)
        self.rtt_rng = random.Random(f"{scenario.seed}/rtt")
        self.edge_rng = random.Random(f"{scenario.seed}/edge")
        self.control = FailsafeController(scenario.failsafe)
        self.command = scenario.command_stream
        self.heap: list[tuple[Fraction, int, int, tuple]] = []
        self.counter = 0
        self.records: dict[tuple[str, int], FrameRecord] = {}
        self.order: list[FrameRecord] = []
        self.rtts: dict[tuple[str, int], Fraction] = {}
        # commands are numbered by the edge in emission order, which can
        # differ from frame order once RTT or processing time varies
        self.cmd_seq: dict[str, int] = {}
        self.cmd_frames: dict[tuple[str, int], FrameRecord] = {}

    def push(self, t: Fraction, kind: _Ev, *payload: Any) -> None:
        self.counter += 1
        heapq.heappush(self.heap, (t, int(kind), self.counter, payload))

    def run(self) -> tuple[EventTrace, Metrics]:
        sc = self.sc
        for stream in sc.traffic_streams():
            self.push(Fraction(0), _Ev.GENERATE, stream, 0)
        for t, event in sc.link_events:
            self.push(t, _Ev.LINK, event)

        while True:
            t_heap = self.heap[0][0] if self.heap else None
            best = None
            for sched in (self.ul, self.dl):
                peek = sched.peek_completion()
                if peek is not None and (best is None or peek[0] < best[0]):
                    best = (peek[0], sched)
            if best is not None and best[0] <= self.end and (t_heap is None or best[0] <= t_heap):
                sched = best[1]
                done = sched.next_completion()
                self.on_completion(sched, done)
                continue
            if t_heap is None or t_heap > self.end:
                break
            t, kind, _, payload = heapq.heappop(self.heap)
            for sched in (self.ul, self.dl):
                if sched.advance(t):
                    raise AssertionError("completion skipped by event loop")
            self.dispatch(t, _Ev(kind), payload)

        return self.finish()

    def dispatch(self, t: Fraction, kind: _Ev, payload: tuple) -> None:
        if kind is _Ev.GENERATE:
            self.on_generate(t, *payload)
        elif kind is _Ev.EDGE_ARRIVE:
            rec = payload[0]
            rec.t_edge_in = t
            self.push(t + self.sc.edge_processing.sample(self.edge_rng), _Ev.EDGE_DONE, rec)
        elif kind is _Ev.EDGE_DONE:
            rec = payload[0]
            rec.t_edge_done = t
            cmd_id = f"cmd:{rec.stream_id}"
            seq = self.cmd_seq.get(cmd_id, 0)
            self.cmd_seq[cmd_id] = seq + 1
            self.cmd_frames[(cmd_id, seq)] = rec
            self.dl.enqueue(TransferJob(cmd_id, seq, self.command.frame_bits, t, self.command.priority))
        elif kind is _Ev.CMD_ARRIVE:
            rec = payload[0]
            rec.t_cmd_received = t
            rec.outcome = FrameOutcome.DELIVERED
            if rec.direction is Direction.UPLINK and rec.control_latency <= self.sc.command_deadline:
                self.control.on_command_outcome(Outcome.ON_TIME, t)
        elif kind is _Ev.DEADLINE:
            rec = payload[0]
            if rec.outcome is not FrameOutcome.DELIVERED:
                self.control.on_command_outcome(Outcome.MISSED, t)
        elif kind is _Ev.LINK:
            event = payload[0]
            self.ul.set_paused(event is LinkEvent.DOWN)
            self.dl.set_paused(event is LinkEvent.DOWN)
            self.control.on_link_event(event, t)

    def on_generate(self, t: Fraction, stream: StreamSpec, seq: int) -> None:
        period = stream.frame_interval * 1000
        # only frames whose whole period fits in the run
        if t + period > self.end:
            return
        self.push(t + period, _Ev.GENERATE, stream, seq + 1)
        rec = FrameRecord(stream.id, seq, stream.direction, t)
        self.records[(stream.id, seq)] = rec
        self.order.append(rec)
        job = TransferJob(stream.id, seq, stream.frame_bits, t, stream.priority)
        if stream.direction is Direction.UPLINK:
            sched = self.ul
            self.push(t + self.sc.command_deadline, _Ev.DEADLINE, rec)
        else:
            sched = self.dl
            rec.t_tx_start = rec.t_tx_done = rec.t_edge_in = rec.t_edge_done = t
        sched.enqueue(job)
        waiting = sched.waiting(stream.id)
        # newest frame wins: drop the stalest frames that have not started
        for stale in waiting[: max(0, len(waiting) - self.sc.qos.queue_limit)]:
            sched.discard(stale)
            dropped = self.records[stale.key]
            dropped.outcome = FrameOutcome.DROPPED
            dropped.t_dropped = t

    def rtt_half(self, key: tuple[str, int]) -> Fraction:
        if key not in self.rtts:
            self.rtts[key] = sample_rtt(self.sc.rtt_model, self.rtt_rng)
        return self.rtts[key] / 2

    def on_completion(self, sched: LinkScheduler, done) -> None:
        job = done.job
        t = done.finish_time
        if sched is self.ul:
            rec = self.records[job.key]
            rec.t_tx_start, rec.t_tx_done = done.start_time, t
            self.push(t + self.rtt_half(job.key), _Ev.EDGE_ARRIVE, rec)
            return
        if job.key in self.cmd_frames:
            rec = self.cmd_frames.pop(job.key)
        else:
            rec = self.records[job.key]
        rec.t_dl_tx_start, rec.t_dl_tx_done = done.start_time, t
        self.push(t + self.rtt_half((rec.stream_id, rec.seq)), _Ev.CMD_ARRIVE, rec)

    def finish(self) -> tuple[EventTrace, Metrics]:
        per_stream = {s.id: StreamMetrics() for s in self.sc.traffic_streams()}
        latencies: dict[str, list[Fraction]] = {sid: [] for sid in per_stream}
        violations = judged = 0
        for rec in self.order:
            m = per_stream[rec.stream_id]
            m.generated += 1
            if rec.outcome is FrameOutcome.DELIVERED:
                m.delivered += 1
                latencies[rec.stream_id].append(rec.control_latency)
            elif rec.outcome is FrameOutcome.DROPPED:
                m.dropped += 1
            else:
                m.in_flight += 1
            if rec.direction is Direction.UPLINK and rec.outcome is not FrameOutcome.IN_FLIGHT:
                judged += 1
                if rec.outcome is FrameOutcome.DROPPED or rec.control_latency > self.sc.budget.upper:
                    violations += 1
        for sid, m in per_stream.items():
            m.latency = LatencyStats.of(latencies[sid])
        metrics = Metrics(
            per_stream=per_stream,
            budget_violation_fraction=Fraction(violations, judged) if judged else Fraction(0),
            fallback_episodes=self.control.fallback_episodes,
            fallback_time_ms=self.control.fallback_time(self.end),
        )
        return EventTrace(self.order, list(self.control.transitions)), metrics


def run(scenario: Scenario) -> tuple[EventTrace, Metrics]:
    """Simulate *scenario*; the result depends only on the scenario and its seed."""
    return _Simulation(scenario).run()


def analytic_crosscheck(scenario: Scenario) -> dict[str, Fraction]:
    """Closed-form steady-state control latency of a single uplink stream."""
    uplink = [s for s in scenario.traffic_streams() if s.direction is Direction.UPLINK]
    if scenario.rtt_model.mode is not JitterMode.DETERMINISTIC and scenario.rtt_model.sigma != 0:
        raise CrosscheckUndefined("crosscheck undefined: RTT model is not deterministic")
    if not scenario.edge_processing.deterministic:
        raise CrosscheckUndefined("crosscheck undefined: edge processing is not deterministic")
    if len(uplink) != 1:
        raise CrosscheckUndefined("crosscheck undefined: needs exactly one uplink stream")
    stream = uplink[0]
    if stream.rate / scenario.link.uplink_rate >= 1:
        raise CrosscheckUndefined("crosscheck undefined: uplink utilization >= 1")
    tx = frame_transmission_time(stream.frame_bits, scenario.link.uplink_rate)
    return {stream.id: tx + scenario.rtt_model.mean + scenario.edge_processing.mean}


def testbed_scenario(link: LinkProfile, *, duration: Number = 2, edge_processing: Number = 0,
                     fps: Number = 30, seed: int = 0) -> Scenario:
    """Single raw RGBD camera uplink plus the downlink command, as on the testbed."""
    from .catalog import catalog_by_id

    catalog = catalog_by_id()
    camera = catalog["rgbd_camera"]
    if as_fraction(fps) != camera.fps:
        camera = StreamSpec(camera.id, camera.kind, camera.direction, camera.priority,
                            width=camera.width, height=camera.height,
                            bits_per_pixel=camera.bits_per_pixel, fps=as_fraction(fps))
    return Scenario(streams=(camera, catalog["command"]), link=link,
                    edge_processing=EdgeProcessing(as_fraction(edge_processing)),
                    duration=as_fraction(duration), seed=seed)
