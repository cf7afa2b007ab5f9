"""Device and edge agents exchanging frames over a shaped loopback transport.

The device paces frame bytes through a token bucket at the profile's
uplink rate and holds every paced piece for half the profile's RTT before
writing it, so the edge sees the frame as it would arrive over the modeled
uplink. Commands coming back are stamped on arrival and charged the other
half of the RTT.
"""
from __future__ import annotations

import asyncio
import collections
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..catalog import StreamSpec
from ..link import LinkProfile
from ..units import as_fraction
from .shaper import SEND_QUANTUM, ShaperConfig, TokenBucket
from .wire import (FrameDecoder, MsgType, Reassembler, WireError, WireFrame, split_frame)

log = logging.getLogger(__name__)

DATAGRAM_CHUNK = 60_000
PROBE_TIMEOUT_S = 2.0
ANSWER_GRACE_S = 1.0


class TransportError(ConnectionError):
    pass


async def _sleep_until(deadline: float) -> None:
    delay = deadline - time.monotonic()
    if delay > 0:
        await asyncio.sleep(delay)


# -- edge --------------------------------------------------------------------

@dataclass
class EdgeStats:
    frames: int = 0
    commands: int = 0
    probes: int = 0
    malformed: int = 0


class EdgeAgent:
    """Answers every fully reassembled frame with one command.

    The command echoes the frame's ``seq`` and ``send_ts_ns`` and is sent
    ``processing_delay_ms`` after the last chunk arrived.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 processing_delay_ms: float = 0.0, datagram: bool = False) -> None:
        if processing_delay_ms < 0:
            raise ValueError("processing delay must be >= 0")
        self.host = host
        self.port = port
        self.processing_delay = processing_delay_ms / 1000
        self.datagram = datagram
        self.stats = EdgeStats()
        self._server: Optional[asyncio.base_events.Server] = None
        self._udp: Optional[asyncio.DatagramTransport] = None
        self._closed = asyncio.Event()

    async def start(self) -> tuple[str, int]:
        loop = asyncio.get_running_loop()
        if self.datagram:
            self._udp, _ = await loop.create_datagram_endpoint(
                lambda: _EdgeDatagram(self), local_addr=(self.host, self.port))
            sockname = self._udp.get_extra_info("sockname")
        else:
            self._server = await asyncio.start_server(self._handle, self.host, self.port)
            sockname = self._server.sockets[0].getsockname()
        self.port = sockname[1]
        log.info("edge agent listening on %s:%d (%s)", self.host, self.port,
                 "udp" if self.datagram else "tcp")
        return self.host, self.port

    async def serve_forever(self) -> None:
        if self._server is None and self._udp is None:
            await self.start()
        await self._closed.wait()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._udp is not None:
            self._udp.close()
        self._closed.set()

    def on_message(self, msg: WireFrame, reassembler: Reassembler,
                   send: Callable[[bytes], None]) -> None:
        if msg.msg_type is MsgType.PROBE:
            self.stats.probes += 1
            send(WireFrame(MsgType.PROBE, msg.stream_id, msg.seq, msg.send_ts_ns).encode())
            return
        if msg.msg_type is not MsgType.FRAME:
            return
        frame = reassembler.add(msg)
        if frame is None:
            return
        self.stats.frames += 1
        if self.processing_delay > 0:
            asyncio.get_running_loop().call_later(self.processing_delay, self._command, frame, send)
        else:
            self._command(frame, send)

    def _command(self, frame, send: Callable[[bytes], None]) -> None:
        payload = struct.pack(">Q", time.monotonic_ns())
        try:
            send(WireFrame(MsgType.COMMAND, frame.stream_id, frame.seq, frame.send_ts_ns, payload).encode())
        except (ConnectionError, RuntimeError):
            return
        self.stats.commands += 1

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        decoder = FrameDecoder()
        reassembler = Reassembler()

        def send(data: bytes) -> None:
            if writer.is_closing():
                raise ConnectionError("peer gone")
            writer.write(data)

        try:
            while True:
                data = await reader.read(1 << 16)
                if not data:
                    break
                before = decoder.malformed
                for msg in decoder.feed(data):
                    self.on_message(msg, reassembler, send)
                self.stats.malformed += decoder.malformed - before
        except ConnectionError:
            pass
        finally:
            writer.close()


class _EdgeDatagram(asyncio.DatagramProtocol):
    def __init__(self, agent: EdgeAgent) -> None:
        self.agent = agent
        self.transport: Optional[asyncio.DatagramTransport] = None
        self.reassemblers: dict[Any, Reassembler] = collections.defaultdict(Reassembler)

    def connection_made(self, transport) -> None:
        self.transport = transport

    def datagram_received(self, data: bytes, addr) -> None:
        try:
            msg = WireFrame.decode(data)
        except WireError:
            self.agent.stats.malformed += 1
            return
        self.agent.on_message(msg, self.reassemblers[addr], lambda out: self.transport.sendto(out, addr))


# -- device ------------------------------------------------------------------

@dataclass
class EmpiricalReport:
    samples_ms: list[float] = field(default_factory=list)
    achieved_ul_mbps: float = 0.0
    missed: int = 0
    malformed: int = 0
    frames_generated: int = 0
    frames_sent: int = 0
    dropped: int = 0
    duration_s: float = 0.0
    connection_lost: bool = False

    @property
    def mean_ms(self) -> Optional[float]:
        if not self.samples_ms:
            return None
        return sum(self.samples_ms) / len(self.samples_ms)

    def to_json(self) -> dict[str, Any]:
        return {
            "samples_ms": [round(s, 6) for s in self.samples_ms],
            "achieved_ul_mbps": round(self.achieved_ul_mbps, 6),
            "missed": self.missed,
            "malformed": self.malformed,
            "frames_generated": self.frames_generated,
            "frames_sent": self.frames_sent,
            "dropped": self.dropped,
            "duration_s": self.duration_s,
            "mean_ms": None if self.mean_ms is None else round(self.mean_ms, 6),
            "connection_lost": self.connection_lost,
        }


class _DeviceLink:
    """Byte pipe to the edge: TCP stream or UDP datagrams."""

    def __init__(self, datagram: bool) -> None:
        self.datagram = datagram
        self.decoder = FrameDecoder()
        self.incoming: asyncio.Queue[Optional[WireFrame]] = asyncio.Queue()
        self._writer: Optional[asyncio.StreamWriter] = None
        self._reader_task: Optional[asyncio.Task] = None
        self._udp: Optional[asyncio.DatagramTransport] = None
        self.malformed = 0

    async def connect(self, host: str, port: int) -> None:
        loop = asyncio.get_running_loop()
        try:
            if self.datagram:
                self._udp, _ = await loop.create_datagram_endpoint(
                    lambda: _DeviceDatagram(self), remote_addr=(host, port))
            else:
                reader, self._writer = await asyncio.open_connection(host, port)
                self._reader_task = asyncio.create_task(self._read(reader))
        except OSError as exc:
            raise TransportError(f"cannot reach edge at {host}:{port}: {exc}") from exc

    async def _read(self, reader: asyncio.StreamReader) -> None:
        try:
            while True:
                data = await reader.read(1 << 16)
                if not data:
                    break
                for msg in self.decoder.feed(data):
                    self.incoming.put_nowait(msg)
        except ConnectionError:
            pass
        finally:
            self.malformed = self.decoder.malformed
            self.incoming.put_nowait(None)

    async def send(self, data: bytes) -> None:
        if self._udp is not None:
            self._udp.sendto(data)
            return
        if self._writer.is_closing():
            raise ConnectionError("connection closed")
        self._writer.write(data)
        await self._writer.drain()

    async def close(self) -> None:
        if self._udp is not None:
            self._udp.close()
            self.incoming.put_nowait(None)
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except ConnectionError:
                pass
        if self._reader_task is not None:
            await asyncio.gather(self._reader_task, return_exceptions=True)


class _DeviceDatagram(asyncio.DatagramProtocol):
    def __init__(self, link: _DeviceLink) -> None:
        self.link = link

    def datagram_received(self, data: bytes, addr) -> None:
        try:
            self.link.incoming.put_nowait(WireFrame.decode(data))
        except WireError:
            self.link.malformed += 1

    def error_received(self, exc: Exception) -> None:
        log.debug("datagram error: %s", exc)


def frame_count(duration_s, interval_s) -> int:
    """Frames whose whole period fits in the run."""
    return math.floor(as_fraction(duration_s) / as_fraction(interval_s))


async def run_device(profile: LinkProfile, stream: StreamSpec, duration_s: float,
                     host: str = "127.0.0.1", port: int = 5600, *,
                     frame_bits: Optional[int] = None, queue_limit: int = 3,
                     datagram: bool = False, stream_index: int = 0,
                     shaper: Optional[ShaperConfig] = None) -> EmpiricalReport:
    """Stream frames of *stream* to an edge agent for *duration_s* seconds."""
    if stream.frame_interval is None:
        raise ValueError(f"stream {stream.id} has no frame interval")
    bits = int(stream.frame_bits if frame_bits is None else frame_bits)
    frame_bytes = math.ceil(bits / 8)
    interval = float(stream.frame_interval)
    n_frames = frame_count(as_fraction(duration_s), stream.frame_interval)
    chunk = DATAGRAM_CHUNK if datagram else 1 << 20
    if shaper is None:
        quantum = DATAGRAM_CHUNK + 24 if datagram else SEND_QUANTUM
        shaper = ShaperConfig.for_profile(profile, quantum)
    delay_s = float(shaper.added_one_way_delay) / 1000
    delay_ns = round(delay_s * 1e9)

    report = EmpiricalReport(duration_s=float(duration_s))
    if n_frames == 0:
        return report

    link = _DeviceLink(datagram)
    await link.connect(host, port)
    try:
        await _probe(link, stream_index)
        session = _DeviceSession(link, report, shaper, stream_index, frame_bytes, chunk,
                                 interval, n_frames, queue_limit, delay_s, delay_ns,
                                 float(duration_s))
        await session.run()
    finally:
        await link.close()
    report.malformed = link.malformed if datagram else link.decoder.malformed
    return report


async def _probe(link: _DeviceLink, stream_index: int) -> None:
    await link.send(WireFrame(MsgType.PROBE, stream_index, 0, time.monotonic_ns()).encode())
    try:
        while True:
            msg = await asyncio.wait_for(link.incoming.get(), PROBE_TIMEOUT_S)
            if msg is None:
                raise TransportError("edge closed the connection")
            if msg.msg_type is MsgType.PROBE:
                return
    except asyncio.TimeoutError:
        raise TransportError("edge did not answer the probe") from None


class _DeviceSession:
    def __init__(self, link, report, shaper, stream_index, frame_bytes, chunk,
                 interval, n_frames, queue_limit, delay_s, delay_ns, duration) -> None:
        self.link = link
        self.report = report
        self.bucket = TokenBucket(float(shaper.rate.bits_per_second), shaper.bucket_depth,
                                  time.monotonic())
        self.quantum = shaper.bucket_depth // 8
        self.stream_index = stream_index
        self.frame_bytes = frame_bytes
        self.chunk = chunk
        self.interval = interval
        self.n_frames = n_frames
        self.queue_limit = queue_limit
        self.delay_s = delay_s
        self.delay_ns = delay_ns
        self.duration = duration
        self.pending: collections.deque[tuple[int, int]] = collections.deque()
        self.wakeup = asyncio.Event()
        self.generation_done = False
        self.delay_line: asyncio.Queue = asyncio.Queue()
        self.outstanding: set[int] = set()
        self.samples: dict[int, float] = {}
        self.all_answered = asyncio.Event()
        self.window_bytes = 0
        self.lost = False

    async def run(self) -> None:
        self.t0 = time.monotonic()
        reader = asyncio.create_task(self._receive())
        workers = [asyncio.create_task(c) for c in (self._generate(), self._pace(), self._write())]
        try:
            await asyncio.gather(*workers)
        except ConnectionError:
            self.lost = True
            for w in workers:
                w.cancel()
        if not self.lost and self.outstanding:
            try:
                await asyncio.wait_for(self.all_answered.wait(), ANSWER_GRACE_S)
            except asyncio.TimeoutError:
                pass
        reader.cancel()
        await asyncio.gather(reader, return_exceptions=True)

        r = self.report
        r.samples_ms = [self.samples[k] for k in sorted(self.samples)]
        r.missed = r.frames_generated - len(self.samples)
        r.achieved_ul_mbps = self.window_bytes * 8 / self.duration / 1e6
        r.connection_lost = self.lost

    async def _generate(self) -> None:
        for k in range(self.n_frames):
            await _sleep_until(self.t0 + k * self.interval)
            self.pending.append((k, time.monotonic_ns()))
            self.report.frames_generated += 1
            if len(self.pending) > self.queue_limit:
                self.pending.popleft()
                self.report.dropped += 1
            self.wakeup.set()
        self.generation_done = True
        self.wakeup.set()

    async def _pace(self) -> None:
        try:
            while True:
                if not self.pending:
                    if self.generation_done:
                        return
                    self.wakeup.clear()
                    await self.wakeup.wait()
                    continue
                seq, ts = self.pending.popleft()
                chunks = split_frame(MsgType.FRAME, self.stream_index, seq, ts,
                                     bytes(self.frame_bytes), self.chunk)
                pieces = [c.encode() for c in chunks]
                if not self.link.datagram:
                    data = b"".join(pieces)
                    pieces = [data[i:i + self.quantum] for i in range(0, len(data), self.quantum)]
                self.outstanding.add(seq)
                self.all_answered.clear()
                departure = time.monotonic()
                for piece in pieces:
                    departure = self.bucket.reserve(len(piece) * 8, departure)
                    self.delay_line.put_nowait((departure + self.delay_s, piece))
                self.report.frames_sent += 1
                await _sleep_until(departure)
        finally:
            self.delay_line.put_nowait(None)

    async def _write(self) -> None:
        window_end = self.t0 + self.duration
        while True:
            item = await self.delay_line.get()
            if item is None:
                return
            release, piece = item
            await _sleep_until(release)
            await self.link.send(piece)
            if time.monotonic() <= window_end:
                self.window_bytes += len(piece)

    async def _receive(self) -> None:
        while True:
            msg = await self.link.incoming.get()
            if msg is None:
                return
            if msg.msg_type is not MsgType.COMMAND or msg.seq not in self.outstanding:
                continue
            arrival = time.monotonic_ns() + self.delay_ns
            self.samples[msg.seq] = (arrival - msg.send_ts_ns) / 1e6
            self.outstanding.discard(msg.seq)
            if not self.outstanding:
                self.all_answered.set()


def device_agent(profile: LinkProfile, stream: StreamSpec, duration_s: float,
                 endpoint: tuple[str, int], **kwargs: Any) -> EmpiricalReport:
    """Blocking wrapper around :func:`run_device`."""
    host, port = endpoint
    return asyncio.run(run_device(profile, stream, duration_s, host, port, **kwargs))


async def loopback_session(profile: LinkProfile, stream: StreamSpec, duration_s: float,
                           processing_delay_ms: float = 0.0, **kwargs: Any) -> tuple[EmpiricalReport, EdgeStats]:
    """Run an edge agent and a device agent against each other on 127.0.0.1."""
    edge = EdgeAgent("127.0.0.1", 0, processing_delay_ms, datagram=kwargs.get("datagram", False))
    host, port = await edge.start()
    try:
        report = await run_device(profile, stream, duration_s, host, port, **kwargs)
    finally:
        await edge.stop()
    return report, edge.stats
