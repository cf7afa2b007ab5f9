import asyncio
import socket
import time

import pytest

from limbnet.catalog import catalog_by_id
from limbnet.emu import (EdgeAgent, FrameDecoder, MsgType, ShaperConfig, TransportError, WireFrame,
                         device_agent, loopback_session, split_frame)
from limbnet.emu.agents import frame_count
from limbnet.link import get_profile
from limbnet.units import DataRate

CAMERA = catalog_by_id()["rgbd_camera"]


async def _exchange(agent, payload, want):
    host, port = await agent.start()
    reader, writer = await asyncio.open_connection(host, port)
    writer.write(payload)
    await writer.drain()
    decoder = FrameDecoder()
    got = []
    while len(got) < want:
        got += decoder.feed(await asyncio.wait_for(reader.read(4096), 2))
    writer.close()
    await agent.stop()
    return got


def test_edge_echoes_seq_after_processing_delay():
    agent = EdgeAgent(processing_delay_ms=50)
    chunks = split_frame(MsgType.FRAME, 1, 7, 4242, bytes(30), chunk_size=10)
    data = b"".join(c.encode() for c in chunks)
    start = time.monotonic()
    (cmd,) = asyncio.run(_exchange(agent, data, 1))
    assert time.monotonic() - start >= 0.05
    assert (cmd.msg_type, cmd.seq, cmd.send_ts_ns, cmd.stream_id) == (MsgType.COMMAND, 7, 4242, 1)
    assert len(cmd.payload) == 8
    assert agent.stats.frames == 1 and agent.stats.commands == 1


def test_edge_counts_garbage_and_keeps_going():
    agent = EdgeAgent()
    data = b"GARBAGE!" + WireFrame(MsgType.PROBE, 0, 3, 0).encode()
    (probe,) = asyncio.run(_exchange(agent, data, 1))
    assert probe.msg_type is MsgType.PROBE and probe.seq == 3
    assert agent.stats.malformed >= 1


def test_edge_datagram_bad_magic():
    async def go():
        agent = EdgeAgent(datagram=True)
        host, port = await agent.start()

        def client():
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
                s.sendto(b"XXXX" + bytes(20), (host, port))
                s.sendto(WireFrame(MsgType.FRAME, 0, 1, 0).encode(), (host, port))
                s.settimeout(2)
                return WireFrame.decode(s.recv(100))

        reply = await asyncio.to_thread(client)
        await agent.stop()
        return agent, reply

    agent, reply = asyncio.run(go())
    assert agent.stats.malformed == 1
    assert reply.msg_type is MsgType.COMMAND and reply.seq == 1


def test_frame_count_floor():
    assert frame_count(10, CAMERA.frame_interval) == 300
    assert frame_count(0.01, CAMERA.frame_interval) == 0


def test_zero_frames_gives_empty_report():
    # no connection is attempted, so no edge is needed
    report = device_agent(get_profile("5g100opt"), CAMERA, 0.01, ("127.0.0.1", 1))
    assert report.samples_ms == [] and report.frames_generated == 0 and report.missed == 0
    assert report.mean_ms is None


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_unreachable_edge_raises_transport_error():
    with pytest.raises(TransportError):
        device_agent(get_profile("5g100opt"), CAMERA, 1, ("127.0.0.1", _free_port()))


def test_short_loopback_near_model():
    report, stats = asyncio.run(loopback_session(get_profile("5g100opt"), CAMERA, 2))
    assert report.frames_generated == 60
    assert len(report.samples_ms) == 60 and report.missed == 0
    assert abs(report.mean_ms - 40.8) <= max(0.15 * 40.8, 5)
    assert stats.commands == 60
    assert not report.connection_lost


def test_short_loopback_with_processing_delay():
    report, _ = asyncio.run(loopback_session(get_profile("5g100opt"), CAMERA, 1, processing_delay_ms=20))
    assert abs(report.mean_ms - 60.8) <= max(0.15 * 60.8, 5)


def test_datagram_loopback():
    report, _ = asyncio.run(loopback_session(get_profile("5g100opt"), CAMERA, 1, datagram=True))
    assert report.frames_generated == 30
    assert len(report.samples_ms) >= 25


def test_shaper_limits_throughput():
    shaper = ShaperConfig(DataRate.mbps(22), 16 * 1024 * 8, 12)
    report, _ = asyncio.run(loopback_session(get_profile("4g10"), CAMERA, 2, shaper=shaper))
    assert report.dropped > 0
    assert abs(report.achieved_ul_mbps - 22) <= 2.2
