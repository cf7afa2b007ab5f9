"""Binary framing between the device and edge agents.

Header layout (24 bytes, big-endian)::

    magic      4s   b"CLMB"
    version    B    0x01
    msg_type   B    0x01 frame, 0x02 command, 0x03 probe
    stream_id  B
    flags      B    bit0 = last chunk of the frame
    seq        I
    send_ts_ns Q    sender's monotonic clock
    length     I    payload bytes, at most 1 MiB per chunk
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterator, Optional

MAGIC = b"CLMB"
VERSION = 0x01
HEADER = struct.Struct(">4sBBBBIQI")
HEADER_SIZE = HEADER.size
MAX_CHUNK = 1 << 20
FLAG_LAST = 0x01


class MsgType(enum.IntEnum):
    FRAME = 0x01
    COMMAND = 0x02
    PROBE = 0x03


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class WireFrame:
    msg_type: MsgType
    stream_id: int
    seq: int
    send_ts_ns: int
    payload: bytes = b""
    flags: int = FLAG_LAST

    def __post_init__(self) -> None:
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        if not 0 <= self.stream_id <= 0xFF:
            raise WireError(f"stream_id out of range: {self.stream_id}")
        if not 0 <= self.flags <= 0xFF:
            raise WireError(f"flags out of range: {self.flags}")
        if not 0 <= self.seq < 2**32:
            raise WireError(f"seq out of range: {self.seq}")
        if not 0 <= self.send_ts_ns < 2**64:
            raise WireError(f"send_ts_ns out of range: {self.send_ts_ns}")
        if len(self.payload) > MAX_CHUNK:
            raise WireError(f"payload of {len(self.payload)} bytes exceeds one chunk")

    @property
    def last_chunk(self) -> bool:
        return bool(self.flags & FLAG_LAST)

    def encode(self) -> bytes:
        header = HEADER.pack(MAGIC, VERSION, self.msg_type, self.stream_id, self.flags,
                             self.seq, self.send_ts_ns, len(self.payload))
        return header + self.payload

    @classmethod
    def decode(cls, data: bytes) -> WireFrame:
        """Parse exactly one encoded frame."""
        if len(data) < HEADER_SIZE:
            raise WireError("truncated header")
        magic, version, msg_type, stream_id, flags, seq, ts, length = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise WireError("bad magic")
        if version != VERSION:
            raise WireError(f"unsupported version {version}")
        if length > MAX_CHUNK:
            raise WireError(f"payload length {length} exceeds one chunk")
        if len(data) != HEADER_SIZE + length:
            raise WireError(f"expected {HEADER_SIZE + length} bytes, got {len(data)}")
        try:
            kind = MsgType(msg_type)
        except ValueError:
            raise WireError(f"unknown msg_type {msg_type:#x}") from None
        return cls(kind, stream_id, seq, ts, bytes(data[HEADER_SIZE:]), flags)


def split_frame(msg_type: MsgType, stream_id: int, seq: int, send_ts_ns: int,
                payload: bytes, chunk_size: int = MAX_CHUNK) -> list[WireFrame]:
    """Split *payload* into chunks sharing *seq*; the final one carries FLAG_LAST."""
    if not 0 < chunk_size <= MAX_CHUNK:
        raise WireError(f"chunk size must be in 1..{MAX_CHUNK}")
    pieces = [payload[i:i + chunk_size] for i in range(0, len(payload), chunk_size)] or [b""]
    last = len(pieces) - 1
    return [WireFrame(msg_type, stream_id, seq, send_ts_ns, piece, FLAG_LAST if i == last else 0)
            for i, piece in enumerate(pieces)]


class FrameDecoder:
    """Incremental decoder for a byte stream.

    Garbage never raises: a bad header is counted in ``malformed`` and the
    decoder resynchronizes on the next magic value.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self.malformed = 0

    def feed(self, data: bytes) -> list[WireFrame]:
        self._buf += data
        return list(self._drain())

    def _drain(self) -> Iterator[WireFrame]:
        buf = self._buf
        while True:
            if len(buf) < len(MAGIC):
                return
            if buf[:4] != MAGIC:
                self.malformed += 1
                self._resync(1)
                continue
            if len(buf) < HEADER_SIZE:
                return
            _, version, msg_type, stream_id, flags, seq, ts, length = HEADER.unpack_from(buf)
            if length > MAX_CHUNK:
                self.malformed += 1
                self._resync(1)
                continue
            if len(buf) < HEADER_SIZE + length:
                return
            payload = bytes(buf[HEADER_SIZE:HEADER_SIZE + length])
            del buf[:HEADER_SIZE + length]
            if version != VERSION or msg_type not in MsgType._value2member_map_:
                self.malformed += 1
                continue
            yield WireFrame(MsgType(msg_type), stream_id, seq, ts, payload, flags)

    def _resync(self, skip: int) -> None:
        idx = self._buf.find(MAGIC, skip)
        if idx < 0:
            # keep a tail that could be the start of a split magic
            keep = len(MAGIC) - 1
            del self._buf[:max(0, len(self._buf) - keep)]
        else:
            del self._buf[:idx]

    @property
    def buffered(self) -> int:
        return len(self._buf)


@dataclass(frozen=True)
class AssembledFrame:
    stream_id: int
    seq: int
    send_ts_ns: int
    size: int
    chunks: int


class Reassembler:
    """Joins frame chunks by ``(stream_id, seq)``; only sizes are kept."""

    def __init__(self) -> None:
        self._partial: dict[tuple[int, int], list[int]] = {}

    def add(self, chunk: WireFrame) -> Optional[AssembledFrame]:
        key = (chunk.stream_id, chunk.seq)
        size, count = self._partial.pop(key, (0, 0))
        size += len(chunk.payload)
        count += 1
        if chunk.last_chunk:
            return AssembledFrame(chunk.stream_id, chunk.seq, chunk.send_ts_ns, size, count)
        self._partial[key] = [size, count]
        return None

    @property
    def incomplete(self) -> int:
        return len(self._partial)
