"""Sensory, feedback and command stream definitions and their data rates."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Optional

from .units import DataRate, Number, as_fraction


class StreamKind(str, enum.Enum):
    SAMPLED_SENSOR = "SampledSensor"
    VIDEO = "Video"
    FEEDBACK = "Feedback"
    COMMAND = "Command"


class Direction(str, enum.Enum):
    UPLINK = "Uplink"
    DOWNLINK = "Downlink"


def sampled_stream_rate(channels: Number, sample_rate: Number, bits_per_sample: Number) -> DataRate:
    """Rate of a multichannel sampled signal: channels x Hz x bits."""
    for name, value in (("channels", channels), ("sample_rate", sample_rate),
                        ("bits_per_sample", bits_per_sample)):
        if as_fraction(value) < 0:
            raise ValueError(f"{name} must be nonnegative, got {value}")
    return DataRate(as_fraction(channels) * as_fraction(sample_rate) * as_fraction(bits_per_sample))


def frame_size(width: int, height: int, bits_per_pixel: int) -> int:
    """Bits in one uncompressed image frame."""
    for name, value in (("width", width), ("height", height), ("bits_per_pixel", bits_per_pixel)):
        if value < 0:
            raise ValueError(f"{name} must be nonnegative, got {value}")
    return width * height * bits_per_pixel


def video_stream_rate(width: int, height: int, bits_per_pixel: int, fps: Number) -> DataRate:
    """Rate of a raw (uncompressed) video feed."""
    if as_fraction(fps) < 0:
        raise ValueError(f"fps must be nonnegative, got {fps}")
    return DataRate(frame_size(width, height, bits_per_pixel) * as_fraction(fps))


@dataclass(frozen=True)
class StreamSpec:
    """One stream crossing the access network.

    Sampled streams (sensors, sampled feedback) derive their rate from
    ``channels * sample_rate * bits_per_sample`` and are packetized every
    ``frame_interval`` seconds. Video derives its rate from the frame
    geometry. A stream may instead carry a fixed ``constant_rate`` (an
    opaque figure such as compressed XR video), and command streams carry a
    fixed ``payload_bits`` per decision.

    ``priority`` is an ordinal rank within the stream's direction, 0 being
    served first.
    """

    id: str
    kind: StreamKind
    direction: Direction
    priority: int
    channels: int = 0
    sample_rate: Fraction = Fraction(0)
    bits_per_sample: int = 0
    width: Optional[int] = None
    height: Optional[int] = None
    bits_per_pixel: Optional[int] = None
    fps: Optional[Fraction] = None
    frame_interval: Optional[Fraction] = None
    constant_rate: Optional[DataRate] = None
    payload_bits: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StreamKind(self.kind))
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "sample_rate", as_fraction(self.sample_rate))
        if self.fps is not None:
            object.__setattr__(self, "fps", as_fraction(self.fps))
        if self.frame_interval is not None:
            object.__setattr__(self, "frame_interval", as_fraction(self.frame_interval))

        if not self.id:
            raise ValueError("stream id must be non-empty")
        if self.priority < 0:
            raise ValueError(f"{self.id}: priority rank must be >= 0")
        if self.channels < 0 or self.sample_rate < 0:
            raise ValueError(f"{self.id}: channels and sample_rate must be nonnegative")

        geometry = (self.width, self.height, self.bits_per_pixel, self.fps)
        if self.kind is StreamKind.VIDEO:
            if any(v is None for v in geometry):
                raise ValueError(f"{self.id}: video streams need width, height, bits_per_pixel and fps")
            if self.fps <= 0 or min(self.width, self.height, self.bits_per_pixel) < 0:
                raise ValueError(f"{self.id}: video geometry must be nonnegative with fps > 0")
            object.__setattr__(self, "frame_interval", 1 / self.fps)
        elif any(v is not None for v in geometry):
            raise ValueError(f"{self.id}: video fields are only allowed on Video streams")
        else:
            if self.constant_rate is None and self.payload_bits is None:
                if not 1 <= self.bits_per_sample <= 64:
                    raise ValueError(f"{self.id}: bits_per_sample must be in 1..64")
            if self.frame_interval is None or self.frame_interval <= 0:
                raise ValueError(f"{self.id}: frame_interval must be > 0")
        if self.payload_bits is not None and self.payload_bits <= 0:
            raise ValueError(f"{self.id}: payload_bits must be > 0")

    @property
    def rate(self) -> DataRate:
        if self.kind is StreamKind.VIDEO:
            return video_stream_rate(self.width, self.height, self.bits_per_pixel, self.fps)
        if self.constant_rate is not None:
            return self.constant_rate
        if self.payload_bits is not None:
            return DataRate(self.payload_bits / self.frame_interval)
        return sampled_stream_rate(self.channels, self.sample_rate, self.bits_per_sample)

    @property
    def frame_bits(self) -> Fraction:
        """Bits carried by one frame (or packet) of this stream."""
        if self.kind is StreamKind.VIDEO:
            return Fraction(frame_size(self.width, self.height, self.bits_per_pixel))
        if self.payload_bits is not None:
            return Fraction(self.payload_bits)
        return self.rate.bits_per_second * self.frame_interval

    def to_json(self) -> dict[str, Any]:
        """Summary record used for catalog export."""
        return {
            "id": self.id,
            "kind": self.kind.value,
            "direction": self.direction.value,
            "rate_bps": _num(self.rate.bits_per_second),
            "frame_bits": _num(self.frame_bits),
            "frame_interval_s": _num(self.frame_interval),
            "priority_rank": self.priority,
        }

    def to_spec_json(self) -> dict[str, Any]:
        """Full definition, loadable back through :func:`stream_from_json`."""
        doc: dict[str, Any] = {
            "id": self.id,
            "kind": self.kind.value,
            "direction": self.direction.value,
            "priority_rank": self.priority,
        }
        if self.kind is StreamKind.VIDEO:
            doc.update(width=self.width, height=self.height,
                       bits_per_pixel=self.bits_per_pixel, fps=_num(self.fps))
            return doc
        doc["frame_interval_s"] = _exact(self.frame_interval)
        if self.constant_rate is not None:
            doc["rate_bps"] = _num(self.constant_rate.bits_per_second)
        elif self.payload_bits is not None:
            doc["payload_bits"] = self.payload_bits
        else:
            doc.update(channels=self.channels, sample_rate=_num(self.sample_rate),
                       bits_per_sample=self.bits_per_sample)
        return doc


def stream_from_json(doc: dict[str, Any]) -> StreamSpec:
    kind = StreamKind(doc["kind"])
    common = dict(id=doc["id"], kind=kind, direction=Direction(doc["direction"]),
                  priority=int(doc["priority_rank"]))
    if kind is StreamKind.VIDEO:
        return StreamSpec(**common, width=doc["width"], height=doc["height"],
                          bits_per_pixel=doc["bits_per_pixel"], fps=as_fraction(doc["fps"]))
    common["frame_interval"] = as_fraction(doc["frame_interval_s"])
    if "rate_bps" in doc:
        return StreamSpec(**common, constant_rate=DataRate(as_fraction(doc["rate_bps"])))
    if "payload_bits" in doc:
        return StreamSpec(**common, payload_bits=int(doc["payload_bits"]))
    return StreamSpec(**common, channels=int(doc["channels"]),
                      sample_rate=as_fraction(doc["sample_rate"]),
                      bits_per_sample=int(doc["bits_per_sample"]))


def _exact(value: Fraction) -> Any:
    """Number if it survives a float round trip, else a ``"p/q"`` string."""
    if as_fraction(float(value)) == value:
        return _num(value)
    return f"{value.numerator}/{value.denominator}"


def _num(value: Optional[Fraction]) -> Any:
    if value is None:
        return None
    if value.denominator == 1:
        return int(value)
    return float(value)


# Packetization intervals for sampled streams: one packet per 10 ms, or per
# sample when the sampling period is longer than that.
_PACKET_10MS = Fraction(1, 100)
_PACKET_IMU = Fraction(1, 50)

COMMAND_PAYLOAD_BITS = 8 * 8
RGBD_BITS_PER_PIXEL = 32  # 24-bit RGB + 8-bit depth


def builtin_catalog() -> list[StreamSpec]:
    """The seven reference streams of a connected prosthetic hand."""
    up, down = Direction.UPLINK, Direction.DOWNLINK
    return [
        StreamSpec("emg64", StreamKind.SAMPLED_SENSOR, up, priority=0,
                   channels=64, sample_rate=2000, bits_per_sample=16,
                   frame_interval=_PACKET_10MS),
        # 3-axis accelerometer, gyroscope and magnetometer
        StreamSpec("imu", StreamKind.SAMPLED_SENSOR, up, priority=1,
                   channels=9, sample_rate=50, bits_per_sample=8,
                   frame_interval=_PACKET_IMU),
        StreamSpec("tactile64", StreamKind.SAMPLED_SENSOR, up, priority=2,
                   channels=64, sample_rate=2000, bits_per_sample=8,
                   frame_interval=_PACKET_10MS),
        StreamSpec("rgbd_camera", StreamKind.VIDEO, up, priority=3,
                   width=424, height=240, bits_per_pixel=RGBD_BITS_PER_PIXEL, fps=30),
        StreamSpec("command", StreamKind.COMMAND, down, priority=0,
                   payload_bits=COMMAND_PAYLOAD_BITS, frame_interval=Fraction(1, 30)),
        StreamSpec("haptic_feedback", StreamKind.FEEDBACK, down, priority=1,
                   channels=64, sample_rate=100, bits_per_sample=8,
                   frame_interval=_PACKET_10MS),
        StreamSpec("xr_feedback", StreamKind.FEEDBACK, down, priority=2,
                   constant_rate=DataRate.mbps(400), frame_interval=Fraction(1, 60)),
    ]


def catalog_by_id() -> dict[str, StreamSpec]:
    return {s.id: s for s in builtin_catalog()}


def sort_by_priority(streams: Iterable[StreamSpec]) -> list[StreamSpec]:
    """Deterministic order: direction, then rank, then id."""
    order = {Direction.UPLINK: 0, Direction.DOWNLINK: 1}
    return sorted(streams, key=lambda s: (order[s.direction], s.priority, s.id))


def catalog_json(streams: Optional[Iterable[StreamSpec]] = None) -> str:
    streams = builtin_catalog() if streams is None else streams
    return json.dumps([s.to_json() for s in streams], indent=2)
