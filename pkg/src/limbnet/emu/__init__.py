"""Socket emulation of the device/edge control loop."""

from .agents import EdgeAgent, EdgeStats, EmpiricalReport, TransportError, device_agent, loopback_session, run_device
from .shaper import ShaperConfig, TokenBucket
from .wire import FrameDecoder, MsgType, Reassembler, WireError, WireFrame, split_frame

__all__ = [
    "EdgeAgent", "EdgeStats", "EmpiricalReport", "TransportError", "device_agent",
    "loopback_session", "run_device", "ShaperConfig", "TokenBucket", "FrameDecoder",
    "MsgType", "Reassembler", "WireError", "WireFrame", "split_frame",
]
