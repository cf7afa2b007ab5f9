"""Latency modeling and emulation for edge-offloaded bionic-limb control."""

__version__ = "0.1.0"
