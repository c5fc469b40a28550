"""Packet-generation engine over a simulated, bit-accurate physical layer."""

__version__ = "0.1.0"
