"""Packet-level simulation of digital-twin update traffic over campus networks."""

__version__ = "0.1.0"
