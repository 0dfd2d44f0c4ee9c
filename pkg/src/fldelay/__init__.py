"""Delay-minimal federated learning over an FDMA wireless uplink."""

__version__ = "0.1.0"
