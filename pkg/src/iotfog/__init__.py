"""Blockchain-backed IoT/fog middleware with a deterministic network simulator."""

__version__ = "0.1.0"
