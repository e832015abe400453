"""Envelope-power-spectrum RF fingerprinting on synthetic 802.11b-like transmitters."""

__version__ = "0.1.0"
