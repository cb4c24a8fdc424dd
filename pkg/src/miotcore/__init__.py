"""Massive-IoT control-plane traffic, delay models, and capacity scaling."""

__version__ = "0.1.0"
