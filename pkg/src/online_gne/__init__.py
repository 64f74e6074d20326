"""Decentralized online learning in games with time-varying coupled constraints."""

__version__ = "0.1.0"
