"""Learned-feedback spectrum sharing for vehicular networks.

Distributed per-link encoders compress local channel observations into short
(real or binary) feedback; a centralized deep Q-network maps the joint
feedback to a channel allocation for every D2D pair.
"""

__version__ = "0.1.0"
