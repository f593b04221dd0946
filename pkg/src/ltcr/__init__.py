"""Peer-to-peer teaching among categorical DQN agents by value-distribution distillation."""

__version__ = "0.1.0"
