"""Escape-explore optimizer, toy channel-attention model and rank diagnostics."""

__version__ = "0.1.0"
