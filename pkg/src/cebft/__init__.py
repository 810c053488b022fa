"""Deterministic simulator for a committee-endorsed chain with a BFT finality layer."""

__version__ = "0.1.0"
