"""Constant initial-noise ("ticket") search for frozen flow-matching policies."""

__version__ = "0.1.0"
