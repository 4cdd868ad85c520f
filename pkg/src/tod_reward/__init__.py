"""Preference-based reward learning and policy optimization for slot-filling dialogue."""

__version__ = "0.1.0"
