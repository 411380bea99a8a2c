"""Preference-controlled multi-task trees built from a frozen multi-stream anchor."""

__version__ = "0.1.0"
