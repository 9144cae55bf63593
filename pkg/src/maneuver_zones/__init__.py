"""Maneuver-aware obstacle perception safety zones via HJ reachability."""

__version__ = "0.1.0"
