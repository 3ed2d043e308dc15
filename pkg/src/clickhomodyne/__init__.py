"""Balanced homodyne detection with click detectors: time-tag simulation,
difference-signal variance, shot-noise clearance and g2 analysis."""

__version__ = "0.1.0"
