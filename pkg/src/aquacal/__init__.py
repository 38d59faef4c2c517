"""Calibration of water distribution network models with expert-bounded NEAT."""

__version__ = "0.1.0"
