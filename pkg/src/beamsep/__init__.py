"""Mask-driven multi-source MVDR beamforming front-end with the surrounding
feature, loss, scheduling and scoring tools."""

__version__ = "0.1.0"
