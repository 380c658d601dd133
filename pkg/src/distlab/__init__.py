"""Desk-scale laboratory for learning probability distributions with random features."""

from .measures import GaussianMeasure, GridDensity, ParticleMeasure, normalize, pushforward_empirical, sample
from .rfm import FeatureBank, RfmFunction, TimeVelocityField, draw_bank, parameter_norm
from .trajectory import TrajectoryLog

__all__ = [
    "FeatureBank",
    "GaussianMeasure",
    "GridDensity",
    "ParticleMeasure",
    "RfmFunction",
    "TimeVelocityField",
    "TrajectoryLog",
    "draw_bank",
    "normalize",
    "parameter_norm",
    "pushforward_empirical",
    "sample",
]
