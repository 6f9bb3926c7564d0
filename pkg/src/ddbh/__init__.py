"""Driven-dissipative Bose-Hubbard lattice: classical, cumulant and Gutzwiller dynamics."""

from .model import ConfigError, CorrelationState, GutzwillerState, ModelParams, build_params, star_params

__all__ = ["ConfigError", "CorrelationState", "GutzwillerState", "ModelParams", "build_params", "star_params"]
__version__ = "0.1.0"
