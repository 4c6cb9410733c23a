"""
Configuration package initialization
Provides run configuration resolution and network presets
"""

from .settings import Config, RunConfig, TrainConfig, LossWeights
from .presets import NetworkPreset, get_preset, preset_names

__all__ = ['Config', 'RunConfig', 'TrainConfig', 'LossWeights',
           'NetworkPreset', 'get_preset', 'preset_names']
