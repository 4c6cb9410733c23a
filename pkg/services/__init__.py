# services/__init__.py
"""
Service layer package initialization
Image primitives are re-exported here; training, inference and evaluation
are imported from their modules.
"""

from .imaging import ImageIO, ColorSpace, Resampler
from .mask_ops import MaskOps, RegionMasks
from .shadow_physics import ParamBounds, ShadowParams, ShadowPhysics, MatteOps

__all__ = [
    'ImageIO',
    'ColorSpace',
    'Resampler',
    'MaskOps',
    'RegionMasks',
    'ParamBounds',
    'ShadowParams',
    'ShadowPhysics',
    'MatteOps'
]
