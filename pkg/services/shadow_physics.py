"""
Linear relighting, matte compositing and the bounded shadow-parameter space.

Numpy functions operate on single RasterImages; the *_tensor variants operate on
(B, C, H, W) torch batches inside the training graph and share the same formulas.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import torch

from utils.constants import S_MAX, B_LIMIT, UNBOUNDED_W_LIMIT, UNBOUNDED_B_LIMIT, ERROR_MESSAGES
from utils.error_handlers import ArgumentError
from utils.validators import InputValidator

BOUNDS_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ParamBounds:
    w_min: float
    w_max: float
    b_max: float

    @staticmethod
    def standard() -> 'ParamBounds':
        return ParamBounds(1.0, S_MAX, B_LIMIT)

    @staticmethod
    def unbounded() -> 'ParamBounds':
        return ParamBounds(-UNBOUNDED_W_LIMIT, UNBOUNDED_W_LIMIT, UNBOUNDED_B_LIMIT)

    @staticmethod
    def for_run(bounded: bool) -> 'ParamBounds':
        return ParamBounds.standard() if bounded else ParamBounds.unbounded()


@dataclass
class ShadowParams:
    """Per-channel scale w and offset b of the relighting model, in [0, 1] pixel scale"""
    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(3)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(3)

    @staticmethod
    def identity() -> 'ShadowParams':
        return ShadowParams(np.ones(3), np.zeros(3))

    def within(self, bounds: ParamBounds) -> bool:
        return bool(np.all(self.w >= bounds.w_min - BOUNDS_TOLERANCE)
                    and np.all(self.w <= bounds.w_max + BOUNDS_TOLERANCE)
                    and np.all(np.abs(self.b) <= bounds.b_max + BOUNDS_TOLERANCE))

    def validate(self, bounds: ParamBounds) -> 'ShadowParams':
        InputValidator.validate_finite(np.concatenate([self.w, self.b]), 'shadow parameters')
        if not self.within(bounds):
            raise ArgumentError(f"{ERROR_MESSAGES['PARAMS_OUT_OF_BOUNDS']}: w={self.w.tolist()}, "
                                f"b={self.b.tolist()}, bounds={bounds}")
        return self

    def to_dict(self) -> Dict:
        return {'w': self.w.tolist(), 'b': self.b.tolist()}

    @staticmethod
    def from_dict(payload: Dict) -> 'ShadowParams':
        return ShadowParams(payload['w'], payload['b'])


class ShadowPhysics:
    @staticmethod
    def squash_params(raw, bounds: ParamBounds = ParamBounds.standard()) -> ShadowParams:
        """Map 6 unconstrained reals into the parameter box through tanh"""
        raw = InputValidator.validate_finite(raw, 'raw parameters').reshape(-1)
        if raw.size != 6:
            raise ArgumentError(f"Expected 6 raw parameters, got {raw.size}")
        t = np.tanh(raw)
        w = bounds.w_min + (bounds.w_max - bounds.w_min) * (t[:3] + 1.0) / 2.0
        b = bounds.b_max * t[3:]
        return ShadowParams(w, b)

    @staticmethod
    def relight(img: np.ndarray, params: ShadowParams,
                bounds: ParamBounds = ParamBounds.standard()) -> np.ndarray:
        """out_k = clamp(w_k * in_k + b_k, 0, 1) per channel"""
        InputValidator.validate_raster(img)
        params.validate(bounds)
        out = img.astype(np.float64) * params.w + params.b
        return np.clip(out, 0.0, 1.0).astype(img.dtype)

    @staticmethod
    def compose(shadow: np.ndarray, relit: np.ndarray, matte: np.ndarray) -> np.ndarray:
        """Per-pixel blend relit * alpha + shadow * (1 - alpha)"""
        InputValidator.validate_raster(shadow, 'shadow')
        InputValidator.validate_raster(relit, 'relit')
        InputValidator.validate_same_shape(shadow, relit, ('shadow', 'relit'))
        MatteOps.validate(matte)
        InputValidator.validate_same_shape(shadow, matte, ('shadow', 'matte'), spatial_only=True)
        alpha = matte[..., None].astype(shadow.dtype)
        # lerp form keeps relit == shadow an exact fixed point
        blended = shadow + alpha * (relit - shadow)
        out = np.where(alpha == 1, relit, np.where(alpha == 0, shadow, blended))
        return np.clip(out, 0.0, 1.0).astype(shadow.dtype)

    @staticmethod
    def squash_tensor(raw: torch.Tensor, bounds: ParamBounds) -> Tuple[torch.Tensor, torch.Tensor]:
        """(B, 6) raw head outputs -> (w, b), each (B, 3)"""
        t = torch.tanh(raw)
        w = bounds.w_min + (bounds.w_max - bounds.w_min) * (t[:, :3] + 1.0) / 2.0
        b = bounds.b_max * t[:, 3:]
        return w, b

    @staticmethod
    def relight_tensor(img: torch.Tensor, w: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) batch relit with per-sample, per-channel (w, b)"""
        return torch.clamp(img * w[:, :, None, None] + b[:, :, None, None], 0.0, 1.0)

    @staticmethod
    def compose_tensor(shadow: torch.Tensor, relit: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) blend with a (B, 1, H, W) matte"""
        return shadow + alpha * (relit - shadow)


class MatteOps:
    @staticmethod
    def validate(matte: np.ndarray) -> np.ndarray:
        """A MatteLayer is an H x W array with every alpha in [0, 1]"""
        if not isinstance(matte, np.ndarray) or matte.ndim != 2:
            raise ArgumentError(f"Matte must be an H x W array, got shape {getattr(matte, 'shape', None)}")
        if not np.all(np.isfinite(matte)) or matte.min(initial=0.0) < 0.0 or matte.max(initial=0.0) > 1.0:
            raise ArgumentError("Matte values must lie in [0, 1]")
        return matte

    @staticmethod
    def constant(height: int, width: int, value: float) -> np.ndarray:
        return np.full((height, width), value, dtype=np.float32)


logging.debug(f"Default shadow parameter bounds: {ParamBounds.standard()}")
