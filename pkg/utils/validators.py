import numpy as np
from typing import Sequence, Tuple

from utils.error_handlers import ArgumentError
from utils.constants import ERROR_MESSAGES


class InputValidator:
    @staticmethod
    def validate_positive_int(value, name: str, minimum: int = 1) -> int:
        """Validate an integer argument against a lower bound"""
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise ArgumentError(f"{name} must be an integer, got {type(value).__name__}")
        if value < minimum:
            raise ArgumentError(f"{name} must be >= {minimum}, got {value}")
        return int(value)

    @staticmethod
    def validate_same_shape(a: np.ndarray, b: np.ndarray, names: Tuple[str, str] = ('a', 'b'),
                            spatial_only: bool = False):
        """Validate that two arrays share dimensions (or just H, W)"""
        shape_a = a.shape[:2] if spatial_only else a.shape
        shape_b = b.shape[:2] if spatial_only else b.shape
        if shape_a != shape_b:
            raise ArgumentError(f"{ERROR_MESSAGES['SHAPE_MISMATCH']}: "
                                f"{names[0]} {tuple(shape_a)} vs {names[1]} {tuple(shape_b)}")

    @staticmethod
    def validate_finite(values, name: str) -> np.ndarray:
        """Validate that every value is finite"""
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ArgumentError(f"{ERROR_MESSAGES['NON_FINITE']} in {name}")
        return arr

    @staticmethod
    def validate_raster(img: np.ndarray, name: str = 'image') -> np.ndarray:
        """Validate an H x W x 3 float image in [0, 1]"""
        if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
            shape = getattr(img, 'shape', None)
            raise ArgumentError(f"{name} must be an H x W x 3 array, got shape {shape}")
        if img.shape[0] < 1 or img.shape[1] < 1:
            raise ArgumentError(f"{name} must have H >= 1 and W >= 1")
        return img

    @staticmethod
    def validate_binary_mask(mask: np.ndarray, name: str = 'mask') -> np.ndarray:
        """Validate an H x W mask with values in {0, 1}"""
        if not isinstance(mask, np.ndarray) or mask.ndim != 2:
            shape = getattr(mask, 'shape', None)
            raise ArgumentError(f"{name} must be an H x W array, got shape {shape}")
        if mask.dtype != bool and not np.isin(mask, (0, 1)).all():
            raise ArgumentError(f"{name} must be binary")
        return mask.astype(bool, copy=False)

    @staticmethod
    def validate_choice(value: str, choices: Sequence[str], name: str) -> str:
        """Validate an enumerated option"""
        if value not in choices:
            raise ArgumentError(f"{name} must be one of {', '.join(choices)}, got '{value}'")
        return value

    @staticmethod
    def validate_unit_interval(value: float, name: str) -> float:
        """Validate a scalar in [0, 1]"""
        if not np.isfinite(value) or value < 0.0 or value > 1.0:
            raise ArgumentError(f"{name} must lie in [0, 1], got {value}")
        return float(value)
