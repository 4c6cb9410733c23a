import os
import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from utils.constants import MASK_BINARIZE_THRESHOLD, ERROR_MESSAGES
from utils.error_handlers import ImageFormatError
from utils.validators import InputValidator


@dataclass
class RegionMasks:
    """Penumbra geometry around a shadow mask; every field is an H x W bool array"""
    m_in: np.ndarray
    m_out: np.ndarray
    m_dilated: np.ndarray
    umbra: np.ndarray
    nonshadow: np.ndarray

    @property
    def shape(self):
        return self.umbra.shape

    def to_float_stack(self) -> np.ndarray:
        """(4, H, W) float32 stack ordered umbra, m_in, m_out, nonshadow"""
        return np.stack([self.umbra, self.m_in, self.m_out, self.nonshadow]).astype(np.float32)


class MaskOps:
    @staticmethod
    def load_mask(path: str) -> np.ndarray:
        """Load a shadow mask PNG and binarise it at 128/255"""
        if not os.path.isfile(path):
            logging.error(f"Mask not found: {path}")
            raise FileNotFoundError(f"{ERROR_MESSAGES['FILE_NOT_FOUND']}: {path}")
        try:
            with Image.open(path) as im:
                if im.mode in ('L', '1'):
                    gray = im.convert('L')
                elif im.mode in ('RGB', 'RGBA', 'P'):
                    logging.warning(f"Mask {path} has mode {im.mode}; converting to grayscale")
                    gray = im.convert('L')
                else:
                    raise ImageFormatError(f"{ERROR_MESSAGES['INVALID_MASK_FORMAT']}: {path} is {im.mode}")
                values = np.asarray(gray, dtype=np.float32) / 255.0
        except (UnidentifiedImageError, OSError) as e:
            logging.error(f"Error decoding mask {path}: {str(e)}")
            raise ImageFormatError(f"Cannot decode mask {path}: {str(e)}")
        return values >= MASK_BINARIZE_THRESHOLD

    @staticmethod
    def save_mask(mask: np.ndarray, path: str) -> str:
        """Write a binary mask as 0/255 single-channel PNG"""
        mask = InputValidator.validate_binary_mask(mask)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        Image.fromarray(mask.astype(np.uint8) * 255, mode='L').save(path)
        return path

    @staticmethod
    def _square(radius: int) -> np.ndarray:
        radius = InputValidator.validate_positive_int(radius, 'radius')
        return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)

    @staticmethod
    def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
        """Binary dilation with a (2r+1)^2 square; pixels beyond the border count as 0"""
        structure = MaskOps._square(radius)
        mask = InputValidator.validate_binary_mask(mask)
        return ndimage.binary_dilation(mask, structure=structure, border_value=0)

    @staticmethod
    def erode(mask: np.ndarray, radius: int) -> np.ndarray:
        """Binary erosion with a (2r+1)^2 square; shadow touching the border erodes away"""
        structure = MaskOps._square(radius)
        mask = InputValidator.validate_binary_mask(mask)
        return ndimage.binary_erosion(mask, structure=structure, border_value=0)

    @staticmethod
    def build_regions(mask: np.ndarray, radius: int) -> RegionMasks:
        """Split the frame into umbra, inner ring, outer ring and non-shadow"""
        mask = InputValidator.validate_binary_mask(mask)
        dilated = MaskOps.dilate(mask, radius)
        eroded = MaskOps.erode(mask, radius)
        m_out = dilated & ~mask
        m_in = mask & ~eroded
        return RegionMasks(
            m_in=m_in,
            m_out=m_out,
            m_dilated=dilated,
            umbra=mask & ~m_in,
            nonshadow=~dilated,
        )

    @staticmethod
    def intensity(img: np.ndarray) -> np.ndarray:
        """Grayscale intensity as the channel mean"""
        return np.asarray(img, dtype=np.float64).mean(axis=2)

    @staticmethod
    def moving_shadow_mask(v_max: np.ndarray, v_min: np.ndarray, epsilon: float) -> np.ndarray:
        """Pixels whose intensity range across a video exceeds epsilon ([0, 1] scale)"""
        InputValidator.validate_raster(v_max, 'v_max')
        InputValidator.validate_raster(v_min, 'v_min')
        InputValidator.validate_same_shape(v_max, v_min, ('v_max', 'v_min'))
        epsilon = InputValidator.validate_unit_interval(epsilon, 'epsilon')
        return MaskOps.intensity(v_max) > MaskOps.intensity(v_min) + epsilon

    @staticmethod
    def region_overlay(img: np.ndarray, regions: RegionMasks, opacity: float = 0.6) -> np.ndarray:
        """Tint the inner ring green and the outer ring red over the image"""
        InputValidator.validate_raster(img)
        out = np.array(img, dtype=np.float32, copy=True)
        for ring, tint in ((regions.m_in, (0.0, 1.0, 0.0)), (regions.m_out, (1.0, 0.0, 0.0))):
            out[ring] = (1 - opacity) * out[ring] + opacity * np.asarray(tint, dtype=np.float32)
        return np.clip(out, 0.0, 1.0)
