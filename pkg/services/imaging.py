"""
Image representation, colour conversion, resizing and file I/O.

A RasterImage is an H x W x 3 float32 numpy array with every component in [0, 1].
A LabImage is the H x W x 3 CIE L*a*b* (D65) array produced by ColorSpace.rgb_to_lab.
"""

import os
import logging

import numpy as np
from PIL import Image, UnidentifiedImageError
from skimage import color
from skimage.transform import resize as sk_resize

from utils.constants import PIXEL_MAX_8BIT, IMAGE_EXTENSIONS, WRITABLE_IMAGE_EXTENSIONS, ERROR_MESSAGES
from utils.error_handlers import ArgumentError, ImageFormatError
from utils.validators import InputValidator

RASTER_DTYPE = np.float32


class ImageIO:
    @staticmethod
    def load_image(path: str) -> np.ndarray:
        """Decode an 8-bit 3-channel PNG/JPEG into a RasterImage (v -> v/255)"""
        if not os.path.isfile(path):
            logging.error(f"Image not found: {path}")
            raise FileNotFoundError(f"{ERROR_MESSAGES['FILE_NOT_FOUND']}: {path}")
        if os.path.splitext(path)[1].lower() not in IMAGE_EXTENSIONS:
            raise ImageFormatError(f"Unsupported image type: {path}")
        try:
            with Image.open(path) as im:
                im.load()
                mode = im.mode
                pixels = np.asarray(im)
        except (UnidentifiedImageError, OSError) as e:
            logging.error(f"Error decoding image {path}: {str(e)}")
            raise ImageFormatError(f"Cannot decode image {path}: {str(e)}")

        if mode != 'RGB' or pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
            logging.error(f"Image {path} has mode {mode}, expected 8-bit RGB")
            raise ImageFormatError(f"{ERROR_MESSAGES['INVALID_IMAGE_FORMAT']}: {path} is {mode}")
        logging.debug(f"Loaded image {path} with shape {pixels.shape}")
        return ImageIO.from_uint8(pixels)

    @staticmethod
    def save_image(img: np.ndarray, path: str) -> str:
        """Encode a RasterImage as 8-bit PNG"""
        InputValidator.validate_raster(img)
        ext = os.path.splitext(path)[1].lower()
        if ext not in WRITABLE_IMAGE_EXTENSIONS:
            raise ImageFormatError(f"Only PNG output is supported, got '{ext}'")
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        Image.fromarray(ImageIO.to_uint8(img), mode='RGB').save(path)
        logging.debug(f"Saved image {path}")
        return path

    @staticmethod
    def save_gray(values: np.ndarray, path: str) -> str:
        """Encode an H x W array in [0, 1] as 8-bit single-channel PNG (mattes, heatmaps)"""
        if values.ndim != 2:
            raise ArgumentError(f"Expected an H x W array, got shape {values.shape}")
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        Image.fromarray(ImageIO.to_uint8(values), mode='L').save(path)
        return path

    @staticmethod
    def from_uint8(pixels: np.ndarray) -> np.ndarray:
        return pixels.astype(RASTER_DTYPE) / RASTER_DTYPE(PIXEL_MAX_8BIT)

    @staticmethod
    def to_uint8(img: np.ndarray) -> np.ndarray:
        return np.clip(np.rint(np.asarray(img, dtype=np.float64) * PIXEL_MAX_8BIT), 0, 255).astype(np.uint8)


class ColorSpace:
    @staticmethod
    def rgb_to_lab(img: np.ndarray) -> np.ndarray:
        """sRGB (gamma-decoded) -> CIE L*a*b* under the D65 2-degree white point"""
        InputValidator.validate_raster(img)
        return color.rgb2lab(np.asarray(img, dtype=np.float64), illuminant='D65', observer='2')

    @staticmethod
    def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
        """Inverse of rgb_to_lab, clipped back into [0, 1]"""
        rgb = color.lab2rgb(np.asarray(lab, dtype=np.float64), illuminant='D65', observer='2')
        return np.clip(rgb, 0.0, 1.0).astype(RASTER_DTYPE)


class Resampler:
    @staticmethod
    def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        """Bilinear resize with half-pixel (non corner-aligned) sampling"""
        if isinstance(out_h, (int, np.integer)) and isinstance(out_w, (int, np.integer)) \
                and min(out_h, out_w) < 1:
            raise ArgumentError(f"{ERROR_MESSAGES['NON_POSITIVE_SIZE']}: ({out_h}, {out_w})")
        out_h = InputValidator.validate_positive_int(out_h, 'out_h')
        out_w = InputValidator.validate_positive_int(out_w, 'out_w')
        InputValidator.validate_raster(img)
        if img.shape[:2] == (out_h, out_w):
            return np.array(img, dtype=RASTER_DTYPE, copy=True)
        out = sk_resize(np.asarray(img, dtype=np.float64), (out_h, out_w, 3), order=1,
                        mode='edge', anti_aliasing=False, preserve_range=True)
        return np.clip(out, 0.0, 1.0).astype(RASTER_DTYPE)

    @staticmethod
    def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        """Nearest-neighbour resize for binary masks"""
        out_h = InputValidator.validate_positive_int(out_h, 'out_h')
        out_w = InputValidator.validate_positive_int(out_w, 'out_w')
        if mask.shape[:2] == (out_h, out_w):
            return np.array(mask, dtype=bool, copy=True)
        out = sk_resize(mask.astype(np.float64), (out_h, out_w), order=0, mode='edge',
                        anti_aliasing=False, preserve_range=True)
        return out > 0.5
