"""
Synthetic shadow data with known inverse parameters.

A shadow-free image is darkened through the affine model in reverse,
shadow = alpha * (free - b*) / w* + (1 - alpha) * free, with a soft ramp matte along a
straight boundary. The recovered (w, b) of a trained model can be checked against (w*, b*).
"""

import os
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage
from tqdm import tqdm

from services.imaging import ImageIO
from services.mask_ops import MaskOps
from services.shadow_physics import ShadowParams
from utils.helpers import FileHelper
from utils.validators import InputValidator

W_RANGE = (2.0, 4.0)
RAMP_WIDTH = 4.0
SIDES = ('left', 'right', 'top', 'bottom')


@dataclass
class SyntheticSample:
    free: np.ndarray
    shadow: np.ndarray
    mask: np.ndarray
    matte: np.ndarray
    truth: ShadowParams
    textured: bool


class SyntheticShadowGenerator:
    def __init__(self, size: int = 64, seed: int = 0, w_range: Tuple[float, float] = W_RANGE,
                 b_jitter: float = 0.0, ramp_width: float = RAMP_WIDTH):
        self.size = InputValidator.validate_positive_int(size, 'size', minimum=8)
        self.rng = np.random.default_rng(seed)
        self.w_range = w_range
        self.b_jitter = b_jitter
        self.ramp_width = ramp_width

    def free_image(self, textured: bool) -> np.ndarray:
        base = self.rng.uniform(0.35, 0.9, size=3)
        img = np.broadcast_to(base, (self.size, self.size, 3)).copy()
        if textured:
            noise = ndimage.gaussian_filter(self.rng.standard_normal((self.size, self.size)), sigma=2.0)
            noise /= max(np.abs(noise).max(), 1e-8)
            img *= (1.0 + 0.25 * noise)[..., None]
        return np.clip(img, 0.05, 1.0).astype(np.float32)

    def ramp_matte(self) -> np.ndarray:
        """Soft straight boundary entering from a random side; alpha = 1 inside the shadow"""
        side = SIDES[self.rng.integers(len(SIDES))]
        cut = self.rng.uniform(0.3, 0.6) * self.size
        coords = np.arange(self.size, dtype=np.float64) + 0.5
        depth = {'left': coords, 'right': self.size - coords, 'top': coords, 'bottom': self.size - coords}[side]
        profile = np.clip((cut - depth) / self.ramp_width + 0.5, 0.0, 1.0)
        if side in ('left', 'right'):
            return np.broadcast_to(profile[None, :], (self.size, self.size)).copy()
        return np.broadcast_to(profile[:, None], (self.size, self.size)).copy()

    def sample(self, textured: Optional[bool] = None) -> SyntheticSample:
        textured = bool(self.rng.integers(2)) if textured is None else textured
        free = self.free_image(textured)
        matte = self.ramp_matte()
        w = self.rng.uniform(*self.w_range, size=3)
        b = self.rng.uniform(-self.b_jitter, self.b_jitter, size=3) if self.b_jitter > 0 else np.zeros(3)
        darkened = np.clip((free.astype(np.float64) - b) / w, 0.0, 1.0)
        alpha = matte[..., None]
        shadow = alpha * darkened + (1.0 - alpha) * free
        return SyntheticSample(
            free=free,
            shadow=np.clip(shadow, 0.0, 1.0).astype(np.float32),
            mask=matte >= 0.5,
            matte=matte.astype(np.float32),
            truth=ShadowParams(w, b),
            textured=textured,
        )

    def write_dataset(self, out_dir: str, count: int, show_progress: bool = True) -> Dict:
        """images/, masks/, free/ and truth.json under out_dir"""
        count = InputValidator.validate_positive_int(count, 'count')
        truth = {}
        for i in tqdm(range(count), desc='make-synthetic', disable=not show_progress):
            name = f'{i:05d}.png'
            s = self.sample()
            ImageIO.save_image(s.shadow, os.path.join(out_dir, 'images', name))
            ImageIO.save_image(s.free, os.path.join(out_dir, 'free', name))
            MaskOps.save_mask(s.mask, os.path.join(out_dir, 'masks', name))
            truth[name] = {**s.truth.to_dict(), 'textured': s.textured}
        FileHelper.atomic_write_json(os.path.join(out_dir, 'truth.json'),
                                     {'size': self.size, 'w_range': list(self.w_range), 'images': truth})
        logging.info(f"Wrote {count} synthetic shadow images to {out_dir}")
        return truth
