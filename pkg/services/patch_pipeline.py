"""
Overlapping patch extraction and N/B/F labelling.

The manifest stores window coordinates only; PatchDataset re-cuts pixels on demand.
"""

import os
import time
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset
from tqdm import tqdm

from models.manifest import PatchManifest, PatchRecord
from services.imaging import ImageIO
from services.mask_ops import MaskOps
from utils.constants import DEFAULT_MORPH_RADIUS, EDGE_POLICIES, ERROR_MESSAGES
from utils.error_handlers import ArgumentError, ImageFormatError
from utils.helpers import FileHelper
from utils.monitoring import ApplicationMetrics, PerformanceMonitor
from utils.validators import InputValidator


class PatchGrid:
    @staticmethod
    def offsets(length: int, n: int, m: int, edge_policy: str = 'drop') -> List[int]:
        """Window start positions along one axis"""
        count = (length - n) // m + 1
        starts = [i * m for i in range(count)]
        if edge_policy == 'snap' and starts[-1] != length - n:
            starts.append(length - n)
        return starts

    @staticmethod
    def label(mask_patch: np.ndarray) -> str:
        shadow = int(np.count_nonzero(mask_patch))
        if shadow == 0:
            return 'N'
        if shadow == mask_patch.size:
            return 'F'
        return 'B'

    @staticmethod
    def crop_grid(img: np.ndarray, mask: np.ndarray, n: int, m: int,
                  edge_policy: str = 'drop', image_id: str = '') -> List[PatchRecord]:
        """Cut n x n windows at stride m and label each N, B or F"""
        InputValidator.validate_raster(img)
        mask = InputValidator.validate_binary_mask(mask)
        InputValidator.validate_same_shape(img, mask, ('image', 'mask'), spatial_only=True)
        n = InputValidator.validate_positive_int(n, 'patch size')
        m = InputValidator.validate_positive_int(m, 'stride')
        InputValidator.validate_choice(edge_policy, EDGE_POLICIES, 'edge_policy')
        height, width = mask.shape
        if n > min(height, width):
            raise ArgumentError(f"{ERROR_MESSAGES['PATCH_TOO_LARGE']}: n={n}, image {height}x{width}")

        records = []
        for top in PatchGrid.offsets(height, n, m, edge_policy):
            for left in PatchGrid.offsets(width, n, m, edge_policy):
                mask_patch = mask[top:top + n, left:left + n]
                records.append(PatchRecord(
                    image_id=image_id, top=top, left=left, size=n,
                    label=PatchGrid.label(mask_patch),
                    patch=img[top:top + n, left:left + n],
                    mask_patch=mask_patch,
                ))
        return records

    @staticmethod
    def expected_count(height: int, width: int, n: int, m: int, edge_policy: str = 'drop') -> int:
        return len(PatchGrid.offsets(height, n, m, edge_policy)) * len(PatchGrid.offsets(width, n, m, edge_policy))


def crop_grid(img: np.ndarray, mask: np.ndarray, n: int, m: int, edge_policy: str = 'drop',
              image_id: str = '') -> List[PatchRecord]:
    return PatchGrid.crop_grid(img, mask, n, m, edge_policy, image_id)


def load_pair(images_dir: str, masks_dir: str, image_id: str) -> Tuple[np.ndarray, np.ndarray]:
    """Load an image and its same-named mask"""
    img = ImageIO.load_image(os.path.join(images_dir, image_id))
    mask_path = FileHelper.find_pair(masks_dir, image_id)
    if mask_path is None:
        raise FileNotFoundError(f"No mask for {image_id} in {masks_dir}")
    mask = MaskOps.load_mask(mask_path)
    InputValidator.validate_same_shape(img, mask, (image_id, os.path.basename(mask_path)), spatial_only=True)
    return img, mask


@PerformanceMonitor.monitor_stage('build_manifest')
def build_manifest(image_dir: str, mask_dir: str, n: int, m: int,
                   edge_policy: str = 'drop', show_progress: bool = True) -> PatchManifest:
    """Grid every matched image/mask pair; unmatched or unreadable items are skipped and reported"""
    start_time = time.time()
    n = InputValidator.validate_positive_int(n, 'patch size')
    m = InputValidator.validate_positive_int(m, 'stride')
    InputValidator.validate_choice(edge_policy, EDGE_POLICIES, 'edge_policy')
    manifest = PatchManifest(patch_size=n, stride=m, edge_policy=edge_policy,
                             images_dir=os.path.abspath(image_dir), masks_dir=os.path.abspath(mask_dir))

    image_names = FileHelper.list_images(image_dir)
    mask_names = FileHelper.list_images(mask_dir)
    image_stems = {os.path.splitext(name)[0] for name in image_names}
    for name in mask_names:
        if os.path.splitext(name)[0] not in image_stems:
            logging.warning(f"Mask {name} has no matching image")
            manifest.skipped.append({'file': name, 'reason': 'mask without image'})

    for name in tqdm(image_names, desc='build-patches', disable=not show_progress):
        try:
            img, mask = load_pair(image_dir, mask_dir, name)
            manifest.records.extend(
                PatchRecord(r.image_id, r.top, r.left, r.size, r.label)
                for r in PatchGrid.crop_grid(img, mask, n, m, edge_policy, image_id=name)
            )
        except FileNotFoundError as e:
            logging.warning(f"Skipping {name}: {str(e)}")
            manifest.skipped.append({'file': name, 'reason': 'unmatched image'})
        except (ArgumentError, ImageFormatError) as e:
            logging.warning(f"Skipping {name}: {str(e)}")
            manifest.skipped.append({'file': name, 'reason': str(e)})

    manifest.sort()
    manifest.skipped.sort(key=lambda item: item['file'])
    ApplicationMetrics.track_patch_manifest(len(image_names), manifest.counts, len(manifest.skipped),
                                            time.time() - start_time)
    return manifest


class PatchDataset(Dataset):
    """Re-cuts manifest patches and returns (patch, mask, regions) float tensors"""

    def __init__(self, manifest: PatchManifest, labels: Tuple[str, ...] = ('B',),
                 radius: int = DEFAULT_MORPH_RADIUS, images_dir: Optional[str] = None,
                 masks_dir: Optional[str] = None):
        self.records = [r for r in manifest.records if r.label in labels]
        self.radius = InputValidator.validate_positive_int(radius, 'radius')
        self.images_dir = images_dir or manifest.images_dir
        self.masks_dir = masks_dir or manifest.masks_dir
        self._cache: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.records)

    def _pair(self, image_id: str) -> Tuple[np.ndarray, np.ndarray]:
        # per-worker cache; each DataLoader worker holds its own copy
        if image_id not in self._cache:
            self._cache[image_id] = load_pair(self.images_dir, self.masks_dir, image_id)
        return self._cache[image_id]

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        record = self.records[index]
        img, mask = self._pair(record.image_id)
        n = record.size
        patch = img[record.top:record.top + n, record.left:record.left + n]
        mask_patch = mask[record.top:record.top + n, record.left:record.left + n]
        regions = MaskOps.build_regions(mask_patch, self.radius)
        return {
            'patch': torch.from_numpy(np.ascontiguousarray(patch.transpose(2, 0, 1))),
            'mask': torch.from_numpy(mask_patch.astype(np.float32)[None]),
            'regions': torch.from_numpy(regions.to_float_stack()),
        }
