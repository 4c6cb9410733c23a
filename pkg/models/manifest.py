import os
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

import numpy as np

from utils.constants import PATCH_LABELS, MANIFEST_FORMAT_VERSION
from utils.error_handlers import ConfigurationError
from utils.helpers import FileHelper


@dataclass
class PatchRecord:
    """One n x n window of a shadow image. Pixel arrays are only attached when cut in memory."""
    image_id: str
    top: int
    left: int
    size: int
    label: str
    patch: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    mask_patch: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> Dict:
        return {'image_id': self.image_id, 'top': self.top, 'left': self.left,
                'size': self.size, 'label': self.label}

    @staticmethod
    def from_dict(payload: Dict) -> 'PatchRecord':
        label = payload['label']
        if label not in PATCH_LABELS:
            raise ConfigurationError(f"Unknown patch label '{label}'")
        return PatchRecord(str(payload['image_id']), int(payload['top']), int(payload['left']),
                           int(payload['size']), label)

    @property
    def sort_key(self):
        return self.image_id, self.top, self.left


@dataclass
class PatchManifest:
    """Patch coordinates and labels over an image/mask directory pair"""
    patch_size: int
    stride: int
    edge_policy: str = 'drop'
    images_dir: Optional[str] = None
    masks_dir: Optional[str] = None
    records: List[PatchRecord] = field(default_factory=list)
    skipped: List[Dict] = field(default_factory=list)

    @property
    def counts(self) -> Dict[str, int]:
        counts = {label: 0 for label in PATCH_LABELS}
        for record in self.records:
            counts[record.label] += 1
        return counts

    def __len__(self) -> int:
        return len(self.records)

    def by_label(self, label: str) -> List[PatchRecord]:
        return [r for r in self.records if r.label == label]

    def sort(self):
        self.records.sort(key=lambda r: r.sort_key)

    def header(self) -> Dict:
        return {
            'format_version': MANIFEST_FORMAT_VERSION,
            'patch_size': self.patch_size,
            'stride': self.stride,
            'edge_policy': self.edge_policy,
            'images_dir': self.images_dir,
            'masks_dir': self.masks_dir,
            'counts': self.counts,
            'total': len(self.records),
            'skipped': self.skipped,
        }

    def iter_lines(self) -> Iterator[str]:
        yield json.dumps({'header': self.header()})
        for record in self.records:
            yield json.dumps(record.to_dict())

    def save(self, path: str) -> str:
        """Persist as JSON-lines: header line first, then one record per line"""
        self.sort()

        def _write(tmp_path):
            with open(tmp_path, 'w', encoding='utf-8') as f:
                for line in self.iter_lines():
                    f.write(line + '\n')

        FileHelper.atomic_write(path, _write)
        logging.info(f"Manifest with {len(self.records)} records written to {path}")
        return path

    @staticmethod
    def load(path: str) -> 'PatchManifest':
        if not os.path.isfile(path):
            raise FileNotFoundError(f"Manifest not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            lines = [line for line in f if line.strip()]
        if not lines:
            raise ConfigurationError(f"Manifest {path} is empty")
        try:
            header = json.loads(lines[0])['header']
            records = [PatchRecord.from_dict(json.loads(line)) for line in lines[1:]]
        except (KeyError, ValueError) as e:
            raise ConfigurationError(f"Manifest {path} is malformed: {str(e)}")

        if header.get('format_version') != MANIFEST_FORMAT_VERSION:
            raise ConfigurationError(f"Unsupported manifest version {header.get('format_version')}")
        manifest = PatchManifest(
            patch_size=int(header['patch_size']),
            stride=int(header['stride']),
            edge_policy=header.get('edge_policy', 'drop'),
            images_dir=header.get('images_dir'),
            masks_dir=header.get('masks_dir'),
            records=records,
            skipped=list(header.get('skipped', [])),
        )
        if manifest.counts != header.get('counts', manifest.counts):
            logging.warning(f"Manifest {path} header counts disagree with its records")
        logging.debug(f"Loaded manifest {path}: {manifest.counts}")
        return manifest
