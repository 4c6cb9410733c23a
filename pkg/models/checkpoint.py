import os
import json
import shutil
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import torch

from config.presets import NetworkPreset
from models.networks import NetworkBundle, build_networks
from utils.constants import CHECKPOINT_FORMAT_VERSION, ERROR_MESSAGES
from utils.error_handlers import CheckpointError
from utils.helpers import FileHelper


@dataclass
class CheckpointState:
    bundle: NetworkBundle
    config: Dict[str, Any]
    epoch: int = 0
    step: int = 0
    optimizers: Dict[str, Any] = field(default_factory=dict)


class CheckpointStore:
    """Single-file archive of all three networks, optimizer state and the embedded run config"""

    @staticmethod
    def save(path: str, bundle: NetworkBundle, config: Dict[str, Any], epoch: int = 0, step: int = 0,
             optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None) -> str:
        payload = {
            'format_version': CHECKPOINT_FORMAT_VERSION,
            'config_json': json.dumps(config, sort_keys=True),
            'preset_json': json.dumps(bundle.preset.to_dict(), sort_keys=True),
            'patch_size': bundle.patch_size,
            'bounded': bundle.bounded,
            'epoch': epoch,
            'step': step,
            'state': {name: module.state_dict() for name, module in bundle.modules().items()},
            'optimizers': {name: opt.state_dict() for name, opt in (optimizers or {}).items()},
        }

        def _write(tmp_path):
            with open(tmp_path, 'wb') as f:
                torch.save(payload, f)

        FileHelper.atomic_write(path, _write)
        logging.info(f"Checkpoint written to {path} (epoch {epoch}, step {step})")
        return path

    @staticmethod
    def load(path: str, map_location: str = 'cpu') -> CheckpointState:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"{ERROR_MESSAGES['FILE_NOT_FOUND']}: {path}")
        try:
            payload = torch.load(path, map_location=map_location, weights_only=True)
        except Exception as e:
            logging.error(f"Error reading checkpoint {path}: {str(e)}")
            raise CheckpointError(f"{ERROR_MESSAGES['CHECKPOINT_INVALID']}: {path}")

        if not isinstance(payload, dict) or payload.get('format_version') != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(f"{ERROR_MESSAGES['CHECKPOINT_INVALID']}: unsupported format in {path}")
        try:
            preset = NetworkPreset.from_dict(json.loads(payload['preset_json']))
            bundle = build_networks(preset, int(payload['patch_size']), bool(payload['bounded']))
            for name, module in bundle.modules().items():
                module.load_state_dict(payload['state'][name])
            config = json.loads(payload['config_json'])
        except (KeyError, RuntimeError, ValueError) as e:
            raise CheckpointError(f"{ERROR_MESSAGES['CHECKPOINT_INVALID']}: {path}: {str(e)}")

        bundle.eval()
        logging.debug(f"Loaded checkpoint {path} (preset {preset.name}, n={bundle.patch_size})")
        return CheckpointState(bundle=bundle, config=config, epoch=int(payload.get('epoch', 0)),
                               step=int(payload.get('step', 0)), optimizers=payload.get('optimizers', {}))

    @staticmethod
    def copy(src: str, dst: str) -> str:
        """Byte-for-byte copy, used when there is nothing to update"""
        FileHelper.atomic_write(dst, lambda tmp_path: shutil.copyfile(src, tmp_path))
        return dst
