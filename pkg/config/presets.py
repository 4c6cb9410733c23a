from dataclasses import dataclass, asdict
from typing import Dict, List, Tuple, Union

from utils.error_handlers import ConfigurationError

VGG19_LAYERS = [64, 64, 'M', 128, 128, 'M', 256, 256, 256, 256, 'M',
                512, 512, 512, 512, 'M', 512, 512, 512, 512, 'M']


@dataclass(frozen=True)
class NetworkPreset:
    name: str
    param_layers: Tuple[Union[int, str], ...]
    param_batch_norm: bool
    matte_base: int
    matte_depth: int
    dnet_widths: Tuple[int, ...]

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload['param_layers'] = list(self.param_layers)
        payload['dnet_widths'] = list(self.dnet_widths)
        return payload

    @staticmethod
    def from_dict(payload: Dict) -> 'NetworkPreset':
        return NetworkPreset(
            name=payload['name'],
            param_layers=tuple(payload['param_layers']),
            param_batch_norm=bool(payload['param_batch_norm']),
            matte_base=int(payload['matte_base']),
            matte_depth=int(payload['matte_depth']),
            dnet_widths=tuple(payload['dnet_widths']),
        )


PRESETS = {
    # VGG-19 Param-Net, U-Net Matte-Net, 5-stage D-Net
    'paper': NetworkPreset('paper', tuple(VGG19_LAYERS), True, 64, 4, (64, 128, 256, 512)),
    # ~1e5 parameters per network, trainable on a laptop CPU
    'desk': NetworkPreset('desk', (16, 16, 'M', 32, 32, 'M', 64, 64, 'M'), True, 16, 2, (8, 16, 32, 64)),
}


def get_preset(name: str) -> NetworkPreset:
    if name not in PRESETS:
        raise ConfigurationError(f"Unknown preset '{name}', choose from {', '.join(PRESETS)}")
    return PRESETS[name]


def preset_names() -> List[str]:
    return list(PRESETS)
