"""
Param-Net, Matte-Net and D-Net.

Range guarantees are structural: Param-Net outputs go through the tanh box squash,
Matte-Net through (tanh + 1) / 2, D-Net through a clamped sigmoid. They hold for any
weights.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from config.presets import NetworkPreset
from services.shadow_physics import ParamBounds, ShadowParams, ShadowPhysics
from utils.constants import SCORE_CLAMP_EPS
from utils.error_handlers import ArgumentError

# the deepest normalised D-Net stage keeps at least 2x2 activations
DNET_MIN_SIZE = 32


def conv_block(in_ch: int, out_ch: int, batch_norm: bool = True) -> nn.Sequential:
    layers = [nn.Conv2d(in_ch, out_ch, 3, padding=1)]
    if batch_norm:
        layers.append(nn.BatchNorm2d(out_ch))
    layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class ParamNet(nn.Module):
    """VGG-style features over (patch, mask), global pooling, 6-way head, tanh box squash"""

    def __init__(self, layers: Sequence[Union[int, str]], batch_norm: bool = True,
                 bounds: ParamBounds = ParamBounds.standard(), in_channels: int = 4):
        super().__init__()
        self.bounds = bounds
        modules = []
        channels = in_channels
        for item in layers:
            if item == 'M':
                modules.append(nn.MaxPool2d(2, ceil_mode=True))
            else:
                modules.extend(conv_block(channels, int(item), batch_norm))
                channels = int(item)
        self.features = nn.Sequential(*modules)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(channels, 6)
        # zero head: raw = 0 maps to the centre of the box (w = 5.5, b = 0 for the default bounds)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def raw(self, patch: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.features(torch.cat([patch, mask], dim=1))
        return self.head(torch.flatten(self.pool(x), 1))

    def forward(self, patch: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return ShadowPhysics.squash_tensor(self.raw(patch, mask), self.bounds)


class DoubleConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.block = nn.Sequential(conv_block(in_ch, out_ch), conv_block(out_ch, out_ch))

    def forward(self, x):
        return self.block(x)


class UpBlock(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.conv = DoubleConv(in_ch + skip_ch, out_ch)

    def forward(self, x, skip):
        x = F.interpolate(x, size=skip.shape[2:], mode='bilinear', align_corners=False)
        return self.conv(torch.cat([x, skip], dim=1))


class MatteNet(nn.Module):
    """U-Net over (patch, mask, relit) producing alpha in [0, 1] at input resolution"""

    def __init__(self, base: int = 64, depth: int = 4, in_channels: int = 7):
        super().__init__()
        if depth < 1:
            raise ArgumentError(f"Matte-Net depth must be >= 1, got {depth}")
        widths = [base * 2 ** i for i in range(depth + 1)]
        self.inc = DoubleConv(in_channels, widths[0])
        self.downs = nn.ModuleList(
            nn.Sequential(nn.MaxPool2d(2, ceil_mode=True), DoubleConv(widths[i], widths[i + 1]))
            for i in range(depth)
        )
        self.ups = nn.ModuleList(
            UpBlock(widths[i + 1], widths[i], widths[i]) for i in reversed(range(depth))
        )
        self.outc = nn.Conv2d(widths[0], 1, kernel_size=1)

    def forward(self, patch: torch.Tensor, mask: torch.Tensor, relit: torch.Tensor) -> torch.Tensor:
        x = self.inc(torch.cat([patch, mask, relit], dim=1))
        skips = [x]
        for down in self.downs:
            x = down(x)
            skips.append(x)
        skips.pop()
        for up in self.ups:
            x = up(x, skips.pop())
        return (torch.tanh(self.outc(x)) + 1.0) / 2.0


class DNet(nn.Module):
    """Five conv stages; the 1-channel logit map is averaged and squashed to (0, 1)"""

    def __init__(self, widths: Sequence[int] = (64, 128, 256, 512), in_channels: int = 3):
        super().__init__()
        stages = []
        channels = in_channels
        for i, width in enumerate(widths):
            stages.append(nn.Conv2d(channels, width, 4, stride=2, padding=1))
            if i > 0:
                stages.append(nn.BatchNorm2d(width))
            stages.append(nn.LeakyReLU(0.2, inplace=True))
            channels = width
        stages.append(nn.Conv2d(channels, 1, 3, padding=1))
        self.model = nn.Sequential(*stages)

    def forward(self, patch: torch.Tensor) -> torch.Tensor:
        logits = self.model(patch).mean(dim=(1, 2, 3))
        return torch.sigmoid(logits).clamp(SCORE_CLAMP_EPS, 1.0 - SCORE_CLAMP_EPS)


def _check_batch(name: str, tensor: torch.Tensor, channels: int, size: Tuple[int, int]):
    if tensor.dim() != 4 or tensor.shape[1] != channels or tuple(tensor.shape[-2:]) != tuple(size):
        raise ArgumentError(f"{name} must be (B, {channels}, {size[0]}, {size[1]}), got {tuple(tensor.shape)}")


def param_net_forward(net: ParamNet, patch: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    size = tuple(patch.shape[-2:])
    _check_batch('patch', patch, 3, size)
    _check_batch('mask', mask, 1, size)
    return net(patch, mask)


def matte_net_forward(net: MatteNet, patch: torch.Tensor, mask: torch.Tensor,
                      relit: torch.Tensor) -> torch.Tensor:
    size = tuple(patch.shape[-2:])
    _check_batch('patch', patch, 3, size)
    _check_batch('mask', mask, 1, size)
    _check_batch('relit', relit, 3, size)
    return net(patch, mask, relit)


def d_net_forward(net: DNet, patch: torch.Tensor) -> torch.Tensor:
    if patch.dim() != 4 or patch.shape[1] != 3:
        raise ArgumentError(f"patch must be (B, 3, n, n), got {tuple(patch.shape)}")
    if patch.shape[-1] != patch.shape[-2] or patch.shape[-1] < DNET_MIN_SIZE:
        raise ArgumentError(f"D-Net needs square patches of at least {DNET_MIN_SIZE}, got {tuple(patch.shape[-2:])}")
    return net(patch)


@dataclass
class NetworkBundle:
    """The three networks plus what is needed to rebuild them"""
    param_net: ParamNet
    matte_net: MatteNet
    d_net: DNet
    preset: NetworkPreset
    patch_size: int
    bounded: bool = True

    @property
    def bounds(self) -> ParamBounds:
        return self.param_net.bounds

    def modules(self) -> Dict[str, nn.Module]:
        return {'param_net': self.param_net, 'matte_net': self.matte_net, 'd_net': self.d_net}

    def to(self, device) -> 'NetworkBundle':
        for module in self.modules().values():
            module.to(device)
        return self

    def train(self, mode: bool = True) -> 'NetworkBundle':
        for module in self.modules().values():
            module.train(mode)
        return self

    def eval(self) -> 'NetworkBundle':
        return self.train(False)

    def parameter_count(self) -> Dict[str, int]:
        return {name: sum(p.numel() for p in m.parameters()) for name, m in self.modules().items()}

    def generate(self, patch: torch.Tensor, mask: torch.Tensor) -> Dict[str, torch.Tensor]:
        """Generator pass: params, relit patch, matte and composed output"""
        w, b = param_net_forward(self.param_net, patch, mask)
        relit = ShadowPhysics.relight_tensor(patch, w, b)
        alpha = matte_net_forward(self.matte_net, patch, mask, relit)
        output = ShadowPhysics.compose_tensor(patch, relit, alpha)
        return {'w': w, 'b': b, 'relit': relit, 'alpha': alpha, 'output': output}


def build_networks(preset: NetworkPreset, patch_size: int, bounded: bool = True) -> NetworkBundle:
    if patch_size < DNET_MIN_SIZE:
        raise ArgumentError(f"Patch size must be >= {DNET_MIN_SIZE} for D-Net, got {patch_size}")
    bundle = NetworkBundle(
        param_net=ParamNet(preset.param_layers, preset.param_batch_norm, ParamBounds.for_run(bounded)),
        matte_net=MatteNet(preset.matte_base, preset.matte_depth),
        d_net=DNet(preset.dnet_widths),
        preset=preset,
        patch_size=patch_size,
        bounded=bounded,
    )
    logging.info(f"Built '{preset.name}' networks: {bundle.parameter_count()}")
    return bundle


def patch_to_batch(patch: np.ndarray, mask: np.ndarray) -> Tuple[torch.Tensor, torch.Tensor]:
    """H x W x 3 raster and H x W mask -> (1, 3, H, W), (1, 1, H, W) float32 tensors"""
    p = torch.from_numpy(np.ascontiguousarray(np.asarray(patch, dtype=np.float32).transpose(2, 0, 1)))[None]
    m = torch.from_numpy(np.asarray(mask, dtype=np.float32))[None, None]
    return p, m


def params_from_tensors(w: torch.Tensor, b: torch.Tensor, index: int = 0) -> ShadowParams:
    return ShadowParams(w[index].detach().cpu().double().numpy(), b[index].detach().cpu().double().numpy())
