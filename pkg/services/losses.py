"""
Training objectives over batched tensors.

Shapes: alpha (B, 1, H, W); images (B, 3, H, W); regions (B, 4, H, W) stacked as
umbra, m_in, m_out, nonshadow (see RegionMasks.to_float_stack). Each loss averages
per-sample values over the batch. 2-D mattes and RegionMasks are accepted for
single-patch use.
"""

import logging
from typing import Dict, Union

import numpy as np
import torch

from config.settings import LossWeights
from services.mask_ops import RegionMasks
from utils.constants import SCORE_CLAMP_EPS, ADVERSARIAL_MODES
from utils.error_handlers import ArgumentError, TrainingStepError

UMBRA, M_IN, M_OUT, NONSHADOW = range(4)
LOSS_PARTS = ('l_sm', 'l_mat', 'l_bd', 'l_adv')

TensorLike = Union[torch.Tensor, np.ndarray]


def _as_image_batch(x: TensorLike, channels: int) -> torch.Tensor:
    t = torch.as_tensor(x)
    if t.dim() == 2 and channels == 1:
        return t[None, None]
    if t.dim() == 3:
        # H x W x C numpy raster or C x H x W tensor
        t = t.permute(2, 0, 1) if t.shape[-1] == channels and t.shape[0] != channels else t
        return t[None]
    if t.dim() != 4 or t.shape[1] != channels:
        raise ArgumentError(f"Expected a batch with {channels} channel(s), got shape {tuple(t.shape)}")
    return t


def _as_region_batch(regions: Union[torch.Tensor, RegionMasks], like: torch.Tensor) -> torch.Tensor:
    if isinstance(regions, RegionMasks):
        regions = torch.from_numpy(regions.to_float_stack())[None]
    regions = regions.to(dtype=like.dtype, device=like.device)
    if regions.dim() != 4 or regions.shape[1] != 4 or regions.shape[-2:] != like.shape[-2:]:
        raise ArgumentError(f"Region stack {tuple(regions.shape)} does not match input {tuple(like.shape)}")
    return regions


def _masked_mean(values: torch.Tensor, region: torch.Tensor) -> torch.Tensor:
    """Per-sample mean of values over region pixels (all channels); 0 for an empty region"""
    channels = values.shape[1]
    total = (values * region).flatten(1).sum(dim=1)
    count = region.flatten(1).sum(dim=1) * channels
    return torch.where(count > 0, total / count.clamp(min=1.0), torch.zeros_like(total))


class ShadowLosses:
    @staticmethod
    def matting_loss(alpha: TensorLike, regions) -> torch.Tensor:
        """alpha pulled to 1 on the umbra and to 0 outside the dilated mask"""
        alpha = _as_image_batch(alpha, 1)
        regions = _as_region_batch(regions, alpha)
        umbra = regions[:, UMBRA:UMBRA + 1]
        nonshadow = regions[:, NONSHADOW:NONSHADOW + 1]
        per_sample = _masked_mean((alpha - 1.0).abs(), umbra) + _masked_mean(alpha.abs(), nonshadow)
        return per_sample.mean()

    @staticmethod
    def smoothness_loss(alpha: TensorLike) -> torch.Tensor:
        """L1 of forward differences in x plus in y"""
        alpha = _as_image_batch(alpha, 1)
        if alpha.shape[-1] < 2 or alpha.shape[-2] < 2:
            raise ArgumentError(f"Smoothness needs a matte of at least 2x2, got {tuple(alpha.shape[-2:])}")
        dx = (alpha[..., :, 1:] - alpha[..., :, :-1]).abs().flatten(1).mean(dim=1)
        dy = (alpha[..., 1:, :] - alpha[..., :-1, :]).abs().flatten(1).mean(dim=1)
        return (dx + dy).mean()

    @staticmethod
    def boundary_loss(output: TensorLike, regions) -> torch.Tensor:
        """|mean over m_in - mean over m_out| of the composed output"""
        output = _as_image_batch(output, 3)
        regions = _as_region_batch(regions, output)
        m_in = regions[:, M_IN:M_IN + 1]
        m_out = regions[:, M_OUT:M_OUT + 1]
        usable = (m_in.flatten(1).sum(dim=1) > 0) & (m_out.flatten(1).sum(dim=1) > 0)
        empty = int((~usable).sum())
        if empty:
            logging.warning(f"{empty} patch(es) without a usable boundary ring; boundary loss set to 0")
        diff = (_masked_mean(output, m_in) - _masked_mean(output, m_out)).abs()
        return torch.where(usable, diff, torch.zeros_like(diff)).mean()

    @staticmethod
    def adversarial_loss_generator(critic_score: TensorLike, mode: str = 'nonsaturating') -> torch.Tensor:
        if mode not in ADVERSARIAL_MODES:
            raise ArgumentError(f"adversarial mode must be one of {ADVERSARIAL_MODES}")
        score = torch.as_tensor(critic_score).clamp(SCORE_CLAMP_EPS, 1.0 - SCORE_CLAMP_EPS)
        if mode == 'literal':
            return torch.log(1.0 - score).mean()
        return (-torch.log(score)).mean()

    @staticmethod
    def critic_loss(score_real: TensorLike, score_fake: TensorLike) -> torch.Tensor:
        real = torch.as_tensor(score_real).clamp(SCORE_CLAMP_EPS, 1.0 - SCORE_CLAMP_EPS)
        fake = torch.as_tensor(score_fake).clamp(SCORE_CLAMP_EPS, 1.0 - SCORE_CLAMP_EPS)
        return (-torch.log(real)).mean() + (-torch.log(1.0 - fake)).mean()

    @staticmethod
    def total_generator_loss(parts: Dict[str, TensorLike], weights: LossWeights,
                             step: int = None) -> torch.Tensor:
        """Weighted sum over l_sm, l_mat, l_bd, l_adv; a non-finite part aborts the step"""
        for name in LOSS_PARTS:
            value = torch.as_tensor(parts[name])
            if not bool(torch.isfinite(value).all()):
                raise TrainingStepError(f"Non-finite {name} ({float(value.detach().sum())})",
                                        component=name, step=step)
        return (weights.lambda_sm * torch.as_tensor(parts['l_sm'])
                + weights.lambda_mat * torch.as_tensor(parts['l_mat'])
                + weights.lambda_bd * torch.as_tensor(parts['l_bd'])
                + weights.lambda_adv * torch.as_tensor(parts['l_adv']))
