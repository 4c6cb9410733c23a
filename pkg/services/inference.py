"""
Full-image shadow removal from patch estimates.

Boundary patches on the inference grid each yield (w, b), a matte and a critic score.
Image parameters are the score-weighted mean of patch parameters; the image matte
is the score-weighted per-pixel mean of patch mattes, overridden to 1 on the umbra
and 0 on non-shadow pixels.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from scipy import ndimage

from models.networks import NetworkBundle, d_net_forward, patch_to_batch
from services.mask_ops import MaskOps, RegionMasks
from services.patch_pipeline import PatchGrid
from services.shadow_physics import ParamBounds, ShadowParams, ShadowPhysics, MatteOps
from utils.constants import DEFAULT_MORPH_RADIUS, EDGE_POLICIES, ERROR_MESSAGES
from utils.error_handlers import ArgumentError
from utils.validators import InputValidator


@dataclass
class PatchEstimate:
    top: int
    left: int
    params: ShadowParams
    matte: np.ndarray
    critic_score: float

    @property
    def coords(self) -> Tuple[int, int]:
        return self.top, self.left


@dataclass
class RemovalResult:
    output: np.ndarray
    params: ShadowParams
    matte: np.ndarray
    relit: np.ndarray
    estimates: List[PatchEstimate] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)


def aggregate_params(estimates: List[PatchEstimate]) -> ShadowParams:
    """Convex combination of patch parameters with critic scores normalised to sum to 1"""
    if not estimates:
        raise ArgumentError("aggregate_params needs at least one estimate")
    scores = np.array([e.critic_score for e in estimates], dtype=np.float64)
    InputValidator.validate_finite(scores, 'critic scores')
    if np.any(scores <= 0):
        raise ArgumentError("Critic scores must be positive")
    weights = scores / scores.sum()
    w = np.sum([wt * e.params.w for wt, e in zip(weights, estimates)], axis=0)
    b = np.sum([wt * e.params.b for wt, e in zip(weights, estimates)], axis=0)
    return ShadowParams(w, b)


def ramp_matte(regions: RegionMasks) -> np.ndarray:
    """Linear ramp by distance: 1 at the umbra, 0 at non-shadow pixels"""
    shadow = regions.umbra | regions.m_in
    umbra = regions.umbra if regions.umbra.any() else shadow
    outside = regions.nonshadow if regions.nonshadow.any() else ~shadow
    if not umbra.any() or not outside.any():
        return shadow.astype(np.float64)
    d_umbra = ndimage.distance_transform_edt(~umbra)
    d_outside = ndimage.distance_transform_edt(~outside)
    denom = d_umbra + d_outside
    return np.where(denom > 0, d_outside / np.where(denom > 0, denom, 1.0), 1.0)


def stitch_matte(estimates: List[PatchEstimate], regions: RegionMasks, height: int, width: int) -> np.ndarray:
    """Score-weighted per-pixel mean of patch mattes, then umbra <- 1 and non-shadow <- 0"""
    acc = np.zeros((height, width), dtype=np.float64)
    weight = np.zeros((height, width), dtype=np.float64)
    for e in estimates:
        n_h, n_w = e.matte.shape
        acc[e.top:e.top + n_h, e.left:e.left + n_w] += e.critic_score * e.matte
        weight[e.top:e.top + n_h, e.left:e.left + n_w] += e.critic_score

    covered = weight > 0
    matte = np.where(covered, acc / np.where(covered, weight, 1.0), 0.0)
    penumbra = regions.m_in | regions.m_out
    uncovered = penumbra & ~covered
    if uncovered.any():
        logging.debug(f"{int(uncovered.sum())} penumbra pixels not covered by any patch; using distance ramp")
        matte[uncovered] = ramp_matte(regions)[uncovered]
    matte[regions.nonshadow] = 0.0
    matte[regions.umbra] = 1.0
    return np.clip(matte, 0.0, 1.0).astype(np.float32)


class ShadowRemover:
    def __init__(self, bundle: NetworkBundle, radius: int = DEFAULT_MORPH_RADIUS,
                 stride: Optional[int] = None, edge_policy: str = 'drop',
                 score_after_override: bool = False, batch_size: int = 32, device: str = 'cpu'):
        self.bundle = bundle.to(device).eval()
        self.patch_size = bundle.patch_size
        self.radius = InputValidator.validate_positive_int(radius, 'radius')
        self.stride = stride or max(self.patch_size // 4, 1)
        self.edge_policy = InputValidator.validate_choice(edge_policy, EDGE_POLICIES, 'edge_policy')
        self.score_after_override = score_after_override
        self.batch_size = batch_size
        self.device = device

    @property
    def bounds(self) -> ParamBounds:
        return self.bundle.bounds

    @torch.no_grad()
    def estimate_patches(self, img: np.ndarray, mask: np.ndarray,
                         regions: RegionMasks) -> List[PatchEstimate]:
        records = [r for r in PatchGrid.crop_grid(img, mask, self.patch_size, self.stride, self.edge_policy)
                   if r.label == 'B']
        return self._estimate_records(records, regions)

    @torch.no_grad()
    def _estimate_records(self, records, regions: RegionMasks) -> List[PatchEstimate]:
        n = self.patch_size
        estimates = []
        for start in range(0, len(records), self.batch_size):
            chunk = records[start:start + self.batch_size]
            patches, masks = zip(*(patch_to_batch(r.patch, r.mask_patch) for r in chunk))
            patch = torch.cat(patches).to(self.device)
            mask = torch.cat(masks).to(self.device)
            generated = self.bundle.generate(patch, mask)
            scored = generated['output']
            if self.score_after_override:
                scored = self._override_outputs(generated, chunk, regions)
            scores = d_net_forward(self.bundle.d_net, scored).cpu().double().numpy()
            w = generated['w'].cpu().double().numpy()
            b = generated['b'].cpu().double().numpy()
            alpha = generated['alpha'][:, 0].cpu().numpy()
            for i, r in enumerate(chunk):
                estimates.append(PatchEstimate(r.top, r.left, ShadowParams(w[i], b[i]),
                                               alpha[i].astype(np.float32), float(scores[i])))
        logging.debug(f"Estimated {len(estimates)} boundary patches at n={n}, stride={self.stride}")
        return estimates

    def _override_outputs(self, generated, chunk, regions: RegionMasks) -> torch.Tensor:
        """Recompose patch outputs with the umbra/non-shadow matte override applied"""
        alpha = generated['alpha'].clone()
        n = self.patch_size
        for i, r in enumerate(chunk):
            umbra = torch.from_numpy(regions.umbra[r.top:r.top + n, r.left:r.left + n]).to(alpha.device)
            nonshadow = torch.from_numpy(regions.nonshadow[r.top:r.top + n, r.left:r.left + n]).to(alpha.device)
            alpha[i, 0][umbra] = 1.0
            alpha[i, 0][nonshadow] = 0.0
        patch = torch.stack([torch.from_numpy(np.ascontiguousarray(r.patch.transpose(2, 0, 1))) for r in chunk])
        return ShadowPhysics.compose_tensor(patch.to(alpha.device), generated['relit'], alpha)

    def _fallback_estimate(self, img: np.ndarray, mask: np.ndarray, regions: RegionMasks) -> List[PatchEstimate]:
        """Largest shadow-overlap window, used when the grid has no boundary patch"""
        records = PatchGrid.crop_grid(img, mask, self.patch_size, self.stride, self.edge_policy)
        best = max(records, key=lambda r: (int(np.count_nonzero(r.mask_patch)), -r.top, -r.left))
        return self._estimate_records([best], regions)

    def remove_shadow(self, img: np.ndarray, mask: np.ndarray) -> RemovalResult:
        InputValidator.validate_raster(img)
        mask = InputValidator.validate_binary_mask(mask)
        InputValidator.validate_same_shape(img, mask, ('image', 'mask'), spatial_only=True)
        height, width = mask.shape
        if not mask.any():
            logging.info("Empty mask; returning input unchanged")
            return RemovalResult(output=img.copy(), params=ShadowParams.identity(),
                                 matte=MatteOps.constant(height, width, 0.0), relit=img.copy(),
                                 metadata={'empty_mask': True, 'fallback': False, 'patches': 0})
        if self.patch_size > min(height, width):
            raise ArgumentError(f"{ERROR_MESSAGES['PATCH_TOO_LARGE']}: n={self.patch_size}, image {height}x{width}")

        regions = MaskOps.build_regions(mask, self.radius)
        estimates = self.estimate_patches(img, mask, regions)
        fallback = not estimates
        if fallback:
            logging.warning("No boundary patches on the inference grid; using the largest-overlap patch")
            estimates = self._fallback_estimate(img, mask, regions)

        params = aggregate_params(estimates).validate(self.bounds)
        matte = stitch_matte(estimates, regions, height, width)
        relit = ShadowPhysics.relight(img, params, self.bounds)
        output = ShadowPhysics.compose(img, relit, matte)
        metadata = {
            'empty_mask': False,
            'fallback': fallback,
            'patches': len(estimates),
            'stride': self.stride,
            'edge_policy': self.edge_policy,
            'params': params.to_dict(),
        }
        logging.info(f"Removed shadow using {len(estimates)} patch estimate(s): {params.to_dict()}")
        return RemovalResult(output, params, matte, relit, estimates, metadata)

    def decompose(self, img: np.ndarray, mask: np.ndarray) -> Dict[str, np.ndarray]:
        """Panels: input, matte, relit, relit*alpha, shadow*(1-alpha), output, region overlay"""
        result = self.remove_shadow(img, mask)
        alpha = result.matte[..., None]
        regions = MaskOps.build_regions(InputValidator.validate_binary_mask(mask), self.radius)
        return {
            'input': img,
            'matte': result.matte,
            'relit': result.relit,
            'relit_alpha': np.clip(result.relit * alpha, 0.0, 1.0),
            'shadow_one_minus_alpha': np.clip(img * (1.0 - alpha), 0.0, 1.0),
            'output': result.output,
            'regions': MaskOps.region_overlay(img, regions),
        }
