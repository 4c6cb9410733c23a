"""
LAB RMSE evaluation for still images and the max-min video protocol.

RMSE is sqrt(mean of squared L*a*b* differences) taken jointly over pixels and the
three channels, computed on the shadow mask, its complement and the whole image.
"""

import os
import time
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from services.imaging import ColorSpace, ImageIO, Resampler
from services.mask_ops import MaskOps
from utils.constants import EVAL_SIZE, RMSE_DATASET_MODES
from utils.error_handlers import ArgumentError, ImageFormatError
from utils.helpers import FileHelper
from utils.monitoring import ApplicationMetrics
from utils.validators import InputValidator

REGIONS = ('shadow', 'nonshadow', 'all')
HEATMAP_LAB_SCALE = 50.0


@dataclass
class RmseResult:
    """Per-image RMSE triple plus the sums needed for pooling"""
    shadow: Optional[float]
    nonshadow: Optional[float]
    all: float
    counts: Dict[str, int]
    sse: Dict[str, float]
    per_channel: Optional[Dict[str, Optional[List[float]]]] = None

    def as_tuple(self):
        return self.shadow, self.nonshadow, self.all


@dataclass
class RmseReport:
    rmse_shadow: Optional[float]
    rmse_nonshadow: Optional[float]
    rmse_all: Optional[float]
    mode: str = 'per_image'
    per_image: List[Dict] = field(default_factory=list)
    skipped: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'rmse_shadow': self.rmse_shadow,
            'rmse_nonshadow': self.rmse_nonshadow,
            'rmse_all': self.rmse_all,
            'mode': self.mode,
            'images': len(self.per_image),
            'per_image': self.per_image,
            'skipped': self.skipped,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.per_image, columns=['image', 'rmse_shadow', 'rmse_nonshadow', 'rmse_all',
                                                     'n_shadow', 'n_nonshadow'])

    def save(self, path: str) -> str:
        """JSON report plus a per-image CSV next to it"""
        FileHelper.atomic_write_json(path, self.to_dict())
        csv_path = os.path.splitext(path)[0] + '.csv'
        self.to_frame().to_csv(csv_path, index=False)
        logging.info(f"Report written to {path} and {csv_path}")
        return path


def _squared_lab_error(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return (ColorSpace.rgb_to_lab(pred) - ColorSpace.rgb_to_lab(gt)) ** 2


def _rmse(sse: float, count: int) -> Optional[float]:
    return float(np.sqrt(sse / count)) if count > 0 else None


def rmse_lab(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray, eval_size: Optional[int] = EVAL_SIZE,
             per_channel: bool = False) -> RmseResult:
    """Shadow / non-shadow / all RMSE; shadow is None for an all-zero mask"""
    InputValidator.validate_raster(pred, 'pred')
    InputValidator.validate_raster(gt, 'gt')
    mask = InputValidator.validate_binary_mask(mask)
    InputValidator.validate_same_shape(pred, gt, ('pred', 'gt'))
    InputValidator.validate_same_shape(pred, mask, ('pred', 'mask'), spatial_only=True)
    if eval_size is not None:
        pred = Resampler.resize(pred, eval_size, eval_size)
        gt = Resampler.resize(gt, eval_size, eval_size)
        mask = Resampler.resize_nearest(mask, eval_size, eval_size)

    sq = _squared_lab_error(pred, gt)
    selections = {'shadow': mask, 'nonshadow': ~mask, 'all': np.ones_like(mask)}
    sse = {name: float(sq[sel].sum()) for name, sel in selections.items()}
    counts = {name: int(sel.sum()) for name, sel in selections.items()}
    channel_rmse = None
    if per_channel:
        channel_rmse = {name: (np.sqrt(sq[sel].mean(axis=0)).tolist() if sel.any() else None)
                        for name, sel in selections.items()}
    return RmseResult(
        shadow=_rmse(sse['shadow'], 3 * counts['shadow']),
        nonshadow=_rmse(sse['nonshadow'], 3 * counts['nonshadow']),
        all=_rmse(sse['all'], 3 * counts['all']),
        counts=counts, sse=sse, per_channel=channel_rmse,
    )


def error_heatmap(pred: np.ndarray, gt: np.ndarray, eval_size: Optional[int] = EVAL_SIZE) -> np.ndarray:
    """Per-pixel LAB error scaled to [0, 1] at HEATMAP_LAB_SCALE units"""
    if eval_size is not None:
        pred = Resampler.resize(pred, eval_size, eval_size)
        gt = Resampler.resize(gt, eval_size, eval_size)
    err = np.sqrt(_squared_lab_error(pred, gt).mean(axis=2))
    return np.clip(err / HEATMAP_LAB_SCALE, 0.0, 1.0)


def summarize(results: Dict[str, RmseResult], mode: str = 'per_image') -> Dict[str, Optional[float]]:
    """Dataset-level scores: mean of per-image RMSEs, or RMSE over pooled pixels"""
    InputValidator.validate_choice(mode, RMSE_DATASET_MODES, 'dataset mode')
    scores = {}
    for region in REGIONS:
        if mode == 'pooled':
            total_sse = sum(r.sse[region] for r in results.values())
            total_count = sum(3 * r.counts[region] for r in results.values())
            scores[region] = _rmse(total_sse, total_count)
        else:
            values = [getattr(r, region) for r in results.values() if getattr(r, region) is not None]
            scores[region] = float(np.mean(values)) if values else None
    return scores


def eval_istd(pred_dir: str, gt_dir: str, mask_dir: str, mode: str = 'per_image',
              eval_size: Optional[int] = EVAL_SIZE, per_channel: bool = False,
              heatmap_dir: Optional[str] = None, show_progress: bool = True) -> RmseReport:
    """Score every prediction against its same-named ground truth and mask"""
    start_time = time.time()
    InputValidator.validate_choice(mode, RMSE_DATASET_MODES, 'dataset mode')
    results: Dict[str, RmseResult] = {}
    skipped = []
    for name in tqdm(FileHelper.list_images(pred_dir), desc='eval-istd', disable=not show_progress):
        gt_path = FileHelper.find_pair(gt_dir, name)
        mask_path = FileHelper.find_pair(mask_dir, name)
        if gt_path is None or mask_path is None:
            logging.warning(f"Skipping {name}: missing {'ground truth' if gt_path is None else 'mask'}")
            skipped.append({'image': name, 'reason': 'unmatched'})
            continue
        try:
            pred = ImageIO.load_image(os.path.join(pred_dir, name))
            gt = ImageIO.load_image(gt_path)
            mask = MaskOps.load_mask(mask_path)
            results[name] = rmse_lab(pred, gt, mask, eval_size, per_channel)
        except (ArgumentError, ImageFormatError) as e:
            logging.warning(f"Skipping {name}: {str(e)}")
            skipped.append({'image': name, 'reason': str(e)})
            continue
        if heatmap_dir:
            ImageIO.save_gray(error_heatmap(pred, gt, eval_size),
                              os.path.join(heatmap_dir, os.path.splitext(name)[0] + '_error.png'))

    per_image = []
    for name, r in results.items():
        row = {'image': name, 'rmse_shadow': r.shadow, 'rmse_nonshadow': r.nonshadow, 'rmse_all': r.all,
               'n_shadow': r.counts['shadow'], 'n_nonshadow': r.counts['nonshadow']}
        if r.per_channel is not None:
            row['per_channel'] = r.per_channel
        per_image.append(row)

    scores = summarize(results, mode)
    ApplicationMetrics.track_evaluation('istd', len(results), scores, time.time() - start_time)
    return RmseReport(scores['shadow'], scores['nonshadow'], scores['all'], mode, per_image, skipped)


@dataclass
class VideoPseudoGT:
    v_max: np.ndarray
    v_min: np.ndarray
    moving_mask: np.ndarray
    epsilon: float
    frame_count: Optional[int] = None

    def save(self, out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        ImageIO.save_image(self.v_max, os.path.join(out_dir, 'v_max.png'))
        ImageIO.save_image(self.v_min, os.path.join(out_dir, 'v_min.png'))
        MaskOps.save_mask(self.moving_mask, os.path.join(out_dir, 'moving_mask.png'))
        FileHelper.atomic_write_json(os.path.join(out_dir, 'pseudo_gt.json'), {
            'epsilon': self.epsilon,
            'frame_count': self.frame_count,
            'moving_pixels': int(self.moving_mask.sum()),
        })
        return out_dir

    @staticmethod
    def load(directory: str) -> 'VideoPseudoGT':
        meta_path = os.path.join(directory, 'pseudo_gt.json')
        meta = {}
        if os.path.isfile(meta_path):
            with open(meta_path, 'r', encoding='utf-8') as f:
                meta = json.load(f)
        return VideoPseudoGT(
            v_max=ImageIO.load_image(os.path.join(directory, 'v_max.png')),
            v_min=ImageIO.load_image(os.path.join(directory, 'v_min.png')),
            moving_mask=MaskOps.load_mask(os.path.join(directory, 'moving_mask.png')),
            epsilon=float(meta.get('epsilon', float('nan'))),
            frame_count=meta.get('frame_count'),
        )


def _load_frames(frames_dir: str) -> List[np.ndarray]:
    return [ImageIO.load_image(os.path.join(frames_dir, name)) for name in FileHelper.list_images(frames_dir)]


def pseudo_gt_from_frames(frames: Sequence[np.ndarray], epsilon: float) -> VideoPseudoGT:
    """Per-pixel, per-channel temporal max and min, plus the moving-shadow mask"""
    if len(frames) < 2:
        raise ArgumentError(f"Need at least 2 frames, got {len(frames)}")
    v_max = np.array(InputValidator.validate_raster(frames[0], 'frame 0'), copy=True)
    v_min = v_max.copy()
    for i, frame in enumerate(frames[1:], start=1):
        InputValidator.validate_raster(frame, f'frame {i}')
        if frame.shape != v_max.shape:
            raise ImageFormatError(f"Frame {i} has shape {frame.shape}, expected {v_max.shape}")
        np.maximum(v_max, frame, out=v_max)
        np.minimum(v_min, frame, out=v_min)
    moving = MaskOps.moving_shadow_mask(v_max, v_min, epsilon)
    logging.info(f"Pseudo ground truth from {len(frames)} frames: {int(moving.sum())} moving-shadow pixels")
    return VideoPseudoGT(v_max, v_min, moving, epsilon, len(frames))


def build_video_pseudo_gt(frames_dir: str, epsilon: float) -> VideoPseudoGT:
    return pseudo_gt_from_frames(_load_frames(frames_dir), epsilon)


def eval_video(pred_frames: Sequence[np.ndarray], pseudo_gt: VideoPseudoGT,
               eval_size: Optional[int] = None) -> Optional[float]:
    """Mean over frames of LAB RMSE against v_max on the moving-shadow mask; None when the mask is empty"""
    if pseudo_gt.frame_count is not None and len(pred_frames) != pseudo_gt.frame_count:
        raise ArgumentError(f"Expected {pseudo_gt.frame_count} frames, got {len(pred_frames)}")
    if not pred_frames:
        raise ArgumentError("No predicted frames")
    if not pseudo_gt.moving_mask.any():
        logging.warning("Empty moving-shadow mask; video skipped")
        return None
    per_frame = [rmse_lab(frame, pseudo_gt.v_max, pseudo_gt.moving_mask, eval_size).shadow
                 for frame in pred_frames]
    return float(np.mean(per_frame))


def _video_dirs(root: str) -> List[str]:
    if FileHelper.list_images(root):
        return ['']
    return sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))


def eval_video_dataset(pred_root: str, gt_root: str, eval_size: Optional[int] = None,
                       show_progress: bool = True) -> Dict:
    """Score each video (frames under pred_root/<video>, pseudo GT under gt_root/<video>) and average"""
    start_time = time.time()
    videos = []
    for video in tqdm(_video_dirs(pred_root), desc='eval-video', disable=not show_progress):
        pred_frames = _load_frames(os.path.join(pred_root, video))
        pseudo_gt = VideoPseudoGT.load(os.path.join(gt_root, video))
        score = eval_video(pred_frames, pseudo_gt, eval_size)
        videos.append({'video': video or os.path.basename(os.path.normpath(pred_root)),
                       'rmse': score, 'frames': len(pred_frames), 'skipped': score is None})

    scored = [v['rmse'] for v in videos if v['rmse'] is not None]
    report = {'rmse': float(np.mean(scored)) if scored else None, 'videos': videos}
    ApplicationMetrics.track_evaluation('video', len(scored), {'rmse': report['rmse']}, time.time() - start_time)
    return report
