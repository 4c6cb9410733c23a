#!/usr/bin/env python3
"""
shadowpatch command-line entry point.

Every stage of the pipeline is a subcommand. Settings resolve as
CLI flag > config file (--config or SHADOWPATCH_CONFIG) > SHADOWPATCH_* environment > default,
and every run records its configuration in <run_dir>/run.json.
"""

import os
import sys
import json
import shutil
import logging
import argparse
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

current_dir = Path(__file__).parent.absolute()
sys.path.insert(0, str(current_dir))

load_dotenv()

from config.settings import Config, RunConfig
from config.presets import get_preset, preset_names
from utils.constants import ABLATIONS, ADVERSARIAL_MODES, EDGE_POLICIES, RMSE_DATASET_MODES, PIXEL_MAX_8BIT
from utils.error_handlers import ConfigurationError, handle_errors
from utils.helpers import FileHelper, RunHelper

LOG_FILE_NAME = 'shadowpatch.log'


def setup_logging(run_dir: Optional[str] = None, level: Optional[str] = None):
    """Stream handler plus <run_dir>/shadowpatch.log"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(run_dir, LOG_FILE_NAME), encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, (level or os.getenv('SHADOWPATCH_LOG_LEVEL', Config.LOG_LEVEL)).upper(), logging.INFO),
        format=Config.LOG_FORMAT,
        handlers=handlers,
        force=True
    )


def select_device() -> str:
    import torch
    return 'cuda' if torch.cuda.is_available() else 'cpu'


def _require_dir(path: Optional[str], flag: str):
    if not path or not os.path.isdir(path):
        raise ConfigurationError(f"--{flag} directory does not exist: {path}")


def _require_file(path: Optional[str], flag: str):
    if not path:
        raise ConfigurationError(f"--{flag} is required")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"--{flag} file not found: {path}")


def _start_run(command: str, config: RunConfig, run_dir: str):
    RunHelper.seed_everything(config.seed, config.deterministic)
    RunHelper.write_run_record(run_dir, command, config.to_dict(), config.seed)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

@handle_errors('build-patches')
def cmd_build_patches(config: RunConfig, args) -> int:
    from services.patch_pipeline import build_manifest

    config.require_dirs('images', 'masks')
    if not config.out:
        raise ConfigurationError("--out manifest path is required")
    _start_run('build-patches', config, os.path.dirname(os.path.abspath(config.out)))
    manifest = build_manifest(config.images, config.masks, config.patch_size, config.grid_stride(), config.edge_policy)
    manifest.save(config.out)
    counts = manifest.counts
    print(f"[✓] {len(manifest)} patches: N={counts['N']} B={counts['B']} F={counts['F']} -> {config.out}")
    if manifest.skipped:
        print(f"[!] {len(manifest.skipped)} file(s) skipped, see manifest header")
    return 0


@handle_errors('train')
def cmd_train(config: RunConfig, args) -> int:
    from models.checkpoint import CheckpointStore
    from models.manifest import PatchManifest
    from models.networks import build_networks
    from services.trainer import AdversarialTrainer

    _require_file(config.manifest, 'manifest')
    if not config.out:
        raise ConfigurationError("--out run directory is required")
    _start_run('train', config, config.out)

    manifest = PatchManifest.load(config.manifest)
    if config.images:
        manifest.images_dir = config.images
    if config.masks:
        manifest.masks_dir = config.masks
    train_config = config.train_config()
    train_config.patch_size = manifest.patch_size

    if args.resume:
        state = CheckpointStore.load(args.resume)
        bundle = state.bundle
    else:
        bundle = build_networks(get_preset(train_config.preset), manifest.patch_size, train_config.bounded)

    trainer = AdversarialTrainer(bundle, train_config, device=select_device())
    if args.resume:
        trainer.load_optimizer_state(state.optimizers)
        trainer.epoch, trainer.step = state.epoch, state.step
    path = trainer.train(manifest, config.out)
    print(f"[✓] Trained {trainer.epoch} epoch(s), {trainer.step} step(s) -> {path}")
    return 0


def _load_remover(config: RunConfig, args):
    from models.checkpoint import CheckpointStore
    from services.inference import ShadowRemover

    _require_file(config.ckpt, 'ckpt')
    state = CheckpointStore.load(config.ckpt)
    return ShadowRemover(state.bundle, radius=config.radius, stride=config.stride,
                         edge_policy=config.edge_policy, score_after_override=config.score_after_override,
                         device=select_device())


@handle_errors('remove')
def cmd_remove(config: RunConfig, args) -> int:
    from services.imaging import ImageIO
    from services.mask_ops import MaskOps

    _require_file(args.image, 'image')
    _require_file(args.mask, 'mask')
    if not config.out:
        raise ConfigurationError("--out image path is required")
    out_dir = os.path.dirname(os.path.abspath(config.out))
    _start_run('remove', config, out_dir)

    img = ImageIO.load_image(args.image)
    mask = MaskOps.load_mask(args.mask)
    remover = _load_remover(config, args)
    result = remover.remove_shadow(img, mask)

    same_suffix = os.path.splitext(args.image)[1].lower() == os.path.splitext(config.out)[1].lower()
    if result.metadata['empty_mask'] and same_suffix:
        shutil.copyfile(args.image, config.out)
    else:
        ImageIO.save_image(result.output, config.out)

    stem = os.path.splitext(config.out)[0]
    if args.dump_matte:
        ImageIO.save_gray(result.matte, f'{stem}_matte.png')
    if args.dump_relit:
        ImageIO.save_image(result.relit, f'{stem}_relit.png')
    if args.dump_params:
        FileHelper.atomic_write_json(f'{stem}_params.json', {**result.params.to_dict(), 'metadata': result.metadata})
    flag = ' (fallback patch)' if result.metadata['fallback'] else ''
    print(f"[✓] Shadow removed{flag} -> {config.out}")
    return 0


@handle_errors('decompose')
def cmd_decompose(config: RunConfig, args) -> int:
    from services.imaging import ImageIO
    from services.mask_ops import MaskOps

    _require_file(args.image, 'image')
    _require_file(args.mask, 'mask')
    if not config.out:
        raise ConfigurationError("--out directory is required")
    _start_run('decompose', config, config.out)

    img = ImageIO.load_image(args.image)
    mask = MaskOps.load_mask(args.mask)
    panels = _load_remover(config, args).decompose(img, mask)
    for name, panel in panels.items():
        path = os.path.join(config.out, f'{name}.png')
        if panel.ndim == 2:
            ImageIO.save_gray(panel, path)
        else:
            ImageIO.save_image(panel, path)
    print(f"[✓] {len(panels)} decomposition panels -> {config.out}")
    return 0


@handle_errors('regions')
def cmd_regions(config: RunConfig, args) -> int:
    from services.imaging import ImageIO
    from services.mask_ops import MaskOps

    _require_file(args.image, 'image')
    _require_file(args.mask, 'mask')
    if not config.out:
        raise ConfigurationError("--out image path is required")
    _start_run('regions', config, os.path.dirname(os.path.abspath(config.out)))
    img = ImageIO.load_image(args.image)
    regions = MaskOps.build_regions(MaskOps.load_mask(args.mask), config.radius)
    ImageIO.save_image(MaskOps.region_overlay(img, regions), config.out)
    print(f"[✓] m_in={int(regions.m_in.sum())} m_out={int(regions.m_out.sum())} px -> {config.out}")
    return 0


@handle_errors('eval-istd')
def cmd_eval_istd(config: RunConfig, args) -> int:
    from services.evaluation import eval_istd

    for path, flag in ((args.pred, 'pred'), (args.gt, 'gt'), (args.mask_dir, 'mask')):
        _require_dir(path, flag)
    if not config.out:
        raise ConfigurationError("--out report path is required")
    _start_run('eval-istd', config, os.path.dirname(os.path.abspath(config.out)))
    report = eval_istd(args.pred, args.gt, args.mask_dir, mode=config.dataset_mode, eval_size=config.eval_size,
                       per_channel=config.per_channel, heatmap_dir=args.heatmaps)
    report.save(config.out)
    print(f"[✓] RMSE shadow={report.rmse_shadow} nonshadow={report.rmse_nonshadow} all={report.rmse_all}")
    return 0


@handle_errors('video-pseudo-gt')
def cmd_video_pseudo_gt(config: RunConfig, args) -> int:
    from services.evaluation import build_video_pseudo_gt

    _require_dir(args.frames, 'frames')
    if not config.out:
        raise ConfigurationError("--out directory is required")
    _start_run('video-pseudo-gt', config, config.out)
    pseudo_gt = build_video_pseudo_gt(args.frames, config.epsilon / PIXEL_MAX_8BIT)
    pseudo_gt.save(config.out)
    print(f"[✓] {int(pseudo_gt.moving_mask.sum())} moving-shadow pixels -> {config.out}")
    return 0


@handle_errors('eval-video')
def cmd_eval_video(config: RunConfig, args) -> int:
    from services.evaluation import eval_video_dataset

    _require_dir(args.pred, 'pred')
    _require_dir(args.gt, 'gt')
    if not config.out:
        raise ConfigurationError("--out report path is required")
    _start_run('eval-video', config, os.path.dirname(os.path.abspath(config.out)))
    report = eval_video_dataset(args.pred, args.gt, eval_size=args.video_eval_size)
    FileHelper.atomic_write_json(config.out, report)
    print(f"[✓] Video RMSE {report['rmse']} over {len(report['videos'])} video(s)")
    return 0


@handle_errors('finetune')
def cmd_finetune(config: RunConfig, args) -> int:
    from services.trainer import finetune_on_video

    _require_file(config.ckpt, 'ckpt')
    _require_dir(args.frames, 'frames')
    _require_dir(config.masks, 'masks')
    out_path = config.out or f'{os.path.splitext(config.ckpt)[0]}_finetuned.pt'
    _start_run('finetune', config, os.path.dirname(os.path.abspath(out_path)))
    path = finetune_on_video(config.ckpt, args.frames, config.masks, epochs=args.finetune_epochs,
                             out_path=out_path, stride=config.stride, device=select_device())
    print(f"[✓] Fine-tuned checkpoint -> {path}")
    return 0


@handle_errors('make-synthetic')
def cmd_make_synthetic(config: RunConfig, args) -> int:
    from services.synthetic import SyntheticShadowGenerator

    if not config.out:
        raise ConfigurationError("--out directory is required")
    _start_run('make-synthetic', config, config.out)
    generator = SyntheticShadowGenerator(size=args.size, seed=config.seed, b_jitter=args.b_jitter)
    generator.write_dataset(config.out, args.count)
    print(f"[✓] {args.count} synthetic images -> {config.out}")
    return 0


COMMANDS = {
    'build-patches': cmd_build_patches,
    'train': cmd_train,
    'remove': cmd_remove,
    'eval-istd': cmd_eval_istd,
    'video-pseudo-gt': cmd_video_pseudo_gt,
    'eval-video': cmd_eval_video,
    'finetune': cmd_finetune,
    'decompose': cmd_decompose,
    'make-synthetic': cmd_make_synthetic,
    'regions': cmd_regions,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument('--config', help='JSON config file (default: $SHADOWPATCH_CONFIG)')
    p.add_argument('--seed', type=int)
    p.add_argument('--workers', type=int)
    p.add_argument('--log-level', dest='log_level')
    p.add_argument('--deterministic', action='store_true', default=None)


def _add_geometry(p: argparse.ArgumentParser):
    p.add_argument('--patch-size', dest='patch_size', type=int)
    p.add_argument('--stride', type=int)
    p.add_argument('--radius', type=int)
    p.add_argument('--edge-policy', dest='edge_policy', choices=EDGE_POLICIES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='shadowpatch', description='Weakly-supervised patch-based shadow removal')
    sub = parser.add_subparsers(dest='command', metavar='{' + ','.join(COMMANDS) + '}')
    sub.required = True

    p = sub.add_parser('build-patches', help='cut images into labelled patches and write a manifest')
    _add_common(p)
    _add_geometry(p)
    p.add_argument('--images')
    p.add_argument('--masks')
    p.add_argument('--out', help='manifest path (.jsonl)')

    p = sub.add_parser('train', help='adversarial training from a manifest')
    _add_common(p)
    p.add_argument('--manifest')
    p.add_argument('--images', help='override the manifest image directory')
    p.add_argument('--masks', help='override the manifest mask directory')
    p.add_argument('--out', help='run directory')
    p.add_argument('--epochs', type=int)
    p.add_argument('--batch', dest='batch_size', type=int)
    p.add_argument('--preset', choices=preset_names())
    p.add_argument('--radius', type=int)
    p.add_argument('--lr-matte-d', dest='lr_matte_d', type=float)
    p.add_argument('--lr-param', dest='lr_param', type=float)
    p.add_argument('--lambda-sm', dest='lambda_sm', type=float)
    p.add_argument('--lambda-mat', dest='lambda_mat', type=float)
    p.add_argument('--lambda-bd', dest='lambda_bd', type=float)
    p.add_argument('--lambda-adv', dest='lambda_adv', type=float)
    p.add_argument('--adversarial-mode', dest='adversarial_mode', choices=ADVERSARIAL_MODES)
    p.add_argument('--ablate', action='append', choices=ABLATIONS)
    p.add_argument('--checkpoint-every', dest='checkpoint_every', type=int)
    p.add_argument('--lr-decay-start', dest='lr_decay_start', type=int)
    p.add_argument('--max-steps', dest='max_steps', type=int)
    p.add_argument('--resume', help='checkpoint to continue from')

    for name, help_text in (('remove', 'remove the shadow from one image'),
                            ('decompose', 'write decomposition panels for one image')):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        _add_geometry(p)
        p.add_argument('--image')
        p.add_argument('--mask')
        p.add_argument('--ckpt')
        p.add_argument('--out')
        p.add_argument('--score-after-override', dest='score_after_override', action='store_true', default=None)
        if name == 'remove':
            p.add_argument('--dump-matte', dest='dump_matte', action='store_true')
            p.add_argument('--dump-params', dest='dump_params', action='store_true')
            p.add_argument('--dump-relit', dest='dump_relit', action='store_true')

    p = sub.add_parser('regions', help='overlay the inner and outer boundary rings on an image')
    _add_common(p)
    p.add_argument('--image')
    p.add_argument('--mask')
    p.add_argument('--radius', type=int)
    p.add_argument('--out')

    p = sub.add_parser('eval-istd', help='LAB RMSE over a prediction directory')
    _add_common(p)
    p.add_argument('--pred')
    p.add_argument('--gt')
    p.add_argument('--mask', dest='mask_dir')
    p.add_argument('--out', help='report path (.json); a .csv is written alongside')
    p.add_argument('--eval-size', dest='eval_size', type=int)
    p.add_argument('--dataset-mode', dest='dataset_mode', choices=RMSE_DATASET_MODES)
    p.add_argument('--per-channel', dest='per_channel', action='store_true', default=None)
    p.add_argument('--heatmaps', help='directory for per-pixel error heatmaps')

    p = sub.add_parser('video-pseudo-gt', help='max-min pseudo ground truth for a static-camera video')
    _add_common(p)
    p.add_argument('--frames')
    p.add_argument('--epsilon', type=float, help='threshold in 8-bit units (default 40)')
    p.add_argument('--out')

    p = sub.add_parser('eval-video', help='masked LAB RMSE against V_max')
    _add_common(p)
    p.add_argument('--pred')
    p.add_argument('--gt')
    p.add_argument('--out')
    p.add_argument('--eval-size', dest='video_eval_size', type=int)

    p = sub.add_parser('finetune', help='fine-tune a checkpoint on one video')
    _add_common(p)
    p.add_argument('--ckpt')
    p.add_argument('--frames')
    p.add_argument('--masks')
    p.add_argument('--epochs', dest='finetune_epochs', type=int, default=1)
    p.add_argument('--stride', type=int)
    p.add_argument('--out', help='output checkpoint path')

    p = sub.add_parser('make-synthetic', help='generate shadow images with known parameters')
    _add_common(p)
    p.add_argument('--out')
    p.add_argument('--count', type=int, default=200)
    p.add_argument('--size', type=int, default=64)
    p.add_argument('--b-jitter', dest='b_jitter', type=float, default=0.0)

    return parser


def dispatch(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    cli_args: Dict = {k: v for k, v in vars(args).items() if k not in ('command', 'config')}
    if cli_args.get('ablate') is not None:
        cli_args['ablate'] = tuple(cli_args['ablate'])

    out = cli_args.get('out')
    run_dir = None
    if out:
        run_dir = out if os.path.splitext(out)[1] == '' else os.path.dirname(os.path.abspath(out))
    setup_logging(run_dir, args.log_level)

    @handle_errors(args.command)
    def _resolve():
        return RunConfig.resolve(cli_args, args.config)

    config = _resolve()
    if isinstance(config, int):
        return config
    logging.debug(f"Dispatching {args.command} with {json.dumps(config.to_dict())}")
    return COMMANDS[args.command](config, args)


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == '__main__':
    main()
