import io
import os
import json
import logging
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from unittest import mock

import numpy as np

from config.presets import preset_names
from run import build_parser, dispatch
from services.imaging import ImageIO
from services.mask_ops import MaskOps


def run_cli(*argv):
    """Run a subcommand, returning (exit code, stderr text)"""
    err, out = io.StringIO(), io.StringIO()
    with redirect_stderr(err), redirect_stdout(out):
        code = dispatch(list(argv))
    return code, err.getvalue()


def error_lines(stderr_text):
    lines = []
    for line in stderr_text.splitlines():
        try:
            payload = json.loads(line)
        except ValueError:
            continue
        if isinstance(payload, dict) and 'error_code' in payload:
            lines.append(payload)
    return lines


def reset_logging():
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()


class TestCommandLine(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = cls.tmp.name
        cls.images = os.path.join(cls.root, 'images')
        cls.masks = os.path.join(cls.root, 'masks')
        rng = np.random.default_rng(0)
        mask = np.zeros((64, 64), dtype=bool)
        mask[:, :20] = True
        for i in range(2):
            img = rng.uniform(0.3, 0.8, (64, 64, 3)).astype(np.float32)
            img[mask] *= 0.4
            ImageIO.save_image(img, os.path.join(cls.images, f'{i}.png'))
            MaskOps.save_mask(mask, os.path.join(cls.masks, f'{i}.png'))
        cls.empty_mask = MaskOps.save_mask(np.zeros((64, 64), dtype=bool), os.path.join(cls.root, 'empty.png'))

        cls.manifest = os.path.join(cls.root, 'patches', 'manifest.jsonl')
        cls.build_code, _ = run_cli('build-patches', '--images', cls.images, '--masks', cls.masks,
                                    '--out', cls.manifest, '--patch-size', '32', '--stride', '16')
        cls.run_dir = os.path.join(cls.root, 'run')
        cls.train_code, cls.train_err = run_cli('train', '--manifest', cls.manifest, '--out', cls.run_dir,
                                                '--epochs', '1', '--batch', '4', '--preset', 'desk',
                                                '--max-steps', '2', '--radius', '2')
        cls.ckpt = os.path.join(cls.run_dir, 'checkpoint.pt')
        reset_logging()

    @classmethod
    def tearDownClass(cls):
        reset_logging()
        cls.tmp.cleanup()

    def tearDown(self):
        reset_logging()

    def _path(self, *parts):
        return os.path.join(self.root, *parts)

    def test_unknown_subcommand(self):
        code, _ = run_cli('sharpen')
        self.assertEqual(code, 2)

    def test_build_patches(self):
        self.assertEqual(self.build_code, 0)
        with open(self.manifest) as f:
            header = json.loads(f.readline())['header']
        self.assertEqual(header['counts'], {'N': 6, 'B': 12, 'F': 0})
        with open(self._path('patches', 'run.json')) as f:
            record = json.load(f)
        self.assertEqual(record['command'], 'build-patches')
        self.assertEqual(record['config']['patch_size'], 32)

    def test_train_writes_checkpoint_and_log(self):
        self.assertEqual(self.train_code, 0, msg=self.train_err)
        self.assertTrue(os.path.isfile(self.ckpt))
        with open(os.path.join(self.run_dir, 'train_log.jsonl')) as f:
            self.assertEqual(len(f.readlines()), 2)
        self.assertTrue(os.path.isfile(os.path.join(self.run_dir, 'shadowpatch.log')))

    def test_missing_manifest_is_structured_error(self):
        code, err = run_cli('train', '--manifest', self._path('nope.jsonl'), '--out', self._path('bad_run'))
        self.assertEqual(code, 1)
        payloads = error_lines(err)
        self.assertEqual(len(payloads), 1)
        self.assertEqual(payloads[0]['error_code'], 'FILE_ERROR')
        self.assertEqual(payloads[0]['context'], 'train')

    def test_remove_with_empty_mask_is_byte_identical(self):
        source = os.path.join(self.images, '0.png')
        out = self._path('removed', 'same.png')
        code, err = run_cli('remove', '--image', source, '--mask', self.empty_mask,
                            '--ckpt', self.ckpt, '--out', out)
        self.assertEqual(code, 0, msg=err)
        with open(source, 'rb') as fa, open(out, 'rb') as fb:
            self.assertEqual(fa.read(), fb.read())

    def test_remove_with_dumps(self):
        out = self._path('removed', 'shadowed.png')
        code, err = run_cli('remove', '--image', os.path.join(self.images, '1.png'),
                            '--mask', os.path.join(self.masks, '1.png'), '--ckpt', self.ckpt,
                            '--out', out, '--radius', '2', '--dump-matte', '--dump-params', '--dump-relit')
        self.assertEqual(code, 0, msg=err)
        for suffix in ('', '_matte', '_relit'):
            self.assertTrue(os.path.isfile(self._path('removed', f'shadowed{suffix}.png')))
        with open(self._path('removed', 'shadowed_params.json')) as f:
            params = json.load(f)
        self.assertEqual(len(params['w']), 3)
        self.assertFalse(params['metadata']['empty_mask'])

    def test_decompose(self):
        out = self._path('panels')
        code, err = run_cli('decompose', '--image', os.path.join(self.images, '0.png'),
                            '--mask', os.path.join(self.masks, '0.png'), '--ckpt', self.ckpt, '--out', out)
        self.assertEqual(code, 0, msg=err)
        written = {name for name in os.listdir(out) if name.endswith('.png')}
        self.assertEqual(written, {'input.png', 'matte.png', 'relit.png', 'relit_alpha.png',
                                   'shadow_one_minus_alpha.png', 'output.png', 'regions.png'})

    def test_regions(self):
        out = self._path('overlay', 'regions.png')
        code, err = run_cli('regions', '--image', os.path.join(self.images, '0.png'),
                            '--mask', os.path.join(self.masks, '0.png'), '--radius', '2', '--out', out)
        self.assertEqual(code, 0, msg=err)
        self.assertEqual(ImageIO.load_image(out).shape, (64, 64, 3))

    def test_eval_istd(self):
        out = self._path('eval', 'report.json')
        code, err = run_cli('eval-istd', '--pred', self.images, '--gt', self.images, '--mask', self.masks,
                            '--out', out, '--dataset-mode', 'pooled')
        self.assertEqual(code, 0, msg=err)
        with open(out) as f:
            report = json.load(f)
        self.assertEqual(report['rmse_all'], 0.0)
        self.assertEqual(report['mode'], 'pooled')
        self.assertTrue(os.path.isfile(self._path('eval', 'report.csv')))

    def test_video_pseudo_gt_and_eval(self):
        frames = self._path('video', 'frames')
        lit = np.full((32, 32, 3), 200 / 255, dtype=np.float32)
        dark = lit.copy()
        dark[:, :12] = 60 / 255
        ImageIO.save_image(lit, os.path.join(frames, '000.png'))
        ImageIO.save_image(dark, os.path.join(frames, '001.png'))
        gt_dir = self._path('video', 'gt')
        code, err = run_cli('video-pseudo-gt', '--frames', frames, '--out', gt_dir)
        self.assertEqual(code, 0, msg=err)
        self.assertEqual(int(MaskOps.load_mask(os.path.join(gt_dir, 'moving_mask.png')).sum()), 32 * 12)

        out = self._path('video', 'report.json')
        code, err = run_cli('eval-video', '--pred', frames, '--gt', gt_dir, '--out', out)
        self.assertEqual(code, 0, msg=err)
        with open(out) as f:
            report = json.load(f)
        self.assertEqual(len(report['videos']), 1)
        self.assertGreater(report['rmse'], 0.0)

    def test_finetune_zero_epochs(self):
        out = self._path('ft', 'same.pt')
        code, err = run_cli('finetune', '--ckpt', self.ckpt, '--frames', self.images, '--masks', self.masks,
                            '--epochs', '0', '--out', out)
        self.assertEqual(code, 0, msg=err)
        with open(self.ckpt, 'rb') as fa, open(out, 'rb') as fb:
            self.assertEqual(fa.read(), fb.read())

    def test_make_synthetic(self):
        out = self._path('synthetic')
        code, err = run_cli('make-synthetic', '--out', out, '--count', '3', '--size', '32', '--seed', '1')
        self.assertEqual(code, 0, msg=err)
        self.assertEqual(len(os.listdir(os.path.join(out, 'images'))), 3)
        with open(os.path.join(out, 'truth.json')) as f:
            self.assertEqual(len(json.load(f)['images']), 3)

    def test_preset_choices(self):
        args = build_parser().parse_args(['train', '--preset', 'paper'])
        self.assertEqual(args.preset, 'paper')
        self.assertEqual(set(preset_names()), {'paper', 'desk'})

    def _write_config(self, name, payload):
        path = self._path(name)
        with open(path, 'w') as f:
            json.dump(payload, f)
        return path

    def _removal_metadata(self, out, *extra):
        code, err = run_cli('remove', '--image', os.path.join(self.images, '1.png'),
                            '--mask', os.path.join(self.masks, '1.png'), '--ckpt', self.ckpt,
                            '--out', out, '--radius', '2', '--dump-params', *extra)
        self.assertEqual(code, 0, msg=err)
        with open(os.path.splitext(out)[0] + '_params.json') as f:
            return json.load(f)['metadata']

    def test_remove_stride_from_config_file(self):
        config_path = self._write_config('stride16.json', {'stride': 16})
        metadata = self._removal_metadata(self._path('strided', 'file.png'), '--config', config_path)
        self.assertEqual(metadata['stride'], 16)
        metadata = self._removal_metadata(self._path('strided', 'flag.png'), '--config', config_path,
                                          '--stride', '32')
        self.assertEqual(metadata['stride'], 32)
        metadata = self._removal_metadata(self._path('strided', 'default.png'))
        self.assertEqual(metadata['stride'], 8)

    def test_finetune_stride_from_config_file(self):
        config_path = self._write_config('stride24.json', {'stride': 24})
        out = self._path('ft', 'strided.pt')
        with mock.patch('services.trainer.finetune_on_video', return_value=out) as finetune:
            code, err = run_cli('finetune', '--ckpt', self.ckpt, '--frames', self.images, '--masks', self.masks,
                                '--config', config_path, '--out', out)
        self.assertEqual(code, 0, msg=err)
        self.assertEqual(finetune.call_args.kwargs['stride'], 24)


if __name__ == '__main__':
    unittest.main()
