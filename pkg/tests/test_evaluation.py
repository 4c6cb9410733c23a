import os
import json
import tempfile
import unittest

import numpy as np
import pandas as pd

from services.evaluation import (
    VideoPseudoGT, build_video_pseudo_gt, eval_istd, eval_video, eval_video_dataset,
    pseudo_gt_from_frames, rmse_lab, summarize,
)
from services.imaging import ColorSpace, ImageIO
from services.mask_ops import MaskOps
from utils.error_handlers import ArgumentError, ImageFormatError

EPSILON = 40 / 255


def gray(value, shape=(16, 16)):
    return np.full(shape + (3,), value, dtype=np.float32)


def lab_delta(a, b):
    """Squared LAB distance between two flat RGB colours"""
    la = ColorSpace.rgb_to_lab(np.array(a, dtype=np.float32).reshape(1, 1, 3))[0, 0]
    lb = ColorSpace.rgb_to_lab(np.array(b, dtype=np.float32).reshape(1, 1, 3))[0, 0]
    return float(((la - lb) ** 2).sum())


class TestRmseLab(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.pred = rng.random((24, 24, 3)).astype(np.float32)
        self.gt = rng.random((24, 24, 3)).astype(np.float32)
        self.mask = np.zeros((24, 24), dtype=bool)
        self.mask[:, :10] = True

    def test_identical_images(self):
        self.assertEqual(rmse_lab(self.gt, self.gt, self.mask).as_tuple(), (0.0, 0.0, 0.0))

    def test_empty_mask_has_no_shadow_score(self):
        result = rmse_lab(self.pred, self.gt, np.zeros((24, 24), dtype=bool))
        self.assertIsNone(result.shadow)
        self.assertAlmostEqual(result.nonshadow, result.all, places=9)

    def test_all_is_pooled_from_parts(self):
        r = rmse_lab(self.pred, self.gt, self.mask, eval_size=None)
        n_s, n_n = r.counts['shadow'], r.counts['nonshadow']
        pooled = np.sqrt((r.shadow ** 2 * n_s + r.nonshadow ** 2 * n_n) / (n_s + n_n))
        self.assertAlmostEqual(r.all, float(pooled), places=5)

    def test_symmetric(self):
        a = rmse_lab(self.pred, self.gt, self.mask).as_tuple()
        b = rmse_lab(self.gt, self.pred, self.mask).as_tuple()
        np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_constant_offset_closed_form(self):
        gt = gray(0.5)
        pred = gt.copy()
        mask = np.zeros((16, 16), dtype=bool)
        mask[:, :8] = True
        pred[mask] = (0.6, 0.5, 0.4)
        d2 = lab_delta((0.6, 0.5, 0.4), (0.5, 0.5, 0.5))
        r = rmse_lab(pred, gt, mask, eval_size=None)
        self.assertAlmostEqual(r.shadow, np.sqrt(d2 / 3), places=4)
        self.assertEqual(r.nonshadow, 0.0)
        self.assertAlmostEqual(r.all, np.sqrt(d2 / 6), places=4)

    def test_default_resizes_to_256(self):
        r = rmse_lab(self.pred, self.gt, self.mask)
        self.assertEqual(r.counts['all'], 256 * 256)

    def test_per_channel(self):
        r = rmse_lab(self.pred, self.gt, self.mask, per_channel=True)
        self.assertEqual(len(r.per_channel['shadow']), 3)
        self.assertAlmostEqual(np.sqrt(np.mean(np.square(r.per_channel['all']))), r.all, places=5)

    def test_shape_mismatch(self):
        with self.assertRaises(ArgumentError):
            rmse_lab(self.pred, self.gt[:20], self.mask)


class TestSummarize(unittest.TestCase):
    def test_modes_differ_on_unequal_counts(self):
        gt = gray(0.5)
        pred_a = gray(0.6)
        mask_small = np.zeros((16, 16), dtype=bool)
        mask_small[0, 0] = True
        mask_big = np.ones((16, 16), dtype=bool)
        results = {
            'a.png': rmse_lab(pred_a, gt, mask_small, eval_size=None),
            'b.png': rmse_lab(gt, gt, mask_big, eval_size=None),
        }
        per_image = summarize(results, 'per_image')
        pooled = summarize(results, 'pooled')
        self.assertAlmostEqual(per_image['shadow'], results['a.png'].shadow / 2, places=6)
        self.assertLess(pooled['shadow'], per_image['shadow'])

    def test_all_empty_masks(self):
        r = rmse_lab(gray(0.6), gray(0.5), np.zeros((16, 16), dtype=bool), eval_size=None)
        self.assertIsNone(summarize({'x': r})['shadow'])
        self.assertIsNone(summarize({'x': r}, 'pooled')['shadow'])

    def test_unknown_mode(self):
        with self.assertRaises(ArgumentError):
            summarize({}, 'median')


class TestEvalIstd(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        root = self.tmp.name
        self.dirs = {name: os.path.join(root, name) for name in ('pred', 'gt', 'mask', 'heat')}
        mask = np.zeros((32, 32), dtype=bool)
        mask[8:24, 8:24] = True
        for i, level in enumerate((128, 96)):
            name = f'{i}.png'
            ImageIO.save_image(gray(128 / 255, (32, 32)), os.path.join(self.dirs['gt'], name))
            ImageIO.save_image(gray(level / 255, (32, 32)), os.path.join(self.dirs['pred'], name))
            MaskOps.save_mask(mask, os.path.join(self.dirs['mask'], name))
        ImageIO.save_image(gray(0.5, (32, 32)), os.path.join(self.dirs['pred'], 'orphan.png'))

    def tearDown(self):
        self.tmp.cleanup()

    def test_report_and_files(self):
        report = eval_istd(self.dirs['pred'], self.dirs['gt'], self.dirs['mask'], eval_size=None,
                           heatmap_dir=self.dirs['heat'], show_progress=False)
        self.assertEqual(len(report.per_image), 2)
        self.assertEqual([s['image'] for s in report.skipped], ['orphan.png'])
        self.assertEqual(report.per_image[0]['rmse_all'], 0.0)
        self.assertGreater(report.rmse_shadow, 0.0)
        self.assertTrue(os.path.isfile(os.path.join(self.dirs['heat'], '1_error.png')))

        path = report.save(os.path.join(self.tmp.name, 'report.json'))
        with open(path) as f:
            payload = json.load(f)
        self.assertEqual(payload['images'], 2)
        frame = pd.read_csv(os.path.join(self.tmp.name, 'report.csv'))
        self.assertEqual(list(frame['image']), ['0.png', '1.png'])

    def test_pooled_equals_per_image_for_equal_counts(self):
        per_image = eval_istd(self.dirs['pred'], self.dirs['gt'], self.dirs['mask'], eval_size=None,
                              show_progress=False)
        pooled = eval_istd(self.dirs['pred'], self.dirs['gt'], self.dirs['mask'], mode='pooled',
                           eval_size=None, show_progress=False)
        shadow_rmse = per_image.per_image[1]['rmse_shadow']
        self.assertAlmostEqual(per_image.rmse_shadow, shadow_rmse / 2, places=6)
        self.assertAlmostEqual(pooled.rmse_shadow, shadow_rmse / np.sqrt(2), places=6)

    @unittest.skipUnless(os.environ.get('SHADOWPATCH_ISTD_ROOT'), 'ISTD test split not configured')
    def test_istd_input_baseline(self):
        root = os.environ['SHADOWPATCH_ISTD_ROOT']
        report = eval_istd(os.path.join(root, 'test_A'), os.path.join(root, 'test_C'),
                           os.path.join(root, 'test_B'), show_progress=False)
        self.assertAlmostEqual(report.rmse_shadow, 40.2, delta=0.5)
        self.assertAlmostEqual(report.rmse_nonshadow, 2.6, delta=0.5)
        self.assertAlmostEqual(report.rmse_all, 8.5, delta=0.5)


class TestVideoPseudoGT(unittest.TestCase):
    def test_identical_frames(self):
        frame = np.random.default_rng(0).random((12, 12, 3)).astype(np.float32)
        gt = pseudo_gt_from_frames([frame, frame.copy(), frame.copy()], EPSILON)
        np.testing.assert_array_equal(gt.v_max, frame)
        np.testing.assert_array_equal(gt.v_min, frame)
        self.assertFalse(gt.moving_mask.any())

    def test_darkened_half(self):
        lit = gray(0.7, (12, 12))
        dark = lit.copy()
        dark[:, :6] = 0.3
        gt = pseudo_gt_from_frames([lit, dark], EPSILON)
        expected = np.zeros((12, 12), dtype=bool)
        expected[:, :6] = True
        np.testing.assert_array_equal(gt.moving_mask, expected)
        np.testing.assert_allclose(gt.v_max, 0.7)

    def test_errors(self):
        with self.assertRaises(ArgumentError):
            pseudo_gt_from_frames([gray(0.5)], EPSILON)
        with self.assertRaises(ImageFormatError):
            pseudo_gt_from_frames([gray(0.5), gray(0.5, (8, 8))], EPSILON)

    def test_save_load(self):
        lit = gray(200 / 255, (12, 12))
        dark = lit.copy()
        dark[:4] = 60 / 255
        gt = pseudo_gt_from_frames([lit, dark], EPSILON)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = VideoPseudoGT.load(gt.save(tmp))
        np.testing.assert_array_equal(loaded.moving_mask, gt.moving_mask)
        np.testing.assert_allclose(loaded.v_max, gt.v_max, atol=1e-6)
        self.assertEqual(loaded.frame_count, 2)
        self.assertAlmostEqual(loaded.epsilon, EPSILON)


class TestEvalVideo(unittest.TestCase):
    def setUp(self):
        lit = gray(0.7, (12, 12))
        dark = lit.copy()
        dark[:, :6] = 0.3
        self.frames = [lit, dark]
        self.gt = pseudo_gt_from_frames(self.frames, EPSILON)

    def test_perfect_removal(self):
        self.assertEqual(eval_video([self.gt.v_max.copy(), self.gt.v_max.copy()], self.gt), 0.0)

    def test_known_offset(self):
        score = eval_video(self.frames, self.gt)
        # frame 0 is perfect on the moving mask, frame 1 is 0.3 against 0.7
        expected = np.sqrt(lab_delta((0.3,) * 3, (0.7,) * 3) / 3) / 2
        self.assertAlmostEqual(score, expected, places=4)

    def test_empty_moving_mask(self):
        still = pseudo_gt_from_frames([gray(0.5), gray(0.5)], EPSILON)
        with self.assertLogs(level='WARNING'):
            self.assertIsNone(eval_video([gray(0.5), gray(0.5)], still))

    def test_frame_count_mismatch(self):
        with self.assertRaises(ArgumentError):
            eval_video(self.frames[:1], self.gt)

    def test_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            for video, frames in (('v1', self.frames), ('v2', [gray(0.5, (12, 12))] * 2)):
                frames_dir = os.path.join(tmp, 'frames', video)
                for i, frame in enumerate(frames):
                    ImageIO.save_image(frame, os.path.join(frames_dir, f'{i:03d}.png'))
                build_video_pseudo_gt(frames_dir, EPSILON).save(os.path.join(tmp, 'gt', video))
            report = eval_video_dataset(os.path.join(tmp, 'frames'), os.path.join(tmp, 'gt'), show_progress=False)
        by_name = {v['video']: v for v in report['videos']}
        self.assertTrue(by_name['v2']['skipped'])
        self.assertFalse(by_name['v1']['skipped'])
        self.assertEqual(report['rmse'], by_name['v1']['rmse'])
        self.assertGreater(report['rmse'], 0.0)

    @unittest.skipUnless(os.environ.get('SHADOWPATCH_VIDEO_ROOT'), 'video set not configured')
    def test_input_frames_baseline(self):
        root = os.environ['SHADOWPATCH_VIDEO_ROOT']
        gt_root = os.path.join(root, 'pseudo_gt')
        frames_root = os.path.join(root, 'frames')
        for video in sorted(os.listdir(frames_root)):
            build_video_pseudo_gt(os.path.join(frames_root, video), EPSILON).save(os.path.join(gt_root, video))
        report = eval_video_dataset(frames_root, gt_root, show_progress=False)
        self.assertAlmostEqual(report['rmse'], 32.9, delta=1.0)


if __name__ == '__main__':
    unittest.main()
