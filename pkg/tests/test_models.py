import os
import tempfile
import unittest

import numpy as np
import torch

from config.presets import get_preset, preset_names, NetworkPreset
from models.checkpoint import CheckpointStore
from models.networks import (
    DNET_MIN_SIZE, build_networks, d_net_forward, matte_net_forward, param_net_forward,
    patch_to_batch, params_from_tensors,
)
from services.shadow_physics import ParamBounds
from utils.error_handlers import ArgumentError, CheckpointError, ConfigurationError


def random_batch(batch, size, seed=0, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    patch = torch.rand(batch, 3, size, size, generator=g) * scale
    mask = (torch.rand(batch, 1, size, size, generator=g) > 0.5).float()
    return patch, mask


def perturb(module, std, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(torch.randn(p.shape, generator=g) * std)


class TestParamNet(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.bundle = build_networks(get_preset('desk'), 32).eval()

    def test_zero_head_is_box_centre(self):
        patch, mask = random_batch(2, 32)
        with torch.no_grad():
            w, b = param_net_forward(self.bundle.param_net, patch, mask)
        np.testing.assert_allclose(w.numpy(), 5.5, atol=1e-6)
        np.testing.assert_allclose(b.numpy(), 0.0, atol=1e-7)

    def test_range_for_any_weights(self):
        bounds = ParamBounds.standard()
        for seed in range(5):
            perturb(self.bundle.param_net, 0.2, seed)
            patch, mask = random_batch(4, 32, seed)
            with torch.no_grad():
                w, b = param_net_forward(self.bundle.param_net, patch, mask)
            for i in range(4):
                self.assertTrue(params_from_tensors(w, b, i).within(bounds))

    def test_batch_determinism(self):
        perturb(self.bundle.param_net, 0.2, 9)
        patch, mask = random_batch(1, 32)
        with torch.no_grad():
            w, b = param_net_forward(self.bundle.param_net, patch.repeat(2, 1, 1, 1), mask.repeat(2, 1, 1, 1))
        torch.testing.assert_close(w[0], w[1])
        torch.testing.assert_close(b[0], b[1])

    def test_mask_size_mismatch(self):
        patch, _ = random_batch(1, 32)
        with self.assertRaises(ArgumentError):
            param_net_forward(self.bundle.param_net, patch, torch.zeros(1, 1, 31, 32))


class TestMatteNet(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(1)
        self.bundle = build_networks(get_preset('desk'), 32).eval()

    def test_shape_and_range(self):
        for size in (32, 33, 45):
            patch, mask = random_batch(2, size)
            perturb(self.bundle.matte_net, 0.2, size)
            with torch.no_grad():
                alpha = matte_net_forward(self.bundle.matte_net, patch, mask, patch)
            self.assertEqual(tuple(alpha.shape), (2, 1, size, size))
            self.assertGreaterEqual(float(alpha.min()), 0.0)
            self.assertLessEqual(float(alpha.max()), 1.0)

    def test_relit_size_mismatch(self):
        patch, mask = random_batch(1, 32)
        with self.assertRaises(ArgumentError):
            matte_net_forward(self.bundle.matte_net, patch, mask, torch.zeros(1, 3, 32, 30))

    def test_depth_must_be_positive(self):
        from models.networks import MatteNet
        with self.assertRaises(ArgumentError):
            MatteNet(base=8, depth=0)


class TestDNet(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(2)
        self.bundle = build_networks(get_preset('desk'), 32).eval()

    def test_scores_are_probabilities(self):
        perturb(self.bundle.d_net, 0.5, 3)
        patch, _ = random_batch(3, 32)
        with torch.no_grad():
            score = d_net_forward(self.bundle.d_net, patch)
        self.assertEqual(tuple(score.shape), (3,))
        self.assertTrue(bool(((score > 0) & (score < 1)).all()))

    def test_too_small_or_non_square(self):
        with self.assertRaises(ArgumentError):
            d_net_forward(self.bundle.d_net, torch.zeros(1, 3, DNET_MIN_SIZE - 1, DNET_MIN_SIZE - 1))
        with self.assertRaises(ArgumentError):
            d_net_forward(self.bundle.d_net, torch.zeros(1, 3, 32, 40))

    def test_build_rejects_small_patches(self):
        with self.assertRaises(ArgumentError):
            build_networks(get_preset('desk'), 16)


class TestGenerator(unittest.TestCase):
    def test_gradients_reach_both_generators(self):
        torch.manual_seed(4)
        bundle = build_networks(get_preset('desk'), 32).train()
        patch, mask = random_batch(2, 32, scale=0.15)
        out = bundle.generate(patch, mask)
        self.assertEqual(tuple(out['output'].shape), (2, 3, 32, 32))
        out['output'].mean().backward()
        self.assertGreater(float(bundle.param_net.head.weight.grad.abs().sum()), 0.0)
        self.assertGreater(float(bundle.matte_net.outc.weight.grad.abs().sum()), 0.0)

    def test_patch_to_batch(self):
        patch = np.random.default_rng(0).random((8, 9, 3)).astype(np.float32)
        mask = np.zeros((8, 9), dtype=bool)
        p, m = patch_to_batch(patch, mask)
        self.assertEqual(tuple(p.shape), (1, 3, 8, 9))
        self.assertEqual(tuple(m.shape), (1, 1, 8, 9))
        np.testing.assert_array_equal(p[0, 1].numpy(), patch[..., 1])


class TestRangeGuarantees(unittest.TestCase):
    PASSES = 1000

    def test_random_weight_forward_passes(self):
        """Fresh random weights every pass; every output stays inside its range"""
        torch.manual_seed(11)
        bundle = build_networks(get_preset('desk'), 32).eval()
        bounds = ParamBounds.standard()
        g = torch.Generator().manual_seed(12)
        modules = list(bundle.modules().values())
        failures = []
        for i in range(self.PASSES):
            std = float(torch.empty(1).uniform_(0.01, 1.0, generator=g))
            with torch.no_grad():
                for module in modules:
                    for p in module.parameters():
                        p.copy_(torch.randn(p.shape, generator=g) * std)
                scale = float(torch.empty(1).uniform_(0.05, 1.0, generator=g))
                patch = torch.rand(1, 3, 32, 32, generator=g) * scale
                mask = (torch.rand(1, 1, 32, 32, generator=g) > 0.5).float()
                out = bundle.generate(patch, mask)
                score = d_net_forward(bundle.d_net, out['output'])
            alpha = out['alpha']
            if not params_from_tensors(out['w'], out['b']).within(bounds):
                failures.append((i, 'params'))
            if not (float(alpha.min()) >= 0.0 and float(alpha.max()) <= 1.0):
                failures.append((i, 'alpha'))
            if not bool(((score > 0) & (score < 1)).all()):
                failures.append((i, 'score'))
        self.assertEqual(failures, [])


class TestPresets(unittest.TestCase):
    def test_names(self):
        self.assertEqual(set(preset_names()), {'paper', 'desk'})

    def test_unknown(self):
        with self.assertRaises(ConfigurationError):
            get_preset('huge')

    def test_dict_round_trip(self):
        preset = get_preset('paper')
        self.assertEqual(NetworkPreset.from_dict(preset.to_dict()), preset)


class TestCheckpointStore(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        torch.manual_seed(5)
        bundle = build_networks(get_preset('desk'), 32, bounded=False)
        perturb(bundle.param_net, 0.1, 5)
        bundle.eval()
        path = CheckpointStore.save(os.path.join(self.tmp.name, 'ck.pt'), bundle,
                                    {'train': {'seed': 3}}, epoch=2, step=11)
        state = CheckpointStore.load(path)
        self.assertEqual((state.epoch, state.step), (2, 11))
        self.assertEqual(state.config, {'train': {'seed': 3}})
        self.assertFalse(state.bundle.bounded)
        self.assertEqual(state.bundle.bounds, ParamBounds.unbounded())
        self.assertFalse(state.bundle.param_net.training)

        patch, mask = random_batch(1, 32)
        with torch.no_grad():
            expected = bundle.generate(patch, mask)
            restored = state.bundle.generate(patch, mask)
        for key in ('w', 'b', 'alpha', 'output'):
            torch.testing.assert_close(restored[key], expected[key])

    def test_corrupt_file(self):
        path = os.path.join(self.tmp.name, 'bad.pt')
        with open(path, 'wb') as f:
            f.write(b'not a checkpoint')
        with self.assertRaises(CheckpointError):
            CheckpointStore.load(path)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            CheckpointStore.load(os.path.join(self.tmp.name, 'none.pt'))

    def test_copy_is_byte_identical(self):
        bundle = build_networks(get_preset('desk'), 32)
        src = CheckpointStore.save(os.path.join(self.tmp.name, 'a.pt'), bundle, {})
        dst = CheckpointStore.copy(src, os.path.join(self.tmp.name, 'b.pt'))
        with open(src, 'rb') as fa, open(dst, 'rb') as fb:
            self.assertEqual(fa.read(), fb.read())

    def test_save_with_optimizers_leaves_only_target(self):
        torch.manual_seed(6)
        bundle = build_networks(get_preset('desk'), 32)
        optimizer = torch.optim.Adam(bundle.param_net.parameters(), lr=1e-3)
        patch, mask = random_batch(2, 32)
        w, b = param_net_forward(bundle.param_net, patch, mask)
        (w.sum() + b.sum()).backward()
        optimizer.step()
        path = CheckpointStore.save(os.path.join(self.tmp.name, 'run', 'checkpoint.pt'), bundle,
                                    {'stride': 8}, epoch=1, step=1, optimizers={'generator': optimizer})
        self.assertEqual(os.listdir(os.path.dirname(path)), ['checkpoint.pt'])
        state = CheckpointStore.load(path)
        self.assertEqual(state.config, {'stride': 8})
        self.assertIn('generator', state.optimizers)
        restored = torch.optim.Adam(state.bundle.param_net.parameters(), lr=1e-3)
        restored.load_state_dict(state.optimizers['generator'])
        self.assertEqual(float(restored.state_dict()['state'][0]['step']), 1.0)


if __name__ == '__main__':
    unittest.main()
