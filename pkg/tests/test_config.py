import os
import json
import tempfile
import unittest
from unittest import mock

from config.settings import Config, LossWeights, RunConfig, TrainConfig
from utils.constants import DEFAULT_PATCH_SIZE, DEFAULT_STRIDE
from utils.error_handlers import ConfigurationError


class TestRunConfigResolution(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.config_path = os.path.join(self.tmp.name, 'run.json')
        with open(self.config_path, 'w') as f:
            json.dump({'patch_size': 16, 'stride': 4, 'unknown_key': 1}, f)
        patcher = mock.patch.dict(os.environ, {'SHADOWPATCH_PATCH_SIZE': '8', 'SHADOWPATCH_RADIUS': '5'})
        patcher.start()
        os.environ.pop(Config.CONFIG_ENV_VAR, None)
        self.addCleanup(patcher.stop)

    def tearDown(self):
        self.tmp.cleanup()

    def test_cli_beats_file_beats_env(self):
        resolved = RunConfig.resolve({'patch_size': 24}, self.config_path)
        self.assertEqual(resolved.patch_size, 24)
        self.assertEqual(resolved.stride, 4)
        self.assertEqual(resolved.radius, 5)

    def test_file_beats_env(self):
        self.assertEqual(RunConfig.resolve({}, self.config_path).patch_size, 16)

    def test_env_beats_default(self):
        resolved = RunConfig.resolve({'patch_size': None})
        self.assertEqual(resolved.patch_size, 8)
        self.assertIsInstance(resolved.patch_size, int)

    def test_default(self):
        os.environ.pop('SHADOWPATCH_PATCH_SIZE')
        self.assertEqual(RunConfig.resolve().patch_size, DEFAULT_PATCH_SIZE)

    def test_config_file_from_environment(self):
        os.environ[Config.CONFIG_ENV_VAR] = self.config_path
        self.assertEqual(RunConfig.resolve().stride, 4)

    def test_unknown_file_keys_warn(self):
        with self.assertLogs(level='WARNING') as logs:
            RunConfig.resolve({}, self.config_path)
        self.assertTrue(any('unknown_key' in line for line in logs.output))

    def test_env_coercion(self):
        os.environ['SHADOWPATCH_DETERMINISTIC'] = 'true'
        os.environ['SHADOWPATCH_ABLATE'] = 'bd, gan'
        os.environ['SHADOWPATCH_EPSILON'] = '30'
        resolved = RunConfig.resolve()
        self.assertIs(resolved.deterministic, True)
        self.assertEqual(resolved.ablate, ('bd', 'gan'))
        self.assertEqual(resolved.epsilon, 30.0)

    def test_stride_layers(self):
        resolved = RunConfig.resolve()
        self.assertIsNone(resolved.stride)
        self.assertEqual(resolved.grid_stride(), DEFAULT_STRIDE)
        os.environ['SHADOWPATCH_STRIDE'] = '12'
        self.assertEqual(RunConfig.resolve().stride, 12)
        self.assertEqual(RunConfig.resolve({}, self.config_path).grid_stride(), 4)


class TestConfigErrors(unittest.TestCase):
    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            RunConfig.load_file('/nonexistent/run.json')

    def test_bad_json(self):
        with tempfile.NamedTemporaryFile('w', suffix='.json', delete=False) as f:
            f.write('{not json')
        try:
            with self.assertRaises(ConfigurationError):
                RunConfig.load_file(f.name)
        finally:
            os.remove(f.name)

    def test_bad_choices(self):
        with self.assertRaises(ConfigurationError):
            RunConfig(edge_policy='pad')
        with self.assertRaises(ConfigurationError):
            RunConfig(dataset_mode='median')

    def test_require_dirs(self):
        with self.assertRaises(ConfigurationError):
            RunConfig(images='/nonexistent/images').require_dirs('images')

    def test_train_config_validation(self):
        with self.assertRaises(ConfigurationError):
            RunConfig(lr_param=0.0).train_config()
        with self.assertRaises(ConfigurationError):
            RunConfig(ablate=('nothing',)).train_config()
        with self.assertRaises(ConfigurationError):
            LossWeights(lambda_bd=-1.0)
        with self.assertRaises(ConfigurationError):
            TrainConfig(batch_size=1)


class TestTrainConfig(unittest.TestCase):
    def test_defaults(self):
        config = TrainConfig()
        self.assertEqual(config.weights, LossWeights(10.0, 100.0, 0.5, 0.5))
        self.assertEqual((config.lr_matte_d, config.lr_param), (2e-4, 2e-5))
        self.assertEqual((config.batch_size, config.epochs), (96, 150))
        self.assertTrue(config.bounded)

    def test_ablations(self):
        config = RunConfig(ablate=('sm', 'bounds')).train_config()
        self.assertFalse(config.bounded)
        self.assertEqual(config.effective_weights.lambda_sm, 0.0)
        self.assertEqual(config.effective_weights.lambda_mat, 100.0)
        self.assertEqual(config.ablations, ('bounds', 'sm'))

    def test_dict_round_trip(self):
        config = TrainConfig(ablations=('gan',), weights=LossWeights(lambda_bd=2.0), max_steps=10)
        restored = TrainConfig.from_dict(json.loads(json.dumps(config.to_dict())))
        self.assertEqual(restored, config)


if __name__ == '__main__':
    unittest.main()
