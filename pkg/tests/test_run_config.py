"""
Author: Perry Radau
Date: 2025-03-16
Brief description: Unit tests for run_config module
"""

import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from errors import ConfigError
from model import CONTINUOUS_KEYS, SEARCH_SPACE
from run_config import JOBS_ENV, default_jobs, load_run_config, sample_hyperparameters, set_override

REPO_ROOT = Path(__file__).resolve().parent.parent


class TestLoadRunConfig(unittest.TestCase):
    """Test cases for loading and validating run configurations."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        """Clean up test fixtures."""
        import shutil
        shutil.rmtree(self.temp_dir)

    def write_config(self, data):
        path = self.temp_dir / 'config.json'
        path.write_text(json.dumps(data))
        return path

    def test_defaults_with_seed_flag(self):
        config = load_run_config(None, {'seed': 3})
        self.assertEqual(config.seed, 3)
        pipeline = config.pipeline_config()
        self.assertEqual((pipeline.window, pipeline.horizon), (3, 1))
        self.assertEqual(pipeline.adapt.seed, 3)
        self.assertEqual(pipeline.selection_method, 'ensemble')
        self.assertEqual(config.synth_spec().seed, 3)
        self.assertEqual(config.output_dir, Path('out'))
        self.assertIsNone(config.input_path)

    def test_shipped_config_is_valid(self):
        config = load_run_config(REPO_ROOT / 'config.json')
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.pipeline_config().target_k, 15)
        self.assertEqual(config.preprocess_config().smoother_for('HRV'), 'savgol')

    def test_flags_win_over_file(self):
        path = self.write_config({'seed': 1, 'evaluation': {'window': 5}})
        config = load_run_config(path, {'evaluation.window': 7, 'evaluation.horizon': None})
        self.assertEqual(config['evaluation']['window'], 7)
        self.assertEqual(config['evaluation']['horizon'], 1)
        self.assertEqual(config['evaluation']['modes'], ['both'])

    def test_missing_seed(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.write_config({'evaluation': {'window': 5}}))
        self.assertEqual(ctx.exception.field, 'seed')

    def test_invalid_json(self):
        path = self.temp_dir / 'broken.json'
        path.write_text('{"seed": ')
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(path)
        self.assertEqual(ctx.exception.field, 'config')

    def test_missing_file(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.temp_dir / 'absent.json')
        self.assertEqual(ctx.exception.field, 'config')

    def test_collects_every_violation(self):
        overrides = {'seed': 0, 'evaluation.window': 4, 'evaluation.modes': ['sideways'],
                     'selection.method': 'lasso'}
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(None, overrides)
        self.assertEqual(ctx.exception.field, 'evaluation')
        self.assertEqual(len(ctx.exception.violations), 3)

    def test_allow_custom(self):
        config = load_run_config(None, {'seed': 0, 'allow_custom': True, 'evaluation.window': 4,
                                        'model.lstm_hidden': 8, 'model.cnn_dropout': 0.0})
        self.assertEqual(config.pipeline_config().window, 4)
        self.assertEqual(config.model_config(4, 3, 1, 2).lstm_hidden, 8)

    def test_model_outside_search_space(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(None, {'seed': 0, 'model.lstm_hidden': 100})
        self.assertEqual(ctx.exception.field, 'model')

    def test_unknown_section_and_key(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.write_config({'seed': 0, 'plotting': {}}))
        self.assertEqual(ctx.exception.field, 'plotting')
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.write_config({'seed': 0, 'evaluation': {'colour': 'red'}}))
        self.assertIn('evaluation.colour: unknown key', ctx.exception.violations)

    def test_schema_must_be_distinct_names(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(None, {'seed': 0, 'data.schema': ['TK', 'TK']})
        self.assertEqual(ctx.exception.field, 'data')

    def test_fixed_policy_needs_id(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(None, {'seed': 0, 'evaluation.val_policy': 'fixed-id'})
        self.assertTrue(any('fixed_val_id' in v for v in ctx.exception.violations))

    def test_nested_section_errors_are_prefixed(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(None, {'seed': 0, 'adapt.alpha': 2.0, 'synthetic.n_subjects': 2})
        self.assertTrue(any(v.startswith('adapt:') for v in ctx.exception.violations))
        self.assertTrue(any(v.startswith('synthetic:') for v in ctx.exception.violations))

    def test_round_trip_through_file(self):
        config = load_run_config(None, {'seed': 5, 'evaluation.horizon': 3})
        reloaded = load_run_config(self.write_config(config.to_dict()))
        self.assertEqual(reloaded.to_dict(), config.to_dict())


class TestJobs(unittest.TestCase):
    """Test cases for the worker-count setting."""

    def test_env_variable(self):
        with patch.dict(os.environ, {JOBS_ENV: '3'}):
            self.assertEqual(default_jobs(), 3)
            self.assertEqual(load_run_config(None, {'seed': 0}).jobs, 3)
            self.assertEqual(load_run_config(None, {'seed': 0, 'evaluation.jobs': 2}).jobs, 2)

    def test_unset_defaults_to_one(self):
        with patch.dict(os.environ, {JOBS_ENV: ''}):
            self.assertEqual(default_jobs(), 1)

    def test_invalid_env_variable(self):
        for raw in ('abc', '0'):
            with patch.dict(os.environ, {JOBS_ENV: raw}):
                with self.assertRaises(ConfigError) as ctx:
                    default_jobs()
                self.assertEqual(ctx.exception.field, 'jobs')


class TestHelpers(unittest.TestCase):
    """Test cases for overrides and hyperparameter sampling."""

    def test_set_override(self):
        data = {'evaluation': {'window': 3}}
        set_override(data, 'evaluation.horizon', 5)
        set_override(data, 'search.trials', 4)
        set_override(data, 'seed', 9)
        self.assertEqual(data, {'evaluation': {'window': 3, 'horizon': 5}, 'search': {'trials': 4}, 'seed': 9})

    def test_sample_within_search_space(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            sample = sample_hyperparameters(rng)
            self.assertEqual(set(sample), set(SEARCH_SPACE))
            for name, value in sample.items():
                if name in CONTINUOUS_KEYS:
                    low, high = SEARCH_SPACE[name]
                    self.assertTrue(low <= value <= high)
                else:
                    self.assertIn(value, SEARCH_SPACE[name])

    def test_sampling_is_seeded(self):
        first = sample_hyperparameters(np.random.default_rng(4))
        second = sample_hyperparameters(np.random.default_rng(4))
        self.assertEqual(first, second)


if __name__ == '__main__':
    unittest.main()
