"""
Author: Perry Radau
Date: 2025-03-11
Brief description: Unit tests for checkpoint module
"""

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from checkpoint import CheckpointManager
from errors import IntegrityError
from model import ModelConfig, init_model, predict


class TestCheckpointManager(unittest.TestCase):
    """Test cases for CheckpointManager class."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config = ModelConfig(window=3, n_features=4, n_domains=3, cnn_hidden=16, lstm_hidden=64)

    def tearDown(self):
        """Clean up test fixtures."""
        import shutil
        shutil.rmtree(self.temp_dir)

    def test_round_trip_is_bit_exact(self):
        params = init_model(self.config, seed=2)
        params.buffers['conv.k3.0.bn.running_mean'] += 0.25
        manager = CheckpointManager(self.temp_dir / 'ckpt')
        manager.save(params, metadata={'selected': [0, 2, 3]})

        restored, metadata = manager.load()
        self.assertEqual(metadata, {'selected': [0, 2, 3]})
        self.assertEqual(restored.config, params.config)
        self.assertEqual(restored.seed, 2)
        self.assertEqual(set(restored.arrays()), set(params.arrays()))
        for name, array in params.arrays().items():
            self.assertEqual(restored.arrays()[name].dtype, array.dtype)
            np.testing.assert_array_equal(restored.arrays()[name], array)

        x = np.random.default_rng(0).random((3, 3, 4)).astype(np.float32)
        np.testing.assert_array_equal(predict(restored, x), predict(params, x))

    def test_lstm_kind_preserved(self):
        params = init_model(self.config, seed=0, kind='lstm')
        manager = CheckpointManager(self.temp_dir)
        manager.save(params)
        restored, metadata = manager.load()
        self.assertEqual(restored.kind, 'lstm')
        self.assertEqual(metadata, {})

    def test_missing_checkpoint(self):
        manager = CheckpointManager(self.temp_dir / 'absent')
        self.assertFalse(manager.exists())
        with self.assertRaises(FileNotFoundError):
            manager.load()

    def test_corrupted_payload(self):
        manager = CheckpointManager(self.temp_dir)
        manager.save(init_model(self.config, seed=0))
        payload = bytearray(manager.binary_path.read_bytes())
        payload[0] ^= 0xFF
        manager.binary_path.write_bytes(bytes(payload))
        with self.assertRaises(IntegrityError):
            manager.load()

    def test_manifest_lists_arrays(self):
        manager = CheckpointManager(self.temp_dir)
        manager.save(init_model(self.config, seed=0))
        manifest = json.loads(manager.manifest_path.read_text())
        names = [entry['name'] for entry in manifest['arrays']]
        self.assertIn('weight:head.weight', names)
        self.assertIn('buffer:conv.d3.0.bn.running_var', names)
        self.assertFalse(list(self.temp_dir.glob('*.tmp')))


if __name__ == '__main__':
    unittest.main()
