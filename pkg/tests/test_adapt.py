"""
Author: Perry Radau
Date: 2025-03-12
Brief description: Unit tests for adapt module
"""

import inspect
import math
import unittest

import numpy as np

from adapt import (MODES, AdaptConfig, EarlyStopper, PreparedFold, combined_loss, pairwise_consistency,
                   phase1_config, remap_domains, run_mode, temporal_loss, train_phase1, tta_consistency,
                   tta_entropy, tta_temporal)
from errors import ConfigError, LabelError
from model import ModelConfig, init_model, predict
from preprocess import WindowSet
from tensorad import Tensor


def small_model_config(**changes):
    settings = dict(window=3, n_features=4, horizon=1, n_domains=3, cnn_hidden=4, lstm_hidden=8,
                    allow_custom=True)
    settings.update(changes)
    return ModelConfig(**settings)


def window_set(n, seed, subjects=(3, 5, 8), horizon=1, level=0.4):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 3, 4))
    base = level + 0.2 * x[:, :, 0].mean(axis=1, keepdims=True)
    y = np.repeat(base, horizon, axis=1)
    domain = np.array([subjects[i % len(subjects)] for i in range(n)], dtype=np.int64)
    return WindowSet(x=x, y=y, domain=domain, t0=np.arange(n), window=3, horizon=horizon)


def constant_model(config, seed=0):
    """Model whose convolution kernels are zero, so its output ignores the input."""
    params = init_model(config, seed=seed)
    for name, tensor in params.weights.items():
        if name.startswith('conv.') and name.endswith('.weight'):
            tensor.data[...] = 0.0
    return params


def stopping_oracle(val_losses, patience, min_delta, beta):
    """Scalar simulation of the smoothed patience rule; returns the stop epoch."""
    smoothed, best, wait = None, math.inf, 0
    for epoch, value in enumerate(val_losses):
        smoothed = value if smoothed is None else beta * value + (1 - beta) * smoothed
        if best - smoothed >= min_delta:
            best, wait = smoothed, 0
        else:
            wait += 1
        if wait >= patience:
            return epoch
    return len(val_losses) - 1


class TestAdaptConfig(unittest.TestCase):
    """Test cases for AdaptConfig class."""

    def test_defaults(self):
        cfg = AdaptConfig()
        self.assertEqual((cfg.lr, cfg.lr_tta, cfg.tta_epochs), (1e-3, 1e-4, 10))
        self.assertEqual(cfg.noise_levels, (0.01, 0.02))
        self.assertEqual((cfg.patience, cfg.min_delta, cfg.smoothing_beta), (30, 0.0001, 0.1))

    def test_violations_collected(self):
        with self.assertRaises(ConfigError) as ctx:
            AdaptConfig(mode='always', alpha=1.5, batch_size=12)
        self.assertEqual(ctx.exception.field, 'adapt')
        self.assertEqual(len(ctx.exception.violations), 3)

    def test_custom_batch_size(self):
        self.assertEqual(AdaptConfig(batch_size=4, allow_custom=True).batch_size, 4)

    def test_mode_switches(self):
        self.assertFalse(AdaptConfig(mode='none').uses_domain_loss)
        self.assertTrue(AdaptConfig(mode='train-only').uses_domain_loss)
        self.assertFalse(AdaptConfig(mode='train-only').uses_tta)
        self.assertTrue(AdaptConfig(mode='test-only').uses_tta)
        self.assertEqual(phase1_config(AdaptConfig(mode='test-only')).alpha, 0.0)
        self.assertEqual(phase1_config(AdaptConfig(mode='both', alpha=0.5)).alpha, 0.5)

    def test_dict_round_trip(self):
        cfg = AdaptConfig(mode='test-only', tta_method='temporal')
        self.assertEqual(AdaptConfig.from_dict(cfg.to_dict()), cfg)
        with self.assertRaises(ConfigError):
            AdaptConfig.from_dict({'warmup': 3})


class TestLosses(unittest.TestCase):
    """Test cases for the training and adaptation losses."""

    def test_uniform_domain_logits(self):
        y = np.array([[0.2], [0.4]])
        loss = combined_loss(Tensor(y), y, Tensor(np.zeros((2, 4))), np.array([0, 3]), alpha=1.0)
        self.assertAlmostEqual(loss.item(), math.log(4), places=10)

    def test_alpha_zero_is_mse(self):
        yhat, y = np.array([[0.1], [0.5]]), np.array([[0.3], [0.2]])
        loss = combined_loss(Tensor(yhat), y, Tensor(np.ones((2, 3))), np.array([0, 1]), alpha=0.0)
        self.assertAlmostEqual(loss.item(), float(np.mean((yhat - y) ** 2)))

    def test_weighted_sum(self):
        rng = np.random.default_rng(0)
        yhat, y = rng.random((4, 1)), rng.random((4, 1))
        logits = rng.normal(size=(4, 3))
        labels = np.array([0, 2, 1, 2])
        log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        expected = np.mean((yhat - y) ** 2) + 0.5 * -log_probs[np.arange(4), labels].mean()
        loss = combined_loss(Tensor(yhat), y, Tensor(logits), labels, alpha=0.5)
        self.assertAlmostEqual(loss.item(), expected, places=10)

    def test_rmse_main_loss(self):
        yhat, y = np.array([[0.0], [0.0]]), np.array([[0.3], [0.4]])
        loss = combined_loss(Tensor(yhat), y, None, None, alpha=1.0, main_loss='rmse')
        self.assertAlmostEqual(loss.item(), math.sqrt(0.125))

    def test_label_out_of_range(self):
        with self.assertRaises(LabelError):
            combined_loss(Tensor(np.zeros((2, 1))), np.zeros((2, 1)), Tensor(np.zeros((2, 3))),
                          np.array([0, 3]), alpha=1.0)

    def test_remap_domains(self):
        labels, mapping = remap_domains(np.array([8, 3, 8, 5]))
        np.testing.assert_array_equal(labels, [2, 0, 2, 1])
        self.assertEqual(mapping, {3: 0, 5: 1, 8: 2})

    def test_pairwise_consistency(self):
        same = [Tensor(np.array([[0.5]])) for _ in range(3)]
        self.assertEqual(pairwise_consistency(same).item(), 0.0)
        spread = [Tensor(np.array([[1.0]])), Tensor(np.array([[1.0]])), Tensor(np.array([[4.0]]))]
        self.assertAlmostEqual(pairwise_consistency(spread).item(), 6.0)

    def test_temporal_loss(self):
        self.assertAlmostEqual(temporal_loss(Tensor(np.array([[0.5], [0.7]]))).item(), 0.04)
        # two-day horizon: adjacent change plus the shared target day
        predictions = Tensor(np.array([[0.1, 0.3], [0.2, 0.6]]))
        expected = ((0.2 - 0.1) ** 2 + (0.6 - 0.3) ** 2) / 2 + (0.3 - 0.2) ** 2
        self.assertAlmostEqual(temporal_loss(predictions).item(), expected)


class TestEarlyStopper(unittest.TestCase):
    """Test cases for the smoothed patience rule."""

    def drive(self, values, patience, min_delta, beta):
        stopper = EarlyStopper(patience, min_delta, beta)
        for epoch, value in enumerate(values):
            stopper.update(value, epoch)
            if stopper.should_stop:
                return epoch, stopper
        return len(values) - 1, stopper

    def test_flat_losses(self):
        epoch, stopper = self.drive([1.0] * 10, patience=3, min_delta=0.0001, beta=0.1)
        self.assertEqual(epoch, 3)
        self.assertEqual(stopper.best_epoch, 0)

    def test_matches_recurrence_oracle(self):
        values = [1.0] + [0.99] * 200
        expected = stopping_oracle(values, 3, 0.0001, 0.1)
        epoch, _ = self.drive(values, patience=3, min_delta=0.0001, beta=0.1)
        self.assertEqual(epoch, expected)
        self.assertLess(expected, 200)

    def test_smoothing_recurrence(self):
        stopper = EarlyStopper(patience=5, min_delta=0.0, beta=0.5)
        stopper.update(1.0, 0)
        stopper.update(0.0, 1)
        self.assertAlmostEqual(stopper.smoothed, 0.5)


class TestPhaseOne(unittest.TestCase):
    """Test cases for adversarial training."""

    def setUp(self):
        self.config = small_model_config()
        self.train = window_set(48, seed=1)
        self.val = window_set(16, seed=2, subjects=(9,))

    def test_empty_sets_rejected(self):
        params = init_model(self.config, seed=0)
        empty = WindowSet.empty(3, 1, 4)
        with self.assertRaises(ConfigError):
            train_phase1(params, empty, self.val, AdaptConfig(mode='none'))
        with self.assertRaises(ConfigError):
            train_phase1(params, self.train, empty, AdaptConfig(mode='none'))

    def test_loss_decreases(self):
        train, val = window_set(48, seed=1, level=2.0), window_set(16, seed=2, subjects=(9,), level=2.0)
        params = init_model(self.config, seed=0)
        initial = float(np.mean((predict(params, train.x.astype(np.float32)) - train.y) ** 2))
        cfg = AdaptConfig(mode='none', lr=1e-2, max_epochs=50, batch_size=8)
        trained, history = train_phase1(params, train, val, cfg)
        final = float(np.mean((predict(trained, train.x.astype(np.float32)) - train.y) ** 2))
        self.assertLess(final, initial / 10)
        self.assertEqual(len(history.val_loss), len(history.smoothed_val_loss))
        self.assertLessEqual(history.stop_epoch, cfg.max_epochs - 1)

    def test_restored_checkpoint_is_best(self):
        params = init_model(self.config, seed=0)
        _, history = train_phase1(params, self.train, self.val,
                                  AdaptConfig(mode='both', max_epochs=8, batch_size=8))
        self.assertAlmostEqual(history.smoothed_val_loss[history.best_epoch], history.best_smoothed)
        self.assertLess(history.best_smoothed - min(history.smoothed_val_loss), 0.0001 + 1e-12)

    def test_alpha_zero_matches_detached_head(self):
        cfg = AdaptConfig(mode='none', max_epochs=3, batch_size=8)
        with_head, _ = train_phase1(init_model(self.config, seed=0), self.train, self.val, cfg)
        without, _ = train_phase1(init_model(self.config, seed=0, with_domain_head=False),
                                  self.train, self.val, cfg)
        for name, tensor in without.weights.items():
            np.testing.assert_array_equal(with_head.weights[name].data, tensor.data)

    def test_domain_head_required(self):
        params = init_model(self.config, seed=0, with_domain_head=False)
        with self.assertRaises(ConfigError):
            train_phase1(params, self.train, self.val, AdaptConfig(mode='both', max_epochs=1))


class TestTestTimeAdaptation(unittest.TestCase):
    """Test cases for the three test-time strategies."""

    def setUp(self):
        self.config = small_model_config()
        self.inputs = window_set(12, seed=3).x

    def test_inputs_only_interface(self):
        for fn in (tta_consistency, tta_entropy, tta_temporal):
            self.assertEqual(list(inspect.signature(fn).parameters), ['params', 'inputs', 'cfg'])
        self.assertNotIn('test_y', PreparedFold.__dataclass_fields__)

    def test_consistency_loss_decreases(self):
        for seed in (1, 2, 3):
            params = init_model(self.config, seed=seed)
            cfg = AdaptConfig(mode='both', lr_tta=1e-3, tta_epochs=10, batch_size=16, seed=seed)
            result = tta_consistency(params, self.inputs, cfg)
            with self.subTest(seed=seed):
                self.assertEqual(len(result.epoch_losses), 10)
                self.assertLess(result.epoch_losses[-1], result.epoch_losses[0])
                self.assertIsNot(result.params, params)

    def test_consistency_rejects_empty(self):
        with self.assertRaises(ConfigError):
            tta_consistency(init_model(self.config, seed=0), self.inputs[:0], AdaptConfig())

    def test_entropy_threshold_unreachable(self):
        params = init_model(self.config, seed=0)
        with self.assertLogs('adapt', level='WARNING'):
            result = tta_entropy(params, self.inputs, AdaptConfig(confidence_threshold=1.01))
        self.assertTrue(result.skipped)
        self.assertIs(result.params, params)

    def test_entropy_noise_free_model_is_confident(self):
        params = constant_model(self.config)
        result = tta_entropy(params, self.inputs, AdaptConfig(tta_epochs=2, confidence_threshold=1.0))
        self.assertFalse(result.skipped)
        self.assertEqual(len(result.epoch_losses), 2)

    def test_temporal_constant_model_unchanged(self):
        params = constant_model(self.config)
        result = tta_temporal(params, self.inputs, AdaptConfig(tta_epochs=3))
        np.testing.assert_allclose(result.epoch_losses, [0.0, 0.0, 0.0], atol=1e-12)
        for name, tensor in params.weights.items():
            np.testing.assert_allclose(result.params.weights[name].data, tensor.data, atol=1e-7)

    def test_temporal_needs_two_windows(self):
        params = init_model(self.config, seed=0)
        with self.assertLogs('adapt', level='WARNING'):
            result = tta_temporal(params, self.inputs[:1], AdaptConfig())
        self.assertTrue(result.skipped)

    def test_batchnorm_statistics_frozen(self):
        params = init_model(self.config, seed=0)
        before = {name: b.copy() for name, b in params.buffers.items()}
        result = tta_consistency(params, self.inputs, AdaptConfig(tta_epochs=2))
        for name, buffer in result.params.buffers.items():
            np.testing.assert_array_equal(buffer, before[name])


class TestRunMode(unittest.TestCase):
    """Test cases for the four operating modes."""

    def setUp(self):
        self.fold = PreparedFold(train=window_set(24, seed=4), val=window_set(8, seed=5, subjects=(9,)),
                                 test_inputs=window_set(10, seed=6, subjects=(0,)).x)
        self.config = small_model_config()

    def test_every_mode_predicts(self):
        for mode in MODES:
            cfg = AdaptConfig(mode=mode, max_epochs=2, tta_epochs=1, batch_size=8)
            outcome = run_mode(self.fold, cfg, self.config)
            self.assertEqual(outcome.mode, mode)
            self.assertEqual(outcome.test_predictions.shape, (10, 1))
            self.assertTrue(np.all(np.isfinite(outcome.test_predictions)))
            self.assertEqual(outcome.adaptation is not None, mode in ('test-only', 'both'))

    def test_deterministic(self):
        cfg = AdaptConfig(mode='none', max_epochs=2, batch_size=8)
        first = run_mode(self.fold, cfg, self.config).test_predictions
        second = run_mode(self.fold, cfg, self.config).test_predictions
        np.testing.assert_array_equal(first, second)

    def test_baseline_skips_adaptation(self):
        cfg = AdaptConfig(mode='both', max_epochs=2, tta_epochs=1, batch_size=8)
        outcome = run_mode(self.fold, cfg, self.config, kind='lstm')
        self.assertIsNone(outcome.adaptation)
        self.assertEqual(outcome.params.kind, 'lstm')
        self.assertEqual(outcome.val_predictions.shape, (8, 1))


if __name__ == '__main__':
    unittest.main()
