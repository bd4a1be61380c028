"""
Author: Perry Radau
Date: 2025-03-10
Brief description: Unit tests for model module
"""

import os
import unittest

import numpy as np
import pytest

from errors import ConfigError, ShapeError
from model import ModelConfig, forward, forward_lstm_baseline, init_model, predict
from tensorad import Adam, Tensor, backward

SLOW = os.environ.get('ADAPTCAST_SLOW_TESTS') == '1'


def tiny_config(**changes):
    settings = dict(window=3, n_features=4, horizon=1, n_domains=3, cnn_hidden=16, lstm_hidden=64)
    settings.update(changes)
    return ModelConfig(**settings)


def directional_check(test, params, loss_fn, h=1e-5, rtol=1e-3):
    """Compare sum(grad * d) with a central difference of the loss along d."""
    rng = np.random.default_rng(5)
    direction = {name: rng.normal(size=t.shape) for name, t in params.weights.items()}
    params.zero_grad()
    backward(loss_fn())
    analytic = sum(float((params.weights[name].grad * d).sum()) for name, d in direction.items())

    originals = {name: t.data.copy() for name, t in params.weights.items()}

    def shifted(step):
        for name, tensor in params.weights.items():
            tensor.data = originals[name] + step * direction[name]
        return float(loss_fn().data)

    numeric = (shifted(h) - shifted(-h)) / (2 * h)
    for name, tensor in params.weights.items():
        tensor.data = originals[name]
    test.assertAlmostEqual(analytic / numeric, 1.0, delta=rtol)


class TestModelConfig(unittest.TestCase):
    """Test cases for ModelConfig class."""

    def test_outside_search_space(self):
        with self.assertRaises(ConfigError) as ctx:
            tiny_config(lstm_hidden=100)
        self.assertEqual(ctx.exception.field, 'model')

    def test_lists_every_violation(self):
        with self.assertRaises(ConfigError) as ctx:
            tiny_config(conv_layers=3, cnn_dropout=0.7)
        self.assertGreaterEqual(len(ctx.exception.violations), 2)

    def test_allow_custom_skips_grid(self):
        config = tiny_config(lstm_hidden=8, cnn_dropout=0.0, allow_custom=True)
        self.assertEqual(config.sequence_width, 16)

    def test_heads_must_divide_width(self):
        with self.assertRaises(ConfigError):
            tiny_config(lstm_hidden=10, allow_custom=True)

    def test_branches(self):
        config = tiny_config()
        self.assertEqual([b[1:] for b in config.branches], [(3, 1), (5, 1), (7, 1), (3, 2)])
        self.assertEqual(config.cnn_channels, 64)

    def test_dict_round_trip(self):
        config = tiny_config(batchnorm=False)
        self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)
        with self.assertRaises(ConfigError):
            ModelConfig.from_dict({**config.to_dict(), 'depth': 3})


class TestInitModel(unittest.TestCase):
    """Test cases for parameter initialization."""

    def test_same_seed_bitwise_equal(self):
        first, second = init_model(tiny_config(), seed=4), init_model(tiny_config(), seed=4)
        for name, array in first.arrays().items():
            np.testing.assert_array_equal(array, second.arrays()[name])

    def test_parameter_count_depends_on_config_only(self):
        self.assertEqual(init_model(tiny_config(), seed=1).n_parameters,
                         init_model(tiny_config(), seed=2).n_parameters)

    def test_fan_in_bound(self):
        params = init_model(tiny_config(), seed=0)
        weight = params.weights['conv.k3.0.weight'].data
        self.assertLessEqual(np.abs(weight).max(), 1 / np.sqrt(3 * 4) + 1e-6)

    def test_domain_head_optional(self):
        with_head = init_model(tiny_config(), seed=0)
        without = init_model(tiny_config(), seed=0, with_domain_head=False)
        self.assertTrue(with_head.has_domain_head)
        self.assertFalse(without.has_domain_head)
        np.testing.assert_array_equal(with_head.weights['head.weight'].data,
                                      without.weights['head.weight'].data)
        self.assertNotIn('domain.out.weight', with_head.parameters(include_domain=False))

    def test_copy_is_independent(self):
        params = init_model(tiny_config(), seed=0)
        snapshot = params.copy()
        params.weights['head.bias'].data += 1.0
        self.assertFalse(np.array_equal(params.weights['head.bias'].data, snapshot.weights['head.bias'].data))


class TestForward(unittest.TestCase):
    """Test cases for the adaptive model forward pass."""

    def setUp(self):
        self.x = np.random.default_rng(0).random((2, 3, 4))

    def test_output_shapes(self):
        config = ModelConfig(window=3, n_features=15, horizon=1, n_domains=14)
        x = np.random.default_rng(1).random((2, 3, 15))
        yhat, dhat = forward(init_model(config, seed=0), x, return_domain=True)
        self.assertEqual(yhat.shape, (2, 1))
        self.assertEqual(dhat.shape, (2, 14))

    def test_inference_is_deterministic(self):
        params = init_model(tiny_config(), seed=0)
        first = forward(params, self.x)[0].data
        second = forward(params, self.x)[0].data
        np.testing.assert_array_equal(first, second)

    def test_attention_properties(self):
        params = init_model(tiny_config(), seed=0)
        trace = {}
        forward(params, self.x, trace=trace)
        temporal = trace['temporal_attention']
        self.assertTrue(np.all(temporal >= 0))
        np.testing.assert_allclose(temporal.sum(axis=1), np.ones(2), atol=1e-6)
        np.testing.assert_allclose(trace['self_attention'].sum(axis=-1), np.ones((2, 8, 3)), atol=1e-6)
        gates = trace['channel_gates']
        self.assertTrue(np.all((gates > 0) & (gates < 1)))

    def test_shape_mismatch(self):
        params = init_model(tiny_config(), seed=0)
        with self.assertRaises(ShapeError):
            forward(params, np.zeros((2, 3, 5)))
        with self.assertRaises(ShapeError):
            forward(params, np.zeros((3, 4)))

    def test_wrong_kind(self):
        params = init_model(tiny_config(), seed=0, kind='lstm')
        with self.assertRaises(ConfigError):
            forward(params, self.x)

    def test_predict_batches(self):
        params = init_model(tiny_config(), seed=0)
        x = np.random.default_rng(2).random((5, 3, 4)).astype(np.float32)
        np.testing.assert_allclose(predict(params, x, batch_size=2), predict(params, x, batch_size=10),
                                   rtol=1e-6)
        self.assertEqual(predict(params, x[:0]).shape, (0, 1))

    def test_end_to_end_gradient(self):
        params = init_model(tiny_config(batchnorm=False), seed=3, dtype=np.float64)
        x = Tensor(self.x)
        targets = np.array([[0.3], [0.7]])
        labels = np.array([0, 2])

        def loss():
            # lambda = -1 makes the reversal layer an identity in both directions
            yhat, dhat = forward(params, x, return_domain=True, grl_lambda=-1.0)
            regression = ((yhat - targets) ** 2.0).mean()
            picked = dhat[np.arange(2), labels]
            return regression + picked.mean()

        directional_check(self, params, loss)

    def test_end_to_end_gradient_random_shapes(self):
        rng = np.random.default_rng(12)
        for trial in range(20):
            window, n_features, horizon, batch = (int(v) for v in rng.integers([2, 1, 1, 1], [6, 5, 4, 4]))
            config = ModelConfig(window=window, n_features=n_features, horizon=horizon, n_domains=2,
                                 conv_layers=int(rng.integers(1, 3)), lstm_layers=int(rng.integers(1, 3)),
                                 cnn_hidden=4, lstm_hidden=8, domain_hidden=8, batchnorm=False,
                                 allow_custom=True)
            params = init_model(config, seed=trial, with_domain_head=False, dtype=np.float64)
            x = Tensor(rng.random((batch, window, n_features)))
            targets = rng.random((batch, horizon))
            with self.subTest(trial=trial, window=window, n_features=n_features, horizon=horizon):
                directional_check(self, params, lambda: ((forward(params, x)[0] - targets) ** 2.0).mean())

    def test_domain_gradient_reversed_in_encoder(self):
        params = init_model(tiny_config(batchnorm=False), seed=3, dtype=np.float64)
        x = Tensor(self.x)
        grads = {}
        for lam in (1.0, -1.0):
            params.zero_grad()
            backward(forward(params, x, return_domain=True, grl_lambda=lam)[1].sum())
            grads[lam] = {name: t.grad.copy() for name, t in params.weights.items() if t.grad is not None}
        np.testing.assert_allclose(grads[1.0]['residual.weight'], -grads[-1.0]['residual.weight'])
        np.testing.assert_allclose(grads[1.0]['domain.out.weight'], grads[-1.0]['domain.out.weight'])
        self.assertNotIn('head.weight', grads[1.0])

    def test_end_to_end_gradient_with_batchnorm(self):
        params = init_model(tiny_config(), seed=6, dtype=np.float64)
        x = Tensor(np.random.default_rng(7).random((4, 3, 4)))

        def loss():
            # buffers are restored so every evaluation sees the same state
            saved = {name: b.copy() for name, b in params.buffers.items()}
            yhat, _ = forward(params, x, training=True, rng=np.random.default_rng(1))
            for name, buffer in params.buffers.items():
                buffer[...] = saved[name]
            return (yhat ** 2.0).mean()

        directional_check(self, params, loss)

    @pytest.mark.slow
    @unittest.skipUnless(SLOW, "set ADAPTCAST_SLOW_TESTS=1")
    def test_overfits_small_batch(self):
        config = tiny_config(batchnorm=False, cnn_dropout=0.0, lstm_dropout=0.0, allow_custom=True)
        params = init_model(config, seed=0, with_domain_head=False)
        rng = np.random.default_rng(8)
        x = rng.random((8, 3, 4)).astype(np.float32)
        y = rng.random((8, 1)).astype(np.float32)
        optimizer = Adam(params.parameters(), lr=5e-3)
        for _ in range(200):
            optimizer.zero_grad()
            backward(((forward(params, x)[0] - y) ** 2.0).mean())
            optimizer.step()
        self.assertLess(float(((predict(params, x) - y) ** 2).mean()), 1e-3)


class TestLstmBaseline(unittest.TestCase):
    """Test cases for the stacked LSTM baseline."""

    def test_output_shape(self):
        params = init_model(tiny_config(horizon=3, lstm_layers=2), seed=0, kind='lstm')
        out = forward_lstm_baseline(params, np.zeros((5, 3, 4)))
        self.assertEqual(out.shape, (5, 3))
        self.assertFalse(params.has_domain_head)

    def test_zero_head_gives_bias(self):
        params = init_model(tiny_config(), seed=0, kind='lstm')
        params.weights['head.weight'].data[...] = 0.0
        out = predict(params, np.random.default_rng(0).random((4, 3, 4)))
        np.testing.assert_allclose(out, np.tile(params.weights['head.bias'].data, (4, 1)))

    def test_gradient(self):
        params = init_model(tiny_config(), seed=2, kind='lstm', dtype=np.float64)
        x = Tensor(np.random.default_rng(3).random((3, 3, 4)))
        directional_check(self, params, lambda: (forward_lstm_baseline(params, x) ** 2.0).sum())


if __name__ == '__main__':
    unittest.main()
