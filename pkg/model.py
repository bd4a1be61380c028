"""
Author: Perry Radau
Date: 2025-03-10
Brief description: Adaptive spatial-temporal forecaster (multi-scale CNN, channel attention, BiLSTM,
                   multi-head self-attention, temporal attention, residual path, domain head)
                   and a plain stacked-LSTM baseline
Dependencies: Python 3.8+, numpy
Usage: params = init_model(ModelConfig(window=3, n_features=15, horizon=1, n_domains=14), seed=0)
       yhat, dhat = forward(params, x, return_domain=True)
"""

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

import tensorad as ad
from errors import ConfigError, ContractError, ShapeError
from tensorad import Tensor

logger = logging.getLogger(__name__)

# Hyperparameter search space shared by config validation and random search.
SEARCH_SPACE: Dict[str, object] = {
    'conv_layers': (1, 2),
    'lstm_layers': (1, 2, 3),
    'cnn_hidden': (16, 32, 64),
    'lstm_hidden': (64, 128, 256),
    'cnn_dropout': (0.1, 0.5),
    'lstm_dropout': (0.1, 0.5),
    'batchnorm': (False, True),
    'batch_size': (8, 16, 32),
    'alpha': (0.0, 1.0),
}
CONTINUOUS_KEYS = ('cnn_dropout', 'lstm_dropout', 'alpha')

MODEL_KINDS = ('adaptive', 'lstm')


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Attributes:
        window: Input days w
        n_features: Input features F
        horizon: Forecast days delta
        n_domains: Domain-classifier classes (training subjects)
        conv_layers: Convolutions per branch
        cnn_hidden: Channels per branch
        lstm_layers: Stacked bidirectional layers
        lstm_hidden: Hidden units per direction
        cnn_dropout: Dropout after each convolution
        lstm_dropout: Dropout after each recurrent layer
        batchnorm: Batch normalization after each convolution
        heads: Self-attention heads
        kernel_sizes: Plain branch kernels
        dilated_kernel: Kernel of the dilated branch
        dilation: Dilation of the dilated branch
        reduction: Channel-attention bottleneck ratio
        domain_hidden: Hidden width of the domain head
        allow_custom: Skip search-space membership checks
    """
    window: int
    n_features: int
    horizon: int = 1
    n_domains: int = 2
    conv_layers: int = 1
    cnn_hidden: int = 32
    lstm_layers: int = 1
    lstm_hidden: int = 64
    cnn_dropout: float = 0.1
    lstm_dropout: float = 0.1
    batchnorm: bool = True
    heads: int = 8
    kernel_sizes: Tuple[int, ...] = (3, 5, 7)
    dilated_kernel: int = 3
    dilation: int = 2
    reduction: int = 4
    domain_hidden: int = 64
    allow_custom: bool = False

    def __post_init__(self) -> None:
        self.kernel_sizes = tuple(self.kernel_sizes)
        violations = self.violations()
        if violations:
            raise ConfigError(violations[0], field='model', violations=violations)

    def violations(self) -> List[str]:
        """Every problem with this configuration (empty when valid)."""
        found = []
        for name in ('window', 'n_features', 'horizon', 'n_domains', 'heads', 'reduction'):
            if getattr(self, name) < 1:
                found.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lstm_hidden < 1 or (2 * self.lstm_hidden) % max(self.heads, 1) != 0:
            found.append(f"lstm_hidden {self.lstm_hidden} must split evenly across {self.heads} heads")
        if (4 * self.cnn_hidden) // self.reduction < 1:
            found.append("channel-attention bottleneck would be empty")
        for name in ('cnn_dropout', 'lstm_dropout'):
            if not 0.0 <= getattr(self, name) < 1.0:
                found.append(f"{name} must lie in [0, 1)")
        if self.allow_custom:
            return found
        for name in ('conv_layers', 'lstm_layers', 'cnn_hidden', 'lstm_hidden'):
            if getattr(self, name) not in SEARCH_SPACE[name]:
                found.append(f"{name}={getattr(self, name)} not in {list(SEARCH_SPACE[name])}")
        for name in ('cnn_dropout', 'lstm_dropout'):
            low, high = SEARCH_SPACE[name]
            if not low <= getattr(self, name) <= high:
                found.append(f"{name}={getattr(self, name)} outside [{low}, {high}]")
        if self.heads != 8:
            found.append(f"heads must be 8, got {self.heads}")
        return found

    @property
    def branches(self) -> List[Tuple[str, int, int]]:
        """(name, kernel, dilation) of every convolution branch."""
        plain = [(f'k{k}', k, 1) for k in self.kernel_sizes]
        return plain + [(f'd{self.dilated_kernel}', self.dilated_kernel, self.dilation)]

    @property
    def cnn_channels(self) -> int:
        return len(self.branches) * self.cnn_hidden

    @property
    def sequence_width(self) -> int:
        return 2 * self.lstm_hidden

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['kernel_sizes'] = list(self.kernel_sizes)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelConfig':
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown model keys: {unknown}", field='model')
        return cls(**data)


@dataclass
class ModelParams:
    """Learnable arrays plus batch-norm buffers.

    Attributes:
        config: Architecture
        seed: Initialization seed
        weights: Name -> trainable Tensor
        buffers: Name -> running statistics (not trained)
        kind: 'adaptive' or 'lstm'
    """
    config: ModelConfig
    seed: int
    weights: Dict[str, Tensor] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    kind: str = 'adaptive'

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"Unknown model kind: {self.kind}", field='model')

    def parameters(self, include_domain: bool = True) -> Dict[str, Tensor]:
        """Trainable tensors, optionally without the domain head."""
        if include_domain:
            return dict(self.weights)
        return {name: t for name, t in self.weights.items() if not name.startswith('domain.')}

    @property
    def has_domain_head(self) -> bool:
        return any(name.startswith('domain.') for name in self.weights)

    @property
    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self.weights.values()))

    def zero_grad(self) -> None:
        for tensor in self.weights.values():
            tensor.zero_grad()

    def copy(self) -> 'ModelParams':
        """Independent snapshot (gradients dropped)."""
        weights = {name: Tensor(t.data.copy(), requires_grad=True, name=name)
                   for name, t in self.weights.items()}
        buffers = {name: b.copy() for name, b in self.buffers.items()}
        return ModelParams(config=copy.deepcopy(self.config), seed=self.seed,
                           weights=weights, buffers=buffers, kind=self.kind)

    def arrays(self) -> Dict[str, np.ndarray]:
        """Flat name -> array view of weights and buffers."""
        out = {f'weight:{name}': t.data for name, t in self.weights.items()}
        out.update({f'buffer:{name}': b for name, b in self.buffers.items()})
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


def _layout(config: ModelConfig, kind: str, with_domain_head: bool) -> List[Tuple[str, Tuple[int, ...], str]]:
    """(name, shape, init) for every weight in initialization order.

    init is 'uniform:<fan_in>', 'ones' or 'zeros'. The domain head comes last so
    dropping it leaves the other draws unchanged.
    """
    layout: List[Tuple[str, Tuple[int, ...], str]] = []

    def dense(prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
        layout.append((f'{prefix}.weight', (fan_in, fan_out), f'uniform:{fan_in}'))
        if bias:
            layout.append((f'{prefix}.bias', (fan_out,), f'uniform:{fan_in}'))

    def lstm(prefix: str, input_size: int, hidden: int) -> None:
        layout.append((f'{prefix}.w_ih', (input_size, 4 * hidden), f'uniform:{input_size}'))
        layout.append((f'{prefix}.w_hh', (hidden, 4 * hidden), f'uniform:{hidden}'))
        layout.append((f'{prefix}.bias', (4 * hidden,), f'uniform:{hidden}'))

    hidden = config.lstm_hidden
    if kind == 'lstm':
        for layer in range(config.lstm_layers):
            lstm(f'lstm.{layer}', config.n_features if layer == 0 else hidden, hidden)
        dense('head', hidden, config.horizon)
        return layout

    for branch, kernel, _ in config.branches:
        for layer in range(config.conv_layers):
            c_in = config.n_features if layer == 0 else config.cnn_hidden
            prefix = f'conv.{branch}.{layer}'
            layout.append((f'{prefix}.weight', (kernel, c_in, config.cnn_hidden), f'uniform:{kernel * c_in}'))
            layout.append((f'{prefix}.bias', (config.cnn_hidden,), f'uniform:{kernel * c_in}'))
            if config.batchnorm:
                layout.append((f'{prefix}.bn.gamma', (config.cnn_hidden,), 'ones'))
                layout.append((f'{prefix}.bn.beta', (config.cnn_hidden,), 'zeros'))

    channels = config.cnn_channels
    dense('chan_att.squeeze', channels, channels // config.reduction)
    dense('chan_att.excite', channels // config.reduction, channels)

    width = config.sequence_width
    for layer in range(config.lstm_layers):
        for direction in ('fwd', 'bwd'):
            lstm(f'bilstm.{layer}.{direction}', channels if layer == 0 else width, hidden)

    layout.append(('attn.ln.gamma', (width,), 'ones'))
    layout.append(('attn.ln.beta', (width,), 'zeros'))
    for proj in ('query', 'key', 'value', 'out'):
        dense(f'attn.{proj}', width, width)

    dense('temporal.score', width, hidden)
    layout.append(('temporal.context', (hidden, 1), f'uniform:{hidden}'))
    dense('residual', channels, width)
    dense('head', width, config.horizon)

    if with_domain_head:
        dense('domain.hidden', width, config.domain_hidden)
        dense('domain.out', config.domain_hidden, config.n_domains)
    return layout


def init_model(config: ModelConfig, seed: int, kind: str = 'adaptive',
               with_domain_head: bool = True, dtype=ad.DEFAULT_DTYPE) -> ModelParams:
    """Uniform fan-in initialization (bound 1/sqrt(fan_in)), deterministic per seed.

    Args:
        config: Validated architecture
        seed: RNG seed
        kind: 'adaptive' (full model) or 'lstm' (baseline)
        with_domain_head: Include the adversarial domain classifier
        dtype: Storage dtype of the weights

    Returns:
        ModelParams
    """
    if kind not in MODEL_KINDS:
        raise ConfigError(f"Unknown model kind: {kind}", field='model')
    rng = np.random.default_rng(seed)
    weights: Dict[str, Tensor] = {}
    for name, shape, init in _layout(config, kind, with_domain_head and kind == 'adaptive'):
        if init == 'ones':
            values = np.ones(shape)
        elif init == 'zeros':
            values = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(int(init.split(':')[1]))
            values = rng.uniform(-bound, bound, size=shape)
        weights[name] = Tensor(values.astype(dtype), requires_grad=True, name=name)

    buffers: Dict[str, np.ndarray] = {}
    if kind == 'adaptive' and config.batchnorm:
        for branch, _, _ in config.branches:
            for layer in range(config.conv_layers):
                buffers[f'conv.{branch}.{layer}.bn.running_mean'] = np.zeros(config.cnn_hidden)
                buffers[f'conv.{branch}.{layer}.bn.running_var'] = np.ones(config.cnn_hidden)

    params = ModelParams(config=config, seed=seed, weights=weights, buffers=buffers, kind=kind)
    logger.debug("Initialized %s model with %d parameters", kind, params.n_parameters)
    return params


def _dense(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    return x @ params.weights[f'{prefix}.weight'] + params.weights[f'{prefix}.bias']


def _lstm_pass(params: ModelParams, prefix: str, x: Tensor, reverse: bool = False) -> Tensor:
    """One recurrent direction over [B x T x in]; returns [B x T x H]."""
    w_ih = params.weights[f'{prefix}.w_ih']
    w_hh = params.weights[f'{prefix}.w_hh']
    bias = params.weights[f'{prefix}.bias']
    hidden = w_hh.shape[0]
    batch, steps = x.shape[0], x.shape[1]

    projected = x @ w_ih + bias
    h = Tensor(np.zeros((batch, hidden), dtype=projected.dtype))
    c = Tensor(np.zeros((batch, hidden), dtype=projected.dtype))
    outputs: List[Optional[Tensor]] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        gates = projected[:, t, :] + h @ w_hh
        i = ad.sigmoid(gates[:, :hidden])
        f = ad.sigmoid(gates[:, hidden:2 * hidden])
        g = ad.tanh(gates[:, 2 * hidden:3 * hidden])
        o = ad.sigmoid(gates[:, 3 * hidden:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        outputs[t] = h
    return ad.stack(outputs, axis=1)


def _as_input(params: ModelParams, x) -> Tensor:
    tensor = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    expected = (params.config.window, params.config.n_features)
    if tensor.ndim != 3 or tuple(tensor.shape[1:]) != expected:
        raise ShapeError(f"forward: input shape {tensor.shape} does not match [B x {expected[0]} x {expected[1]}]")
    if not np.all(np.isfinite(tensor.data)):
        raise ContractError("forward: input contains non-finite values")
    return tensor


def encode(params: ModelParams, x, training: bool = False,
           rng: Optional[np.random.Generator] = None,
           trace: Optional[Dict[str, np.ndarray]] = None) -> Tuple[Tensor, Tensor]:
    """Run stages 1-6 and return (pooled representation, gated CNN features)."""
    config = params.config
    x = _as_input(params, x)
    if training and rng is None:
        rng = np.random.default_rng(params.seed)

    # (1) multi-scale convolution branches
    branch_outputs = []
    for branch, _, dilation in config.branches:
        h = x
        for layer in range(config.conv_layers):
            prefix = f'conv.{branch}.{layer}'
            h = ad.conv1d(h, params.weights[f'{prefix}.weight'], params.weights[f'{prefix}.bias'],
                          dilation=dilation)
            h = ad.relu(h)
            if config.batchnorm:
                h = ad.batchnorm1d(h, params.weights[f'{prefix}.bn.gamma'], params.weights[f'{prefix}.bn.beta'],
                                   params.buffers[f'{prefix}.bn.running_mean'],
                                   params.buffers[f'{prefix}.bn.running_var'], training=training)
            h = ad.dropout(h, config.cnn_dropout, training, rng)
        branch_outputs.append(h)
    features = ad.concat(branch_outputs, axis=-1)

    # (2) channel attention
    squeezed = ad.relu(_dense(params, 'chan_att.squeeze', features.mean(axis=1)))
    gates = ad.sigmoid(_dense(params, 'chan_att.excite', squeezed))
    gated = features * gates.reshape(gates.shape[0], 1, gates.shape[1])

    # (3) bidirectional recurrent stack
    sequence = gated
    for layer in range(config.lstm_layers):
        forward_h = _lstm_pass(params, f'bilstm.{layer}.fwd', sequence)
        backward_h = _lstm_pass(params, f'bilstm.{layer}.bwd', sequence, reverse=True)
        sequence = ad.dropout(ad.concat([forward_h, backward_h], axis=-1), config.lstm_dropout, training, rng)

    # (4) pre-norm multi-head self-attention with residual
    batch, steps, width = sequence.shape
    head_dim = width // config.heads
    normed = ad.layer_norm(sequence, params.weights['attn.ln.gamma'], params.weights['attn.ln.beta'])

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(batch, steps, config.heads, head_dim).transpose(0, 2, 1, 3)

    query = split_heads(_dense(params, 'attn.query', normed))
    key = split_heads(_dense(params, 'attn.key', normed))
    value = split_heads(_dense(params, 'attn.value', normed))
    attention = ad.softmax((query @ key.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim)), axis=-1)
    context = (attention @ value).transpose(0, 2, 1, 3).reshape(batch, steps, width)
    sequence = sequence + _dense(params, 'attn.out', context)

    # (5) temporal attention pooling
    scores = ad.tanh(_dense(params, 'temporal.score', sequence)) @ params.weights['temporal.context']
    weights = ad.softmax(scores.reshape(batch, steps), axis=1)
    pooled = (sequence * weights.reshape(batch, steps, 1)).sum(axis=1)

    # (6) residual from time-averaged CNN features
    pooled = pooled + _dense(params, 'residual', gated.mean(axis=1))

    if trace is not None:
        trace['channel_gates'] = gates.data.copy()
        trace['self_attention'] = attention.data.copy()
        trace['temporal_attention'] = weights.data.copy()
    return pooled, gated


def forward(params: ModelParams, x, return_domain: bool = False, training: bool = False,
            rng: Optional[np.random.Generator] = None, grl_lambda: float = 1.0,
            trace: Optional[Dict[str, np.ndarray]] = None) -> Tuple[Tensor, Optional[Tensor]]:
    """Full model forward pass.

    Args:
        params: Model parameters
        x: Input windows [B x w x F]
        return_domain: Also evaluate the domain head behind gradient reversal
        training: Enables dropout and batch statistics
        rng: Dropout stream (seeded from params when absent)
        grl_lambda: Gradient-reversal scale
        trace: Optional dict receiving gates and attention weights

    Returns:
        (yhat [B x delta], dhat [B x n_domains] or None)

    Raises:
        ShapeError: Input does not match the configuration
    """
    if params.kind != 'adaptive':
        raise ConfigError("forward() needs an adaptive model; use forward_lstm_baseline", field='model')
    pooled, _ = encode(params, x, training=training, rng=rng, trace=trace)
    yhat = _dense(params, 'head', pooled)

    dhat = None
    if return_domain:
        if not params.has_domain_head:
            raise ConfigError("Model was built without a domain head", field='model')
        reversed_features = ad.grad_reverse(pooled, grl_lambda)
        hidden = ad.relu(_dense(params, 'domain.hidden', reversed_features))
        dhat = _dense(params, 'domain.out', hidden)
    return yhat, dhat


def forward_lstm_baseline(params: ModelParams, x, training: bool = False,
                          rng: Optional[np.random.Generator] = None) -> Tensor:
    """Stacked unidirectional LSTM; last hidden state -> linear head."""
    if params.kind != 'lstm':
        raise ConfigError("forward_lstm_baseline() needs an lstm model", field='model')
    sequence = _as_input(params, x)
    if training and rng is None:
        rng = np.random.default_rng(params.seed)
    for layer in range(params.config.lstm_layers):
        sequence = _lstm_pass(params, f'lstm.{layer}', sequence)
        sequence = ad.dropout(sequence, params.config.lstm_dropout, training, rng)
    last = sequence[:, -1, :]
    return _dense(params, 'head', last)


def predict(params: ModelParams, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode predictions [N x delta] for either model kind."""
    x = np.asarray(x)
    outputs = []
    for start in range(0, x.shape[0], batch_size):
        chunk = x[start:start + batch_size]
        if params.kind == 'lstm':
            outputs.append(forward_lstm_baseline(params, chunk).data)
        else:
            outputs.append(forward(params, chunk)[0].data)
    if not outputs:
        return np.zeros((0, params.config.horizon))
    return np.concatenate(outputs, axis=0)
