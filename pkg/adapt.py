"""
Author: Perry Radau
Date: 2025-03-12
Brief description: Two-stage domain adaptation - adversarial training with early stopping,
                   source-free test-time adaptation (consistency, entropy, temporal) and the
                   four operating modes
Dependencies: Python 3.8+, numpy
Usage: outcome = run_mode(PreparedFold(...), AdaptConfig(mode='both'), model_config)
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

import tensorad as ad
from errors import ConfigError, LabelError
from model import SEARCH_SPACE, ModelConfig, ModelParams, forward, forward_lstm_baseline, init_model, predict
from preprocess import WindowSet
from tensorad import Tensor

logger = logging.getLogger(__name__)

MODES = ('none', 'train-only', 'test-only', 'both')
TTA_METHODS = ('consistency', 'entropy', 'temporal')
MAIN_LOSSES = ('mse', 'rmse')


@dataclass
class AdaptConfig:
    """Training and adaptation settings.

    Attributes:
        mode: none | train-only | test-only | both
        alpha: Domain-loss weight
        lr: Phase-1 learning rate
        lr_tta: Test-time learning rate
        tta_epochs: Adaptation epochs (10 by default; 20 is the other documented value)
        tta_method: consistency | entropy | temporal
        noise_levels: Standard deviations of the two input augmentations
        confidence_threshold: Minimum 1/(1+sigma) for entropy-style pseudo labels
        patience: Epochs without smoothed improvement before stopping
        min_delta: Required decrease of the smoothed validation loss
        smoothing_beta: Weight of the newest validation loss in the smoothed series
        max_epochs: Phase-1 epoch cap
        batch_size: Mini-batch size
        seed: RNG seed for shuffling, dropout and augmentation noise
        main_loss: mse | rmse
        grl_lambda: Gradient-reversal scale
        allow_custom: Skip search-space membership checks
    """
    mode: str = 'both'
    alpha: float = 1.0
    lr: float = 1e-3
    lr_tta: float = 1e-4
    tta_epochs: int = 10
    tta_method: str = 'consistency'
    noise_levels: Tuple[float, float] = (0.01, 0.02)
    confidence_threshold: float = 0.9
    patience: int = 30
    min_delta: float = 0.0001
    smoothing_beta: float = 0.1
    max_epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    main_loss: str = 'mse'
    grl_lambda: float = 1.0
    allow_custom: bool = False

    def __post_init__(self) -> None:
        self.noise_levels = tuple(self.noise_levels)
        violations = []
        if self.mode not in MODES:
            violations.append(f"mode must be one of {list(MODES)}, got {self.mode}")
        if self.tta_method not in TTA_METHODS:
            violations.append(f"tta_method must be one of {list(TTA_METHODS)}, got {self.tta_method}")
        if self.main_loss not in MAIN_LOSSES:
            violations.append(f"main_loss must be one of {list(MAIN_LOSSES)}")
        if not 0.0 <= self.alpha <= 1.0:
            violations.append(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ('lr', 'lr_tta', 'min_delta', 'smoothing_beta'):
            if getattr(self, name) <= 0:
                violations.append(f"{name} must be > 0")
        if self.smoothing_beta > 1:
            violations.append("smoothing_beta must be <= 1")
        if len(self.noise_levels) != 2 or any(level < 0 for level in self.noise_levels):
            violations.append("noise_levels must be two non-negative values")
        for name in ('patience', 'max_epochs', 'batch_size'):
            if getattr(self, name) < 1:
                violations.append(f"{name} must be >= 1")
        if self.tta_epochs < 0:
            violations.append("tta_epochs must be >= 0")
        if not self.allow_custom and self.batch_size not in SEARCH_SPACE['batch_size']:
            violations.append(f"batch_size={self.batch_size} not in {list(SEARCH_SPACE['batch_size'])}")
        if violations:
            raise ConfigError(violations[0], field='adapt', violations=violations)

    @property
    def uses_domain_loss(self) -> bool:
        return self.mode in ('train-only', 'both') and self.alpha > 0

    @property
    def uses_tta(self) -> bool:
        return self.mode in ('test-only', 'both')

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['noise_levels'] = list(self.noise_levels)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'AdaptConfig':
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"Unknown adapt keys: {unknown}", field='adapt')
        return cls(**data)


@dataclass
class TrainHistory:
    """Per-epoch record of Phase 1."""
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    smoothed_val_loss: List[float] = field(default_factory=list)
    stop_epoch: int = -1
    best_epoch: int = -1
    best_smoothed: float = math.inf

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class AdaptationResult:
    """Outcome of one test-time adaptation run."""
    params: ModelParams
    epoch_losses: List[float]
    skipped: bool = False


@dataclass
class PreparedFold:
    """Windowed data of one fold.

    Test inputs are carried without labels so adaptation cannot see them.
    """
    train: WindowSet
    val: WindowSet
    test_inputs: np.ndarray


@dataclass
class ModeOutcome:
    """Predictions and provenance of one operating mode on one fold."""
    mode: str
    test_predictions: np.ndarray
    val_predictions: np.ndarray
    history: TrainHistory
    adaptation: Optional[AdaptationResult]
    params: ModelParams


def mse_loss(prediction: Tensor, target) -> Tensor:
    diff = prediction - target
    return (diff * diff).mean()


def combined_loss(yhat: Tensor, y, dhat: Optional[Tensor], d: Optional[np.ndarray],
                  alpha: float, main_loss: str = 'mse') -> Tensor:
    """MSE(yhat, y) + alpha * mean cross-entropy(softmax(dhat), d).

    With alpha == 0 or no domain logits the result is the main loss alone.

    Raises:
        LabelError: If a domain label falls outside [0, n_domains)
    """
    main = mse_loss(yhat, y)
    if main_loss == 'rmse':
        main = ad.sqrt(main)
    if alpha == 0 or dhat is None:
        return main

    labels = np.asarray(d, dtype=np.int64)
    n_domains = dhat.shape[1]
    if labels.shape != (dhat.shape[0],):
        raise LabelError(f"Expected {dhat.shape[0]} domain labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= n_domains):
        raise LabelError(f"Domain labels must lie in [0, {n_domains}), got {sorted(set(labels.tolist()))}")
    one_hot = np.zeros(dhat.shape, dtype=dhat.dtype)
    one_hot[np.arange(labels.size), labels] = 1.0
    cross_entropy = -(ad.log_softmax(dhat, axis=1) * one_hot).sum(axis=1).mean()
    return main + alpha * cross_entropy


def remap_domains(domain_ids: np.ndarray) -> Tuple[np.ndarray, Dict[int, int]]:
    """Map subject ids to contiguous labels 0..K-1 (sorted by id)."""
    mapping = {int(s): i for i, s in enumerate(sorted(set(np.asarray(domain_ids).tolist())))}
    return np.array([mapping[int(s)] for s in domain_ids], dtype=np.int64), mapping


class EarlyStopper:
    """Patience rule on an exponentially smoothed validation loss.

    s_0 = v_0 and s_t = beta * v_t + (1 - beta) * s_{t-1}. An epoch improves
    when best - s_t >= min_delta.
    """

    def __init__(self, patience: int, min_delta: float, beta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.beta = beta
        self.smoothed: Optional[float] = None
        self.best = math.inf
        self.best_epoch = -1
        self.wait = 0

    def update(self, val_loss: float, epoch: int) -> bool:
        """Feed one epoch; returns True when it is the new best."""
        if self.smoothed is None:
            self.smoothed = val_loss
        else:
            self.smoothed = self.beta * val_loss + (1.0 - self.beta) * self.smoothed
        if self.best - self.smoothed >= self.min_delta:
            self.best = self.smoothed
            self.best_epoch = epoch
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


def _model_forward(params: ModelParams, x, use_domain: bool, training: bool,
                   rng: Optional[np.random.Generator], grl_lambda: float) -> Tuple[Tensor, Optional[Tensor]]:
    if params.kind == 'lstm':
        return forward_lstm_baseline(params, x, training=training, rng=rng), None
    return forward(params, x, return_domain=use_domain, training=training, rng=rng, grl_lambda=grl_lambda)


def _cast(params: ModelParams, x: np.ndarray) -> np.ndarray:
    dtype = next(iter(params.weights.values())).dtype
    return np.asarray(x, dtype=dtype)


def train_phase1(params: ModelParams, train: WindowSet, val: WindowSet,
                 cfg: AdaptConfig) -> Tuple[ModelParams, TrainHistory]:
    """Mini-batch Adam training with optional adversarial domain loss.

    Args:
        params: Freshly initialized model (updated in place during training)
        train: Training windows (domain = subject id)
        val: Validation windows
        cfg: Settings; the domain term is active only for train-only/both with alpha > 0

    Returns:
        (parameters of the best smoothed-validation epoch, TrainHistory)

    Raises:
        ConfigError: Empty train or validation set, or missing domain head
    """
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("Phase 1 needs non-empty training and validation windows", field='windows')
    use_domain = cfg.uses_domain_loss and params.kind == 'adaptive'
    if use_domain and not params.has_domain_head:
        raise ConfigError("Domain-adversarial training needs a domain head", field='model')
    alpha = cfg.alpha if use_domain else 0.0

    labels, _ = remap_domains(train.domain)
    shuffle_rng, dropout_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2)]
    optimizer = ad.Adam(params.parameters(include_domain=use_domain), lr=cfg.lr)
    stopper = EarlyStopper(cfg.patience, cfg.min_delta, cfg.smoothing_beta)
    history = TrainHistory()
    best = params.copy()

    train_x, val_x = _cast(params, train.x), _cast(params, val.x)
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            params.zero_grad()
            yhat, dhat = _model_forward(params, train_x[batch], use_domain, True, dropout_rng, cfg.grl_lambda)
            loss = combined_loss(yhat, train.y[batch], dhat, labels[batch] if use_domain else None,
                                 alpha, cfg.main_loss)
            ad.backward(loss)
            optimizer.step()
            epoch_loss += loss.item() * len(batch)

        val_loss = float(np.mean((predict(params, val_x) - val.y) ** 2))
        history.train_loss.append(epoch_loss / len(order))
        history.val_loss.append(val_loss)
        if stopper.update(val_loss, epoch):
            best = params.copy()
        history.smoothed_val_loss.append(stopper.smoothed)
        history.stop_epoch = epoch
        logger.debug("epoch %d: train %.5f val %.5f smoothed %.5f", epoch,
                     history.train_loss[-1], val_loss, stopper.smoothed)
        if stopper.should_stop:
            logger.info("Early stopping at epoch %d (best %d)", epoch, stopper.best_epoch)
            break

    history.best_epoch = stopper.best_epoch
    history.best_smoothed = stopper.best
    return best, history


def pairwise_consistency(predictions: List[Tensor]) -> Tensor:
    """Mean of the pairwise MSEs over every pair of predictions."""
    pairs = [(i, j) for i in range(len(predictions)) for j in range(i + 1, len(predictions))]
    total = mse_loss(predictions[pairs[0][0]], predictions[pairs[0][1]])
    for i, j in pairs[1:]:
        total = total + mse_loss(predictions[i], predictions[j])
    return total * (1.0 / len(pairs))


def _augment(x: np.ndarray, levels: Tuple[float, float], rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    first = x + rng.normal(0.0, levels[0], size=x.shape).astype(x.dtype)
    second = x + rng.normal(0.0, levels[1], size=x.shape).astype(x.dtype)
    return first, second


def augmentation_confidence(params: ModelParams, inputs: np.ndarray, cfg: AdaptConfig,
                            rng: np.random.Generator) -> Tuple[np.ndarray, List[Tensor]]:
    """Confidence 1/(1+sigma) per window, sigma = spread over original and two augmentations."""
    x1, x2 = _augment(inputs, cfg.noise_levels, rng)
    predictions = [_model_forward(params, x, False, False, None, cfg.grl_lambda)[0] for x in (inputs, x1, x2)]
    spread = np.stack([p.data for p in predictions]).std(axis=0).mean(axis=1)
    return 1.0 / (1.0 + spread), predictions


def _consistency_objective(params: ModelParams, x: np.ndarray, cfg: AdaptConfig,
                           rng: np.random.Generator) -> Optional[Tensor]:
    x1, x2 = _augment(x, cfg.noise_levels, rng)
    predictions = [_model_forward(params, batch, False, False, None, cfg.grl_lambda)[0] for batch in (x, x1, x2)]
    return pairwise_consistency(predictions)


def _entropy_objective(params: ModelParams, x: np.ndarray, cfg: AdaptConfig,
                       rng: np.random.Generator) -> Optional[Tensor]:
    confidence, (original, first, second) = augmentation_confidence(params, x, cfg, rng)
    confident = np.flatnonzero(confidence >= cfg.confidence_threshold)
    if confident.size == 0:
        return None
    pseudo = ad.stop_gradient(original)[confident]
    return (mse_loss(first[confident], pseudo) + mse_loss(second[confident], pseudo)) * 0.5


def temporal_loss(predictions: Tensor) -> Tensor:
    """Smoothness between consecutive windows plus agreement on shared target days.

    predictions: [N x delta] ordered by window start.
    """
    current, following = predictions[:-1], predictions[1:]
    loss = mse_loss(following, current)
    if predictions.shape[1] > 1:
        loss = loss + mse_loss(current[:, 1:], following[:, :-1])
    return loss


def _temporal_objective(params: ModelParams, x: np.ndarray, cfg: AdaptConfig,
                        rng: np.random.Generator) -> Optional[Tensor]:
    if x.shape[0] < 2:
        return None
    return temporal_loss(_model_forward(params, x, False, False, None, cfg.grl_lambda)[0])


Objective = Callable[[ModelParams, np.ndarray, AdaptConfig, np.random.Generator], Optional[Tensor]]


def _adapt(params: ModelParams, inputs: np.ndarray, cfg: AdaptConfig, objective: Objective,
           batch_size: Optional[int]) -> AdaptationResult:
    """Shared test-time loop: inference-mode forward, Adam at lr_tta, fixed per-batch noise."""
    if inputs.shape[0] == 0:
        raise ConfigError("Test-time adaptation needs at least one test window", field='windows')
    adapted = params.copy()
    inputs = _cast(adapted, inputs)
    optimizer = ad.Adam(adapted.parameters(include_domain=False), lr=cfg.lr_tta)
    size = batch_size or inputs.shape[0]

    epoch_losses = []
    for epoch in range(cfg.tta_epochs):
        losses = []
        for batch_index, start in enumerate(range(0, inputs.shape[0], size)):
            rng = np.random.default_rng([cfg.seed, batch_index])
            adapted.zero_grad()
            loss = objective(adapted, inputs[start:start + size], cfg, rng)
            if loss is None:
                continue
            ad.backward(loss)
            optimizer.step()
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
        logger.debug("TTA epoch %d: loss %.6f", epoch, epoch_losses[-1])
    return AdaptationResult(params=adapted, epoch_losses=epoch_losses)


def tta_consistency(params: ModelParams, inputs: np.ndarray, cfg: AdaptConfig) -> AdaptationResult:
    """Agreement between predictions on the original and two noisy copies of each window.

    Only inputs are visible; labels never enter this path.
    """
    return _adapt(params, inputs, cfg, _consistency_objective, cfg.batch_size)


def tta_entropy(params: ModelParams, inputs: np.ndarray, cfg: AdaptConfig) -> AdaptationResult:
    """Pseudo-label fitting on windows whose augmentation spread is small.

    Returns the model unchanged (with a warning) when no window reaches the
    confidence threshold.
    """
    if inputs.shape[0] == 0:
        raise ConfigError("Test-time adaptation needs at least one test window", field='windows')
    confidence, _ = augmentation_confidence(params, _cast(params, inputs), cfg, np.random.default_rng([cfg.seed, 0]))
    if not np.any(confidence >= cfg.confidence_threshold):
        logger.warning("Entropy TTA: no window reaches confidence %.2f; model unchanged",
                       cfg.confidence_threshold)
        return AdaptationResult(params=params, epoch_losses=[], skipped=True)
    return _adapt(params, inputs, cfg, _entropy_objective, cfg.batch_size)


def tta_temporal(params: ModelParams, inputs: np.ndarray, cfg: AdaptConfig) -> AdaptationResult:
    """Smooth predictions over consecutive windows of the test subject.

    Inputs must be ordered by window start. Fewer than two windows is a no-op
    with a warning.
    """
    if inputs.shape[0] < 2:
        logger.warning("Temporal TTA needs at least 2 windows, got %d; model unchanged", inputs.shape[0])
        return AdaptationResult(params=params, epoch_losses=[], skipped=True)
    return _adapt(params, inputs, cfg, _temporal_objective, None)


TTA_FUNCTIONS: Dict[str, Callable[[ModelParams, np.ndarray, AdaptConfig], AdaptationResult]] = {
    'consistency': tta_consistency,
    'entropy': tta_entropy,
    'temporal': tta_temporal,
}


def phase1_config(cfg: AdaptConfig) -> AdaptConfig:
    """Phase-1 settings of a mode: the domain loss is off (alpha=0) for none and test-only."""
    return cfg if cfg.mode in ('train-only', 'both') else replace(cfg, alpha=0.0)


def run_mode(fold: PreparedFold, cfg: AdaptConfig, model_config: ModelConfig,
             kind: str = 'adaptive') -> ModeOutcome:
    """Phase 1, optional Phase 2 and Phase-3 inference for one operating mode.

    none: alpha=0, no TTA; train-only: alpha>0, no TTA; test-only: alpha=0 + TTA;
    both: alpha>0 + TTA. The recurrent baseline ignores both adaptation stages.
    """
    effective = phase1_config(cfg)
    params = init_model(model_config, seed=cfg.seed, kind=kind)
    trained, history = train_phase1(params, fold.train, fold.val, effective)

    adaptation = None
    final = trained
    if kind == 'adaptive' and cfg.uses_tta:
        adaptation = TTA_FUNCTIONS[cfg.tta_method](trained, fold.test_inputs, cfg)
        final = adaptation.params

    test_predictions = predict(final, _cast(final, fold.test_inputs))
    val_predictions = predict(trained, _cast(trained, fold.val.x))
    return ModeOutcome(mode=cfg.mode if kind == 'adaptive' else 'baseline',
                       test_predictions=test_predictions, val_predictions=val_predictions,
                       history=history, adaptation=adaptation, params=final)
