"""
Author: Perry Radau
Date: 2025-03-14
Brief description: LOOCV orchestration, forecast metrics, trend statistics, uncertainty bands,
                   PCA domain-shift diagnostics, mode ablation, random search and the w x delta grid
Dependencies: Python 3.8+, numpy, pandas, scikit-learn
Usage: report = run_loocv(cohort, PipelineConfig(...)); report.summary('adaptive', 'both')
"""

import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split

from adapt import AdaptConfig, ModeOutcome, PreparedFold, remap_domains, run_mode
from cohort import Cohort, FoldSplit, SubjectSeries
from dataio import make_folds
from errors import ConfigError, ContractError, FoldError
from featselect import select_features
from model import ModelConfig, ModelParams, forward
from preprocess import (PreprocessConfig, ScalerState, WindowSet, fit_scaler, make_windows,
                        preprocess_cohort, scale_series)

logger = logging.getLogger(__name__)

METRICS = ('mse', 'mae', 'rmse')
WINDOW_GRID = (3, 5, 7, 9, 11)
HORIZON_GRID = (1, 3, 5, 7, 9)
SCALER_POLICIES = ('per-split', 'train')


# metrics

def compute_metrics(y: np.ndarray, yhat: np.ndarray) -> Dict[str, float]:
    """Mean squared error, mean absolute error and root mean squared error.

    Raises:
        ContractError: Length mismatch or empty input
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ContractError(f"compute_metrics: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise ContractError("compute_metrics: no values")
    errors = y - yhat
    mse = float(np.mean(errors ** 2))
    return {'mse': mse, 'mae': float(np.mean(np.abs(errors))), 'rmse': math.sqrt(mse)}


def _centered_rolling(values: np.ndarray, window: int):
    return pd.Series(np.asarray(values, dtype=np.float64)).rolling(window, center=True, min_periods=1)


def pearson(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """Pearson r, or None when either input has zero variance."""
    ac = a - a.mean()
    bc = b - b.mean()
    denom = math.sqrt(float((ac ** 2).sum() * (bc ** 2).sum()))
    if denom == 0.0:
        return None
    return float((ac * bc).sum() / denom)


def trend_correlation(y: np.ndarray, yhat: np.ndarray, window: int = 7) -> Optional[float]:
    """Pearson r between centered rolling means of y and yhat.

    Returns None (undefined) when either trend is constant.

    Raises:
        ContractError: Fewer values than the window or length mismatch
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ContractError("trend_correlation: length mismatch")
    if y.size < window:
        raise ContractError(f"trend_correlation needs at least {window} values, got {y.size}")
    return pearson(_centered_rolling(y, window).mean().to_numpy(),
                   _centered_rolling(yhat, window).mean().to_numpy())


def trend_direction_accuracy(y: np.ndarray, yhat: np.ndarray, tolerance: float = 1e-9) -> float:
    """Fraction of steps whose true and predicted changes share a sign.

    Changes within ``tolerance`` of zero count as zero; zero matches only zero.
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.size < 2:
        raise ContractError("trend_direction_accuracy needs two equal-length series of >= 2 values")

    def direction(values: np.ndarray) -> np.ndarray:
        delta = np.diff(values)
        return np.where(np.abs(delta) <= tolerance, 0, np.sign(delta))

    return float(np.mean(direction(y) == direction(yhat)))


def rolling_uncertainty(yhat: np.ndarray, window: int = 7) -> np.ndarray:
    """Centered rolling population standard deviation (edge windows shrink)."""
    if np.asarray(yhat).size == 0:
        raise ContractError("rolling_uncertainty needs at least one value")
    return _centered_rolling(yhat, window).std(ddof=0).to_numpy()


# PCA

@dataclass
class PCAResult:
    """Projection onto the leading principal components."""
    coordinates: np.ndarray
    components: np.ndarray
    explained: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    scale: np.ndarray


def pca_project(data: np.ndarray, dims: int = 2, standardize: bool = True, seed: int = 0,
                tol: float = 1e-10, max_iter: int = 10000) -> PCAResult:
    """Top principal components by power iteration with deflation.

    Each component's largest-magnitude loading is made positive. Explained
    fractions are eigenvalues over the covariance trace.

    Args:
        data: [N x F] rows
        dims: Components requested
        standardize: Scale columns to unit variance before the covariance
        seed: Start-vector seed
        tol: Residual tolerance ||C v - lambda v||
        max_iter: Iteration cap per component

    Returns:
        PCAResult (fewer components, with a warning, when the rank is lower)
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ContractError(f"pca_project needs at least 2 rows, got shape {X.shape}")
    if dims < 1 or dims > X.shape[1]:
        raise ContractError(f"dims must lie in [1, {X.shape[1]}], got {dims}")

    mean = X.mean(axis=0)
    scale = X.std(axis=0) if standardize else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale
    cov = Z.T @ Z / (Z.shape[0] - 1)
    trace = float(np.trace(cov))

    rng = np.random.default_rng(seed)
    residual = cov.copy()
    components, eigenvalues = [], []
    for _ in range(dims):
        vector = rng.standard_normal(X.shape[1])
        vector /= np.linalg.norm(vector)
        eigenvalue = 0.0
        for _ in range(max_iter):
            product = residual @ vector
            norm = np.linalg.norm(product)
            if norm == 0.0:
                break
            vector = product / norm
            eigenvalue = float(vector @ residual @ vector)
            if np.linalg.norm(residual @ vector - eigenvalue * vector) <= tol * max(trace, 1.0):
                break
        if trace == 0.0 or eigenvalue <= 1e-12 * trace:
            logger.warning("PCA: data rank below %d; returning %d components", dims, len(components))
            break
        if vector[np.argmax(np.abs(vector))] < 0:
            vector = -vector
        components.append(vector)
        eigenvalues.append(eigenvalue)
        residual = residual - eigenvalue * np.outer(vector, vector)

    components_arr = np.array(components).reshape(len(components), X.shape[1])
    eigen_arr = np.array(eigenvalues)
    explained = eigen_arr / trace if trace > 0 else np.zeros_like(eigen_arr)
    return PCAResult(coordinates=Z @ components_arr.T, components=components_arr, explained=explained,
                     eigenvalues=eigen_arr, mean=mean, scale=scale)


def window_means(cohort: Cohort, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-window feature means of every subject (stride 1).

    Returns:
        (means [N x F], subject id per row)
    """
    rows, labels = [], []
    for series in cohort.subjects:
        for start in range(0, series.n_days - window + 1):
            rows.append(series.features[start:start + window].mean(axis=0))
            labels.append(series.subject_id)
    if not rows:
        return np.zeros((0, len(cohort.feature_names))), np.zeros(0, dtype=np.int64)
    return np.array(rows), np.array(labels, dtype=np.int64)


# domain diagnostics

def domain_classifier_accuracy(features: np.ndarray, labels: np.ndarray, seed: int = 0,
                               test_fraction: float = 0.3) -> float:
    """Held-out accuracy of a logistic classifier predicting the domain from features."""
    features = np.asarray(features, dtype=np.float64)
    train_x, test_x, train_y, test_y = train_test_split(
        features, labels, test_size=test_fraction, random_state=seed, stratify=labels)
    mean, std = train_x.mean(axis=0), train_x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    classifier = LogisticRegression(max_iter=2000)
    classifier.fit((train_x - mean) / std, train_y)
    return float(classifier.score((test_x - mean) / std, test_y))


def domain_head_accuracy(params: ModelParams, windows: WindowSet) -> float:
    """Accuracy of the model's own domain classifier on labelled windows."""
    labels, _ = remap_domains(windows.domain)
    _, logits = forward(params, windows.x.astype(next(iter(params.weights.values())).dtype),
                        return_domain=True)
    return float(np.mean(np.argmax(logits.data, axis=1) == labels))


# reports

@dataclass
class FoldReport:
    """Outcome of one (fold, model, mode) run.

    Attributes:
        fold: Fold index
        test_id: Held-out subject
        val_id: Validation subject
        model: 'adaptive' or 'lstm'
        mode: Adaptation mode ('none' for the baseline)
        metrics: mse/mae/rmse on the normalized test targets
        trend_corr_val / trend_corr_test: Rolling-mean correlation (None when undefined)
        dir_acc_val / dir_acc_test: Trend direction accuracy
        predictions: Rows (day, true, predicted, rolling std) of the first horizon entry
        selected_features: Names used by the fold
        history: TrainHistory as a dict
        tta_losses: Per-epoch adaptation losses
    """
    fold: int
    test_id: int
    val_id: int
    model: str
    mode: str
    metrics: Dict[str, float]
    trend_corr_val: Optional[float]
    trend_corr_test: Optional[float]
    dir_acc_val: float
    dir_acc_test: float
    predictions: List[Tuple[int, float, float, float]] = field(default_factory=list)
    selected_features: List[str] = field(default_factory=list)
    history: Dict = field(default_factory=dict)
    tta_losses: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if abs(self.metrics['rmse'] - math.sqrt(self.metrics['mse'])) > 1e-9:
            raise ContractError("rmse must equal sqrt(mse)")
        for value in (self.dir_acc_val, self.dir_acc_test):
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"direction accuracy outside [0, 1]: {value}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class CohortReport:
    """All fold reports of one LOOCV run plus recorded failures."""
    folds: List[FoldReport]
    failures: List[Dict] = field(default_factory=list)

    def select(self, model: str, mode: str) -> List[FoldReport]:
        return [f for f in self.folds if f.model == model and f.mode == mode]

    def combinations(self) -> List[Tuple[str, str]]:
        seen: List[Tuple[str, str]] = []
        for f in self.folds:
            if (f.model, f.mode) not in seen:
                seen.append((f.model, f.mode))
        return seen

    def summary(self, model: str, mode: str) -> Dict[str, Dict[str, float]]:
        """Per-metric mean and median across folds."""
        reports = self.select(model, mode)
        out = {}
        for metric in METRICS:
            values = [r.metrics[metric] for r in reports]
            out[metric] = {'mean': float(np.mean(values)), 'median': float(np.median(values))} if values else {}
        return out

    def radar_rows(self) -> List[Dict]:
        """Rows (subject, metric, model, mode, value) copied from the fold reports."""
        return [{'subject': f.test_id, 'metric': metric, 'model': f.model, 'mode': f.mode,
                 'value': f.metrics[metric]}
                for f in self.folds for metric in METRICS]

    def to_dict(self) -> Dict:
        return {
            'folds': [f.to_dict() for f in self.folds],
            'summary': {f'{model}/{mode}': self.summary(model, mode) for model, mode in self.combinations()},
            'failures': self.failures,
        }


# pipeline

@dataclass
class PipelineConfig:
    """Everything one LOOCV run needs.

    Attributes:
        window / horizon / stride: Sliding-window shape
        preprocess: Cleaning settings
        selection_method: correlation | mi | rfe | ensemble
        target_k: Features kept
        global_selection: Select once on the whole cohort instead of per fold
        model: ModelConfig keyword arguments other than the data-derived ones
        adapt: Training/adaptation settings (its mode is the primary mode)
        modes: Modes evaluated per fold
        include_baseline: Also train the recurrent baseline
        trend_window: Rolling window of the trend correlation
        uncertainty_window: Rolling window of the prediction band
        scaler_policy: 'per-split' or 'train'
        val_policy / fixed_val_id: Validation-subject choice
        jobs: Worker processes across folds
    """
    window: int = 3
    horizon: int = 1
    stride: int = 1
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    selection_method: str = 'ensemble'
    target_k: int = 15
    global_selection: bool = False
    model: Dict = field(default_factory=dict)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    modes: Tuple[str, ...] = ('both',)
    include_baseline: bool = True
    trend_window: int = 7
    uncertainty_window: int = 7
    scaler_policy: str = 'per-split'
    val_policy: str = 'next-subject'
    fixed_val_id: Optional[int] = None
    jobs: int = 1

    def __post_init__(self) -> None:
        self.modes = tuple(self.modes)
        violations = []
        if self.scaler_policy not in SCALER_POLICIES:
            violations.append(f"scaler_policy must be one of {list(SCALER_POLICIES)}")
        if self.target_k < 1:
            violations.append("target_k must be >= 1")
        if self.jobs < 1:
            violations.append("jobs must be >= 1")
        for mode in self.modes:
            try:
                replace(self.adapt, mode=mode)
            except ConfigError as e:
                violations.extend(e.violations)
        if violations:
            raise ConfigError(violations[0], field='evaluation', violations=violations)


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _stack_split(series_list: Sequence[SubjectSeries], selected: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    features = np.vstack([s.features[:, selected] for s in series_list])
    target = np.concatenate([s.target for s in series_list])
    return features, target


def scale_split(series_list: Sequence[SubjectSeries], selected: Sequence[int],
                 states: Optional[Tuple[ScalerState, ScalerState]]) -> Tuple[List[SubjectSeries], Tuple[ScalerState, ScalerState]]:
    """Scale a split with its own scalers (states None) or with given ones."""
    restricted = [s.with_values(s.features[:, selected], s.target) for s in series_list]
    if states is None:
        features, target = _stack_split(restricted, range(len(selected)))
        states = (fit_scaler(features), fit_scaler(target))
    return [scale_series(s, states[0], states[1]) for s in restricted], states


def cut_windows(series_list: Sequence[SubjectSeries], config: PipelineConfig, clip: bool) -> WindowSet:
    sets = [make_windows(s, config.window, config.horizon, config.stride, domain=s.subject_id)
            for s in series_list]
    windows = WindowSet.concat(sets)
    if clip:
        windows = replace(windows, x=np.clip(windows.x, 0.0, 1.0))
    return windows


def _fold_report(data: 'FoldData', outcome: ModeOutcome, model: str, mode: str,
                 config: PipelineConfig) -> FoldReport:
    test, val = data.test, data.val
    test_true, test_pred = test.y[:, 0], outcome.test_predictions[:, 0]
    val_true, val_pred = val.y[:, 0], outcome.val_predictions[:, 0]

    def safe_trend(a, b):
        return trend_correlation(a, b, config.trend_window) if a.size >= config.trend_window else None

    def safe_direction(a, b):
        return trend_direction_accuracy(a, b) if a.size >= 2 else 0.0

    band = rolling_uncertainty(test_pred, config.uncertainty_window)
    days = data.test_series.days[test.t0 + config.window]
    predictions = [(int(d), float(t), float(p), float(s)) for d, t, p, s in zip(days, test_true, test_pred, band)]

    return FoldReport(
        fold=data.fold_index, test_id=data.split.test_id, val_id=data.split.val_id, model=model, mode=mode,
        metrics=compute_metrics(test.y, outcome.test_predictions),
        trend_corr_val=safe_trend(val_true, val_pred), trend_corr_test=safe_trend(test_true, test_pred),
        dir_acc_val=safe_direction(val_true, val_pred), dir_acc_test=safe_direction(test_true, test_pred),
        predictions=predictions, selected_features=data.feature_names, history=outcome.history.to_dict(),
        tta_losses=list(outcome.adaptation.epoch_losses) if outcome.adaptation else [],
    )


@dataclass
class FoldData:
    """Scaled, windowed splits of one fold plus what produced them."""
    fold_index: int
    split: FoldSplit
    seed: int
    selected: List[int]
    feature_names: List[str]
    feature_state: ScalerState
    target_state: ScalerState
    train: WindowSet
    val: WindowSet
    test: WindowSet
    test_series: SubjectSeries
    model_config: ModelConfig

    @property
    def prepared(self) -> PreparedFold:
        return PreparedFold(train=self.train, val=self.val, test_inputs=self.test.x)


def prepare_fold(cohort: Cohort, split: FoldSplit, fold_index: int, config: PipelineConfig,
                 selected: Optional[List[int]] = None) -> FoldData:
    """Select features on the train split, scale every split and cut windows.

    Train windows carry the subject id as domain label.
    """
    train_series = [cohort.get(i) for i in sorted(split.train_ids)]
    val_series = cohort.get(split.val_id)
    test_series = cohort.get(split.test_id)
    seed = _fold_seed(config.adapt.seed, fold_index)

    if selected is None:
        X, y = _stack_split(train_series, range(len(cohort.feature_names)))
        selected = select_features(X, y, config.selection_method, config.target_k, seed=seed).selected
    selected = list(selected)
    names = [cohort.feature_names[i] for i in selected]

    train_scaled, train_states = scale_split(train_series, selected, None)
    shared = train_states if config.scaler_policy == 'train' else None
    val_scaled, _ = scale_split([val_series], selected, shared)
    test_scaled, _ = scale_split([test_series], selected, shared)
    clip = config.scaler_policy == 'train'

    train = cut_windows(train_scaled, config, clip=False)
    val = cut_windows(val_scaled, config, clip=clip)
    test = cut_windows(test_scaled, config, clip=clip)
    if len(train) == 0 or len(val) == 0 or len(test) == 0:
        raise ConfigError(f"Fold {fold_index}: a split produced no windows for w={config.window}, "
                          f"delta={config.horizon}", field='window')

    model_config = ModelConfig(window=config.window, n_features=len(selected), horizon=config.horizon,
                               n_domains=len(split.train_ids), **config.model)
    return FoldData(fold_index=fold_index, split=split, seed=seed, selected=selected, feature_names=names,
                    feature_state=train_states[0], target_state=train_states[1], train=train, val=val,
                    test=test, test_series=test_series, model_config=model_config)


def run_fold(cohort: Cohort, split: FoldSplit, fold_index: int, config: PipelineConfig,
             selected: Optional[List[int]] = None) -> List[FoldReport]:
    """Prepare, train and evaluate one fold for every configured mode.

    Test labels are read only when computing the returned metrics.
    """
    data = prepare_fold(cohort, split, fold_index, config, selected)
    reports = []
    for mode in config.modes:
        outcome = run_mode(data.prepared, replace(config.adapt, mode=mode, seed=data.seed), data.model_config)
        reports.append(_fold_report(data, outcome, 'adaptive', mode, config))
    if config.include_baseline:
        outcome = run_mode(data.prepared, replace(config.adapt, mode='none', seed=data.seed),
                           data.model_config, kind='lstm')
        reports.append(_fold_report(data, outcome, 'lstm', 'none', config))
    logger.info("Fold %d (test subject %d) done", fold_index, split.test_id)
    return reports


def _run_fold_safely(args) -> Tuple[int, List[FoldReport], Optional[str]]:
    cohort, split, fold_index, config, selected = args
    try:
        return fold_index, run_fold(cohort, split, fold_index, config, selected), None
    except Exception as e:  # recorded per fold
        logger.warning("Fold %d (test subject %d) failed: %s", fold_index, split.test_id, e)
        return fold_index, [], f"{type(e).__name__}: {e}"


def ensure_preprocessed(cohort: Cohort, config: PipelineConfig) -> Cohort:
    """Run the cleaning pipeline unless the cohort is already smoothed."""
    stages = {s.stage for s in cohort.subjects}
    if stages == {'smoothed'}:
        return cohort
    return preprocess_cohort(cohort, config.preprocess).cohort


def run_loocv(cohort: Cohort, config: PipelineConfig) -> CohortReport:
    """Leave-one-subject-out evaluation of every configured mode (and the baseline).

    Raises:
        FoldError: If every fold failed
    """
    cohort = ensure_preprocessed(cohort, config)
    splits = make_folds(cohort, config.val_policy, config.fixed_val_id)

    selected = None
    if config.global_selection:
        X, y = _stack_split(cohort.subjects, range(len(cohort.feature_names)))
        selected = select_features(X, y, config.selection_method, config.target_k,
                                   seed=config.adapt.seed).selected

    tasks = [(cohort, split, i, config, selected) for i, split in enumerate(splits)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_fold_safely, tasks))
    else:
        results = [_run_fold_safely(task) for task in tasks]

    folds: List[FoldReport] = []
    failures = []
    for fold_index, reports, error in sorted(results, key=lambda r: r[0]):
        folds.extend(reports)
        if error:
            failures.append({'fold': fold_index, 'test_id': splits[fold_index].test_id, 'error': error})
    if not folds:
        raise FoldError(f"All {len(splits)} folds failed; first error: {failures[0]['error']}")
    return CohortReport(folds=folds, failures=failures)


def run_ablation(cohort: Cohort, config: PipelineConfig, seeds: Sequence[int] = (0,)) -> List[Dict]:
    """Evaluate the four modes on the same folds and seeds.

    Returns:
        One row per mode: mean/median of mse, mae and rmse over folds x seeds
    """
    modes = ('none', 'train-only', 'test-only', 'both')
    per_mode: Dict[str, List[Dict[str, float]]] = defaultdict(list)
    cohort = ensure_preprocessed(cohort, config)
    for seed in seeds:
        run_config = replace(config, modes=modes, include_baseline=False,
                             adapt=replace(config.adapt, seed=seed))
        report = run_loocv(cohort, run_config)
        for fold in report.folds:
            per_mode[fold.mode].append(fold.metrics)

    rows = []
    for mode in modes:
        metrics = per_mode.get(mode, [])
        row: Dict = {'mode': mode, 'n': len(metrics)}
        for metric in METRICS:
            values = [m[metric] for m in metrics]
            row[f'mean_{metric}'] = float(np.mean(values)) if values else float('nan')
            row[f'median_{metric}'] = float(np.median(values)) if values else float('nan')
        rows.append(row)
    return rows


def apply_hyperparameters(config: PipelineConfig, sample: Dict) -> PipelineConfig:
    """PipelineConfig with a sampled hyperparameter set applied."""
    adapt_keys = {'batch_size', 'alpha'}
    model_part = {k: v for k, v in sample.items() if k not in adapt_keys}
    adapt_part = {k: v for k, v in sample.items() if k in adapt_keys}
    return replace(config, model={**config.model, **model_part}, adapt=replace(config.adapt, **adapt_part))


def random_search(cohort: Cohort, config: PipelineConfig, trials: int, seed: int = 0,
                  sampler: Optional[Callable[[np.random.Generator], Dict]] = None) -> List[Dict]:
    """Seeded random search over the hyperparameter space by mean LOOCV RMSE.

    Returns:
        Trial rows sorted best first: {trial, params, mean_rmse}
    """
    if sampler is None:
        from run_config import sample_hyperparameters
        sampler = sample_hyperparameters
    if trials < 1:
        raise ConfigError("trials must be >= 1", field='trials')

    rng = np.random.default_rng(seed)
    cohort = ensure_preprocessed(cohort, config)
    rows = []
    for trial in range(trials):
        sample = sampler(rng)
        report = run_loocv(cohort, replace(apply_hyperparameters(config, sample), include_baseline=False))
        mean_rmse = report.summary('adaptive', config.modes[0])['rmse']['mean']
        rows.append({'trial': trial, 'params': sample, 'mean_rmse': mean_rmse})
        logger.info("Trial %d: mean RMSE %.4f", trial, mean_rmse)
    return sorted(rows, key=lambda r: (r['mean_rmse'], r['trial']))


def run_grid(cohort: Cohort, config: PipelineConfig, windows: Sequence[int] = WINDOW_GRID,
             horizons: Sequence[int] = HORIZON_GRID) -> List[Dict]:
    """LOOCV RMSE for every (w, delta) cell and model.

    Returns:
        Rows {window, horizon, model, mean_rmse, median_rmse, folds}
    """
    cohort = ensure_preprocessed(cohort, config)
    rows = []
    for window in windows:
        for horizon in horizons:
            report = run_loocv(cohort, replace(config, window=window, horizon=horizon))
            for model, mode in report.combinations():
                summary = report.summary(model, mode)['rmse']
                rows.append({'window': window, 'horizon': horizon, 'model': model, 'mode': mode,
                             'mean_rmse': summary['mean'], 'median_rmse': summary['median'],
                             'folds': len(report.select(model, mode))})
            logger.info("Grid cell w=%d delta=%d done", window, horizon)
    return rows
