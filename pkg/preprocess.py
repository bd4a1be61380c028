"""
Author: Perry Radau
Date: 2025-03-04
Brief description: Cleaning pipeline for daily sleep data (sentinels, anomalies, KNN imputation,
                   smoothing, min-max scaling and sliding windows)
Dependencies: Python 3.8+, numpy, pandas, scipy
Usage: preprocess_cohort(cohort, PreprocessConfig()) then scale_series() and make_windows() per split
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy.signal import savgol_coeffs

from cohort import STAGES, TARGET_NAME, Cohort, SubjectSeries
from errors import ConfigError, ContractError, ImputationError, StageError, StateError

logger = logging.getLogger(__name__)

SENTINEL_SCORES = (-1.0, 0.0)

EXP_LAMBDA = 0.3
WMA_WEIGHTS = np.array([1.0, 2.0, 3.0, 2.0, 1.0]) / 9.0
ADAPTIVE_WINDOW = 5
ADAPTIVE_BOUNDS = (0.1, 0.9)
SAVGOL_WINDOW = 5
SAVGOL_ORDER = 2

SMOOTHING_METHODS = ('exponential', 'wma', 'adaptive', 'savgol', 'ensemble')

# Feature group -> smoother. Mirrors the "smoothing" section of config.json.
DEFAULT_SMOOTHING_GROUPS: Dict[str, List[str]] = {
    'exponential': ['RH', 'MH', 'XH'],
    'wma': ['TK', 'TS', 'TD', 'HA', 'AS', 'MI'],
    'adaptive': ['DS', 'LS', 'RS', 'AW', 'AC', 'RM', 'SS', 'SA'],
    'savgol': ['AWR', 'HRV', 'LRV', 'LR', 'HR', 'AR'],
}
DEFAULT_TARGET_SMOOTHER = 'ensemble'
DEFAULT_FALLBACK_SMOOTHER = 'wma'


@dataclass
class PreprocessConfig:
    """Knobs of the cleaning pipeline.

    Attributes:
        iqr_multiplier: Fence width m in [Q1 - m*IQR, Q3 + m*IQR]
        roll_window: Centered rolling-mean window (days)
        roll_threshold: Deviation from the rolling mean flagged as anomalous (raw units)
        knn_k: Neighbours used by impute_knn
        context_weight: Weight of the day-position context column in KNN distances
        smoothing_groups: Smoother name -> feature names
        target_smoother: Smoother applied to the sleep score
        fallback_smoother: Smoother for features not listed in any group
    """
    iqr_multiplier: float = 1.0
    roll_window: int = 5
    roll_threshold: float = 30.0
    knn_k: int = 3
    context_weight: float = 1.0
    smoothing_groups: Dict[str, List[str]] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_SMOOTHING_GROUPS.items()})
    target_smoother: str = DEFAULT_TARGET_SMOOTHER
    fallback_smoother: str = DEFAULT_FALLBACK_SMOOTHER

    def __post_init__(self) -> None:
        violations = []
        if self.iqr_multiplier < 0:
            violations.append("iqr_multiplier must be non-negative")
        if self.roll_window < 1:
            violations.append("roll_window must be >= 1")
        if self.knn_k < 1:
            violations.append("knn_k must be >= 1")
        for method in [*self.smoothing_groups, self.target_smoother, self.fallback_smoother]:
            if method not in SMOOTHING_METHODS:
                violations.append(f"unknown smoother: {method}")
        if violations:
            raise ConfigError(violations[0], field='preprocess', violations=violations)

    def smoother_for(self, feature_name: str) -> str:
        """Smoother routed to a feature (fallback when unlisted)."""
        if feature_name == TARGET_NAME:
            return self.target_smoother
        for method, names in self.smoothing_groups.items():
            if feature_name in names:
                return method
        return self.fallback_smoother


@dataclass
class AnomalyReport:
    """Cells flagged by one detector.

    Attributes:
        method: 'iqr' or 'rolling'
        flagged: Column name -> sorted list of (subject_id, row) cells
    """
    method: str
    flagged: Dict[str, List[Tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in ('iqr', 'rolling'):
            raise ConfigError(f"Unknown anomaly method: {self.method}", field='method')

    def add(self, column: str, subject_id: int, rows: Set[int]) -> None:
        """Record flagged rows for one subject column."""
        if not rows:
            return
        cells = set(self.flagged.get(column, []))
        cells.update((subject_id, int(r)) for r in rows)
        self.flagged[column] = sorted(cells)

    @property
    def total(self) -> int:
        return sum(len(cells) for cells in self.flagged.values())

    def to_dict(self) -> Dict:
        return {
            'method': self.method,
            'total': self.total,
            'flagged': {name: [list(cell) for cell in cells] for name, cells in self.flagged.items()},
        }


@dataclass(frozen=True)
class ScalerState:
    """Per-feature min/max fitted on one split."""
    data_min: np.ndarray
    data_max: np.ndarray

    def __post_init__(self) -> None:
        if self.data_min.shape != self.data_max.shape:
            raise ContractError("Scaler min/max shapes differ")
        if np.any(self.data_max < self.data_min):
            raise ContractError("Scaler max must be >= min")

    @property
    def n_features(self) -> int:
        return self.data_min.shape[0]

    def to_dict(self) -> Dict:
        return {'data_min': self.data_min.tolist(), 'data_max': self.data_max.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> 'ScalerState':
        return cls(data_min=np.asarray(data['data_min'], dtype=np.float64),
                   data_max=np.asarray(data['data_max'], dtype=np.float64))


@dataclass(frozen=True)
class WindowSample:
    """One supervised sample: w input days, delta target days."""
    x: np.ndarray
    y: np.ndarray
    domain: int
    t0: int


@dataclass
class WindowSet:
    """Stacked sliding-window samples.

    Attributes:
        x: Inputs [N x w x F]
        y: Targets [N x delta]
        domain: Domain label per sample [N]
        t0: Start row per sample [N]
        window: Input length w
        horizon: Forecast length delta
        stride: Step between samples
    """
    x: np.ndarray
    y: np.ndarray
    domain: np.ndarray
    t0: np.ndarray
    window: int
    horizon: int
    stride: int = 1

    def __post_init__(self) -> None:
        if self.window < 1 or self.horizon < 1 or self.stride < 1:
            raise ConfigError("window, horizon and stride must be >= 1", field='window')
        n = self.x.shape[0]
        if self.y.shape[0] != n or self.domain.shape[0] != n or self.t0.shape[0] != n:
            raise ContractError("WindowSet arrays disagree on sample count")
        if np.isnan(self.x).any() or np.isnan(self.y).any():
            raise ContractError("WindowSet contains missing values")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[2]

    @property
    def samples(self) -> Iterator[WindowSample]:
        for i in range(len(self)):
            yield WindowSample(x=self.x[i], y=self.y[i], domain=int(self.domain[i]), t0=int(self.t0[i]))

    def subset(self, index: np.ndarray) -> 'WindowSet':
        """Samples at the given positions."""
        return WindowSet(x=self.x[index], y=self.y[index], domain=self.domain[index],
                         t0=self.t0[index], window=self.window, horizon=self.horizon,
                         stride=self.stride)

    @classmethod
    def empty(cls, window: int, horizon: int, n_features: int, stride: int = 1) -> 'WindowSet':
        return cls(x=np.zeros((0, window, n_features)), y=np.zeros((0, horizon)),
                   domain=np.zeros(0, dtype=np.int64), t0=np.zeros(0, dtype=np.int64),
                   window=window, horizon=horizon, stride=stride)

    @classmethod
    def concat(cls, sets: Sequence['WindowSet']) -> 'WindowSet':
        """Join window sets that share w, delta and stride."""
        if not sets:
            raise ContractError("Cannot concatenate zero window sets")
        first = sets[0]
        for other in sets[1:]:
            if (other.window, other.horizon, other.stride) != (first.window, first.horizon, first.stride):
                raise ContractError("Window sets differ in w/delta/stride")
        return cls(x=np.concatenate([s.x for s in sets]), y=np.concatenate([s.y for s in sets]),
                   domain=np.concatenate([s.domain for s in sets]),
                   t0=np.concatenate([s.t0 for s in sets]),
                   window=first.window, horizon=first.horizon, stride=first.stride)


def _require_stage(series: SubjectSeries, expected: str, operation: str) -> None:
    if series.stage != expected:
        raise StageError(f"{operation} expects stage '{expected}', subject {series.subject_id} "
                         f"is at '{series.stage}'")


def _next_stage(stage: str) -> str:
    return STAGES[STAGES.index(stage) + 1]


def mark_missing(series: SubjectSeries) -> SubjectSeries:
    """Turn sleep-score sentinels (-1 and 0) into missing values.

    Feature columns are left untouched.
    """
    _require_stage(series, 'raw', 'mark_missing')
    target = series.target.copy()
    target[np.isin(target, SENTINEL_SCORES)] = np.nan
    return series.with_values(series.features, target, stage='marked')


def detect_anomalies_iqr(column: np.ndarray, multiplier: float = 1.0) -> Set[int]:
    """Flag values outside [Q1 - m*IQR, Q3 + m*IQR].

    Quartiles use linear interpolation between order statistics. Missing
    entries are ignored; returned indices refer to the input vector.

    Args:
        column: Values, NaN for missing
        multiplier: Fence width m

    Returns:
        Set of flagged indices (empty with a warning when fewer than 4 values)
    """
    values = np.asarray(column, dtype=np.float64)
    observed = np.flatnonzero(~np.isnan(values))
    if observed.size < 4:
        logger.warning("IQR detection skipped: %d observed values (need 4)", observed.size)
        return set()

    q1, q3 = np.quantile(values[observed], [0.25, 0.75], method='linear')
    spread = q3 - q1
    lower, upper = q1 - multiplier * spread, q3 + multiplier * spread
    outside = (values[observed] < lower) | (values[observed] > upper)
    return set(observed[outside].tolist())


def detect_anomalies_rolling(column: np.ndarray, window: int = 5,
                             threshold: float = 30.0) -> Set[int]:
    """Flag values deviating from a centered rolling mean by more than ``threshold``.

    Edges use partial windows (at least one observation).
    """
    if window < 1:
        raise ConfigError("rolling window must be >= 1", field='roll_window')
    series = pd.Series(np.asarray(column, dtype=np.float64))
    rolling_mean = series.rolling(window, center=True, min_periods=1).mean()
    deviation = (series - rolling_mean).abs()
    flagged = deviation > threshold
    return set(np.flatnonzero(flagged.to_numpy()).tolist())


def impute_knn(matrix: np.ndarray, k: int = 3, context: Optional[np.ndarray] = None,
               context_weight: float = 1.0,
               column_names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Fill missing cells with the mean of the k nearest rows.

    Distances are nan-aware Euclidean over co-observed columns, each column
    divided by its standard deviation, then rescaled by
    ``sqrt(n_columns / n_co_observed)``. An optional context matrix (always
    observed) joins the distance with ``context_weight``. Only rows where the
    column is observed are donors; ties go to the lower row index.

    Args:
        matrix: [rows x F] with NaN for missing
        k: Number of neighbours
        context: Optional [rows x C] auxiliary columns
        context_weight: Multiplier on scaled context differences
        column_names: Names used in error messages

    Returns:
        np.ndarray: Copy of ``matrix`` with no missing cells

    Raises:
        ImputationError: If a column has no observed value
    """
    data = np.asarray(matrix, dtype=np.float64)
    if data.ndim != 2:
        raise ContractError(f"impute_knn expects a 2-D matrix, got shape {data.shape}")
    n_rows, n_cols = data.shape
    names = list(column_names) if column_names is not None else [str(c) for c in range(n_cols)]

    observed = ~np.isnan(data)
    for col in range(n_cols):
        if not observed[:, col].any():
            raise ImputationError(f"Column {names[col]} has no observed values", column=names[col])
    if observed.all():
        return data.copy()

    sigma = np.nanstd(data, axis=0)
    sigma = np.where(sigma > 0, sigma, 1.0)
    scaled = data / sigma
    scaled_obs = observed

    if context is not None:
        ctx = np.asarray(context, dtype=np.float64).reshape(n_rows, -1)
        ctx_sigma = ctx.std(axis=0)
        ctx_sigma = np.where(ctx_sigma > 0, ctx_sigma, 1.0)
        scaled = np.column_stack([scaled, context_weight * ctx / ctx_sigma])
        scaled_obs = np.column_stack([observed, np.ones(ctx.shape, dtype=bool)])
    total_cols = scaled.shape[1]

    result = data.copy()
    for row in np.flatnonzero(~observed.all(axis=1)):
        shared = scaled_obs & scaled_obs[row]
        diff = np.where(shared, scaled - scaled[row], 0.0)
        count = shared.sum(axis=1)
        with np.errstate(divide='ignore', invalid='ignore'):
            distance = np.where(count > 0,
                                np.sqrt(total_cols / np.maximum(count, 1) * (diff ** 2).sum(axis=1)),
                                np.inf)

        for col in np.flatnonzero(~observed[row]):
            donors = np.flatnonzero(observed[:, col])
            order = np.lexsort((donors, distance[donors]))
            nearest = donors[order[:k]]
            result[row, col] = data[nearest, col].mean()

    return result


def _exponential(values: np.ndarray) -> np.ndarray:
    return pd.Series(values).ewm(alpha=EXP_LAMBDA, adjust=False).mean().to_numpy()


def _wma(values: np.ndarray) -> np.ndarray:
    half = len(WMA_WEIGHTS) // 2
    padded = np.pad(values, half)
    support = np.pad(np.ones_like(values), half)
    numerator = np.convolve(padded, WMA_WEIGHTS, mode='valid')
    denominator = np.convolve(support, WMA_WEIGHTS, mode='valid')
    return numerator / denominator


def _adaptive(values: np.ndarray) -> np.ndarray:
    global_sd = values.std()
    if global_sd == 0:
        rates = np.full(values.shape, ADAPTIVE_BOUNDS[0])
    else:
        local_sd = pd.Series(values).rolling(ADAPTIVE_WINDOW, center=True, min_periods=1).std(ddof=0)
        rates = np.clip(local_sd.to_numpy() / global_sd, *ADAPTIVE_BOUNDS)

    smoothed = np.empty_like(values)
    smoothed[0] = values[0]
    for t in range(1, len(values)):
        smoothed[t] = rates[t] * values[t] + (1.0 - rates[t]) * smoothed[t - 1]
    return smoothed


def _savgol(values: np.ndarray) -> np.ndarray:
    if len(values) < 3:
        return values.copy()
    half = SAVGOL_WINDOW // 2
    coeffs = savgol_coeffs(SAVGOL_WINDOW, SAVGOL_ORDER, use='dot')
    padded = np.pad(values, half, mode='reflect', reflect_type='odd')
    return np.correlate(padded, coeffs, mode='valid')


def smooth(column: np.ndarray, method: str) -> np.ndarray:
    """Apply one of the five smoothers to a fully observed column.

    Args:
        column: Values without missing entries
        method: exponential | wma | adaptive | savgol | ensemble

    Returns:
        np.ndarray: Smoothed copy, same length

    Raises:
        ConfigError: Unknown method
        ContractError: Column contains missing values
    """
    values = np.asarray(column, dtype=np.float64)
    if np.isnan(values).any():
        raise ContractError("smooth() requires a column without missing values")
    if values.size == 0:
        return values.copy()

    if method == 'exponential':
        return _exponential(values)
    if method == 'wma':
        return _wma(values)
    if method == 'adaptive':
        return _adaptive(values)
    if method == 'savgol':
        return _savgol(values)
    if method == 'ensemble':
        return (_exponential(values) + _wma(values) + _savgol(values)) / 3.0
    raise ConfigError(f"Unknown smoothing method: {method}", field='smoothing')


def flag_anomalies(cohort: Cohort, config: PreprocessConfig) -> Tuple[Cohort, List[AnomalyReport]]:
    """Run both detectors per subject and column and blank the union of flags.

    Detection runs on raw values, target column included.
    """
    iqr_report = AnomalyReport(method='iqr')
    rolling_report = AnomalyReport(method='rolling')
    names = [*cohort.feature_names, TARGET_NAME]

    flagged_subjects = []
    for series in cohort.subjects:
        _require_stage(series, 'marked', 'flag_anomalies')
        values = np.column_stack([series.features, series.target])
        for col, name in enumerate(names):
            iqr_rows = detect_anomalies_iqr(values[:, col], config.iqr_multiplier)
            rolling_rows = detect_anomalies_rolling(values[:, col], config.roll_window,
                                                    config.roll_threshold)
            iqr_report.add(name, series.subject_id, iqr_rows)
            rolling_report.add(name, series.subject_id, rolling_rows)
            rows = sorted(iqr_rows | rolling_rows)
            values[rows, col] = np.nan
        flagged_subjects.append(series.with_values(values[:, :-1], values[:, -1], stage='flagged'))

    logger.info("Anomalies flagged: %d (IQR), %d (rolling)", iqr_report.total, rolling_report.total)
    return cohort.replace_subjects(flagged_subjects), [iqr_report, rolling_report]


def day_position(n_days: int) -> np.ndarray:
    """Normalized row position in [0, 1] used as KNN context."""
    if n_days == 1:
        return np.zeros(1)
    return np.arange(n_days) / (n_days - 1)


def impute_cohort(cohort: Cohort, config: PreprocessConfig) -> Cohort:
    """Impute features across the pooled cohort and the target within each subject.

    Feature rows are pooled over subjects (inputs only) with day position as
    context. The target is imputed from the subject's own days so labels never
    cross subjects.
    """
    for series in cohort.subjects:
        _require_stage(series, 'flagged', 'impute_cohort')

    pooled = np.vstack([s.features for s in cohort.subjects])
    context = np.concatenate([day_position(s.n_days) for s in cohort.subjects])
    filled = impute_knn(pooled, k=config.knn_k, context=context,
                        context_weight=config.context_weight,
                        column_names=cohort.feature_names)

    imputed = []
    offset = 0
    for series in cohort.subjects:
        features = filled[offset:offset + series.n_days]
        offset += series.n_days
        own = np.column_stack([features, series.target])
        try:
            target = impute_knn(own, k=config.knn_k, context=day_position(series.n_days),
                                context_weight=config.context_weight,
                                column_names=[*cohort.feature_names, TARGET_NAME])[:, -1]
        except ImputationError as e:
            raise ImputationError(f"Subject {series.subject_id}: {e}", column=e.column)
        imputed.append(series.with_values(features, target, stage='imputed'))

    return cohort.replace_subjects(imputed)


def smooth_series(series: SubjectSeries, feature_names: Sequence[str],
                  config: PreprocessConfig) -> SubjectSeries:
    """Apply each column's routed smoother."""
    _require_stage(series, 'imputed', 'smooth_series')
    features = np.column_stack([
        smooth(series.features[:, col], config.smoother_for(name))
        for col, name in enumerate(feature_names)
    ]) if feature_names else series.features.copy()
    target = smooth(series.target, config.target_smoother)
    return series.with_values(features, target, stage='smoothed')


@dataclass
class PreprocessResult:
    """Cleaned cohort plus the anomaly reports that produced it."""
    cohort: Cohort
    reports: List[AnomalyReport]


def preprocess_cohort(cohort: Cohort, config: Optional[PreprocessConfig] = None) -> PreprocessResult:
    """Run mark_missing -> anomalies -> impute -> smooth over a raw cohort.

    Scaling and windowing are split-specific and happen later.
    """
    config = config or PreprocessConfig()
    marked = cohort.replace_subjects([mark_missing(s) for s in cohort.subjects])
    flagged, reports = flag_anomalies(marked, config)
    imputed = impute_cohort(flagged, config)
    smoothed = imputed.replace_subjects(
        [smooth_series(s, imputed.feature_names, config) for s in imputed.subjects])
    return PreprocessResult(cohort=smoothed, reports=reports)


def fit_scaler(split: np.ndarray) -> ScalerState:
    """Fit per-feature min/max on one split ([N x F] or [N])."""
    data = np.asarray(split, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] == 0:
        raise ContractError("Cannot fit a scaler on an empty split")
    return ScalerState(data_min=data.min(axis=0), data_max=data.max(axis=0))


def apply_scaler(state: Optional[ScalerState], matrix: np.ndarray) -> np.ndarray:
    """Map values to (v - min) / (max - min); degenerate features map to 0.

    Values outside the fitted range are not clamped.

    Raises:
        StateError: If the scaler was never fitted
    """
    if state is None:
        raise StateError("apply_scaler called before fit_scaler")
    data = np.asarray(matrix, dtype=np.float64)
    if data.shape[-1] != state.n_features and not (data.ndim == 1 and state.n_features == 1):
        raise ContractError(f"Scaler fitted on {state.n_features} features, got shape {data.shape}")
    if data.ndim == 1 and state.n_features == 1:
        data = data[:, None]
        return apply_scaler(state, data)[:, 0]

    span = state.data_max - state.data_min
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    return np.where(degenerate, 0.0, (data - state.data_min) / safe_span)


def invert_scaler(state: Optional[ScalerState], values: np.ndarray) -> np.ndarray:
    """Inverse of apply_scaler (degenerate features map back to their min)."""
    if state is None:
        raise StateError("invert_scaler called before fit_scaler")
    data = np.asarray(values, dtype=np.float64)
    if state.n_features == 1:
        return data * (state.data_max[0] - state.data_min[0]) + state.data_min[0]
    return data * (state.data_max - state.data_min) + state.data_min


def scale_series(series: SubjectSeries, feature_state: ScalerState,
                 target_state: ScalerState) -> SubjectSeries:
    """Scaled copy of a smoothed series."""
    _require_stage(series, 'smoothed', 'scale_series')
    return series.with_values(apply_scaler(feature_state, series.features),
                              apply_scaler(target_state, series.target), stage='scaled')


def make_windows(series: SubjectSeries, window: int, horizon: int, stride: int = 1,
                 domain: Optional[int] = None) -> WindowSet:
    """Slice a scaled series into (w-day input, delta-day target) samples.

    Rows are treated as contiguous in order; day gaps are not filled.

    Args:
        series: Fully imputed and scaled series
        window: Input length w
        horizon: Target length delta
        stride: Step between starts
        domain: Domain label (defaults to the subject id)

    Returns:
        WindowSet: Empty (with a warning) when T < w + delta
    """
    _require_stage(series, 'scaled', 'make_windows')
    if window < 1 or horizon < 1 or stride < 1:
        raise ConfigError("window, horizon and stride must be >= 1", field='window')
    label = series.subject_id if domain is None else domain

    starts = np.arange(0, series.n_days - window - horizon + 1, stride)
    if starts.size == 0:
        logger.warning("Subject %s: %d rows < w + delta = %d; no windows",
                       series.subject_id, series.n_days, window + horizon)
        return WindowSet.empty(window, horizon, series.n_features, stride)

    x = np.stack([series.features[t:t + window] for t in starts])
    y = np.stack([series.target[t + window:t + window + horizon] for t in starts])
    return WindowSet(x=x, y=y, domain=np.full(starts.size, label, dtype=np.int64),
                     t0=starts.astype(np.int64), window=window, horizon=horizon, stride=stride)
