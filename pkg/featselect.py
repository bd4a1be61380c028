"""
Author: Perry Radau
Date: 2025-03-05
Brief description: Feature selection (correlation, mutual information, random-forest RFE, ensemble voting)
Dependencies: Python 3.8+, numpy, scipy, scikit-learn
Usage: select_features(X, y, method='ensemble', target_k=15, seed=0)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.ensemble import RandomForestRegressor

from errors import ConfigError, ContractError

logger = logging.getLogger(__name__)

SELECTION_METHODS = ('correlation', 'mi', 'rfe', 'ensemble')
DEFAULT_TARGET_K = 15
CORRELATION_THRESHOLD = 0.05
MI_BINS = 8
FOREST_TREES = 100
FOREST_DEPTH = 6


@dataclass
class SelectionResult:
    """Outcome of one selection method.

    Attributes:
        method: correlation | mi | rfe | ensemble
        selected: Chosen feature indices, best first
        scores: Per-feature score (|r|, MI nats, elimination order or votes)
        ranking: Every feature index, best first
        votes: Per-feature vote counts (ensemble only)
        trace: Eliminated indices in order (rfe only)
        feature_names: Optional names for reporting
    """
    method: str
    selected: List[int]
    scores: np.ndarray
    ranking: List[int]
    votes: Optional[np.ndarray] = None
    trace: List[int] = field(default_factory=list)
    feature_names: Optional[List[str]] = None

    def __post_init__(self) -> None:
        if self.method not in SELECTION_METHODS:
            raise ConfigError(f"Unknown selection method: {self.method}", field='selection')
        if len(set(self.selected)) != len(self.selected):
            raise ContractError("Selected feature indices must be distinct")
        if not np.all(np.isfinite(self.scores)):
            raise ContractError("Selection scores must be finite")

    @property
    def selected_names(self) -> List[str]:
        if self.feature_names is None:
            return [str(i) for i in self.selected]
        return [self.feature_names[i] for i in self.selected]

    def to_dict(self) -> Dict:
        data = {
            'method': self.method,
            'selected': list(self.selected),
            'selected_names': self.selected_names,
            'scores': [float(s) for s in self.scores],
            'ranking': list(self.ranking),
        }
        if self.votes is not None:
            data['votes'] = [int(v) for v in self.votes]
        if self.trace:
            data['trace'] = list(self.trace)
        return data


@dataclass
class ForestModel:
    """Fitted random forest and its impurity-based importances."""
    estimator: RandomForestRegressor
    feature_importances: np.ndarray
    max_depth: int

    @property
    def trees(self) -> list:
        return list(self.estimator.estimators_)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.estimator.predict(X)


def _check_inputs(X: np.ndarray, y: np.ndarray) -> tuple:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ContractError(f"X {X.shape} and y {y.shape} do not align")
    if X.shape[0] < 2:
        raise ContractError("Feature selection needs at least 2 samples")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ContractError("Feature selection requires data without missing values")
    return X, y


def _stable_ranking(scores: np.ndarray) -> List[int]:
    """Indices by descending score, ties to the lower index."""
    return np.argsort(-scores, kind='stable').tolist()


def pearson_abs(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """|Pearson r| of every column with y; zero-variance columns score 0."""
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    denom = np.sqrt((xc ** 2).sum(axis=0) * (yc ** 2).sum())
    with np.errstate(divide='ignore', invalid='ignore'):
        r = np.where(denom > 0, (xc * yc[:, None]).sum(axis=0) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.abs(r)


def select_correlation(X: np.ndarray, y: np.ndarray, threshold: float = CORRELATION_THRESHOLD,
                       target_k: int = DEFAULT_TARGET_K) -> SelectionResult:
    """Rank by |Pearson r|, keep those above threshold, back-fill to target_k."""
    X, y = _check_inputs(X, y)
    scores = pearson_abs(X, y)
    ranking = _stable_ranking(scores)
    k = min(target_k, X.shape[1])

    passing = [f for f in ranking if scores[f] > threshold]
    if len(passing) < k:
        logger.info("Correlation: %d features above %.3f, back-filling to %d", len(passing), threshold, k)
    selected = (passing + [f for f in ranking if f not in passing])[:k]
    return SelectionResult(method='correlation', selected=selected, scores=scores, ranking=ranking)


def equal_frequency_bins(values: np.ndarray, bins: int = MI_BINS) -> np.ndarray:
    """Integer codes 0..bins-1 from average ranks (ties share a bin)."""
    ranks = rankdata(values, method='average')
    codes = np.floor((ranks - 1.0) * bins / len(values)).astype(np.int64)
    return np.clip(codes, 0, bins - 1)


def mutual_information(a_codes: np.ndarray, b_codes: np.ndarray, bins: int = MI_BINS) -> float:
    """Plug-in MI (nats) of two binned variables."""
    joint = np.bincount(a_codes * bins + b_codes, minlength=bins * bins).reshape(bins, bins)
    p_joint = joint / joint.sum()
    p_a = p_joint.sum(axis=1, keepdims=True)
    p_b = p_joint.sum(axis=0, keepdims=True)
    nonzero = p_joint > 0
    return float((p_joint[nonzero] * np.log(p_joint[nonzero] / (p_a @ p_b)[nonzero])).sum())


def select_mutual_info(X: np.ndarray, y: np.ndarray, target_k: int = DEFAULT_TARGET_K,
                       bins: int = MI_BINS) -> SelectionResult:
    """Top target_k features by equal-frequency-binned mutual information."""
    X, y = _check_inputs(X, y)
    if X.shape[0] < bins:
        raise ContractError(f"Mutual information needs at least {bins} samples")
    y_codes = equal_frequency_bins(y, bins)
    scores = np.array([mutual_information(equal_frequency_bins(X[:, f], bins), y_codes, bins)
                       for f in range(X.shape[1])])
    ranking = _stable_ranking(scores)
    return SelectionResult(method='mi', selected=ranking[:min(target_k, X.shape[1])],
                           scores=scores, ranking=ranking)


def fit_forest(X: np.ndarray, y: np.ndarray, n_trees: int = FOREST_TREES,
               max_depth: int = FOREST_DEPTH, seed: int = 0, n_jobs: Optional[int] = None) -> ForestModel:
    """Bootstrap forest with sqrt(F) features per split.

    Importances are normalized total variance reduction (all zero when no
    tree could split).
    """
    X, y = _check_inputs(X, y)
    estimator = RandomForestRegressor(n_estimators=n_trees, max_depth=max_depth,
                                      max_features='sqrt', bootstrap=True,
                                      random_state=seed, n_jobs=n_jobs)
    estimator.fit(X, y)
    importances = np.nan_to_num(np.asarray(estimator.feature_importances_, dtype=np.float64))
    return ForestModel(estimator=estimator, feature_importances=importances, max_depth=max_depth)


def select_rfe(X: np.ndarray, y: np.ndarray, target_k: int = DEFAULT_TARGET_K, seed: int = 0,
               n_trees: int = FOREST_TREES, n_jobs: Optional[int] = None) -> SelectionResult:
    """Recursive elimination of the least important feature, one per round.

    Ties drop the higher index. Scores are elimination order (later is
    better); survivors score above every eliminated feature, ordered by
    their final importance.
    """
    X, y = _check_inputs(X, y)
    n_features = X.shape[1]
    if n_features <= target_k:
        logger.warning("RFE: %d features <= target %d; keeping all", n_features, target_k)
        ranking = list(range(n_features))
        return SelectionResult(method='rfe', selected=ranking, scores=np.zeros(n_features),
                               ranking=ranking)

    surviving = list(range(n_features))
    trace: List[int] = []
    scores = np.zeros(n_features)
    importances = np.zeros(len(surviving))
    while len(surviving) > target_k:
        importances = fit_forest(X[:, surviving], y, n_trees=n_trees, seed=seed,
                                 n_jobs=n_jobs).feature_importances
        lowest = importances.min()
        # highest surviving index among the tied minima
        drop_pos = max(i for i, v in enumerate(importances) if v == lowest)
        dropped = surviving.pop(drop_pos)
        trace.append(dropped)
        scores[dropped] = len(trace)
        logger.debug("RFE round %d: dropped feature %d", len(trace), dropped)

    final = fit_forest(X[:, surviving], y, n_trees=n_trees, seed=seed, n_jobs=n_jobs).feature_importances
    for pos, f in enumerate(surviving):
        scores[f] = len(trace) + 1 + final[pos]

    ranking = _stable_ranking(scores)
    selected = [f for f in ranking if f in surviving]
    return SelectionResult(method='rfe', selected=selected, scores=scores, ranking=ranking,
                           trace=trace)


def select_ensemble(X: np.ndarray, y: np.ndarray, target_k: int = DEFAULT_TARGET_K, seed: int = 0,
                    n_jobs: Optional[int] = None) -> SelectionResult:
    """Majority vote of correlation, MI and RFE selections.

    Ties on votes go to the lower mean normalized rank, then the lower index.
    """
    X, y = _check_inputs(X, y)
    n_features = X.shape[1]
    results = [
        select_correlation(X, y, target_k=target_k),
        select_mutual_info(X, y, target_k=target_k),
        select_rfe(X, y, target_k=target_k, seed=seed, n_jobs=n_jobs),
    ]

    votes = np.zeros(n_features, dtype=np.int64)
    rank_sum = np.zeros(n_features)
    scale = max(n_features - 1, 1)
    for result in results:
        votes[result.selected] += 1
        for position, f in enumerate(result.ranking):
            rank_sum[f] += position / scale
    mean_rank = rank_sum / len(results)

    ranking = sorted(range(n_features), key=lambda f: (-votes[f], mean_rank[f], f))
    selected = ranking[:min(target_k, n_features)]
    return SelectionResult(method='ensemble', selected=selected, scores=votes.astype(np.float64),
                           ranking=ranking, votes=votes)


def select_features(X: np.ndarray, y: np.ndarray, method: str = 'ensemble',
                    target_k: int = DEFAULT_TARGET_K, seed: int = 0,
                    feature_names: Optional[Sequence[str]] = None,
                    n_jobs: Optional[int] = None) -> SelectionResult:
    """Dispatch to a selection method by tag.

    Raises:
        ConfigError: Unknown method
    """
    if method == 'correlation':
        result = select_correlation(X, y, target_k=target_k)
    elif method == 'mi':
        result = select_mutual_info(X, y, target_k=target_k)
    elif method == 'rfe':
        result = select_rfe(X, y, target_k=target_k, seed=seed, n_jobs=n_jobs)
    elif method == 'ensemble':
        result = select_ensemble(X, y, target_k=target_k, seed=seed, n_jobs=n_jobs)
    else:
        raise ConfigError(f"Unknown selection method: {method}", field='selection')
    if feature_names is not None:
        result.feature_names = list(feature_names)
    return result
