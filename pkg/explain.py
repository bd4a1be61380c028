"""
Author: Perry Radau
Date: 2025-03-15
Brief description: Kernel SHAP attributions over temporally aggregated windows with
                   per-subject and cohort-level importance summaries
Dependencies: Python 3.8+, numpy, scipy
Usage: attributions = explain_windows(params, background_x, instance_x, feature_names)
       summary = shap_summary(attributions)
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import comb

from errors import ContractError
from model import ModelParams, predict

logger = logging.getLogger(__name__)

ModelFunction = Callable[[np.ndarray], np.ndarray]

FULL_ENUMERATION_LIMIT = 12
SAMPLED_COALITIONS = 2048
RIDGE = 1e-8
CONDITION_LIMIT = 1e12
DEFAULT_BACKGROUND = 50
DEFAULT_INSTANCES = 100


@dataclass
class Attribution:
    """Shapley values of one instance.

    Attributes:
        feature_names: Names of the explained features
        phi: Per-feature contribution
        base_value: Model output at the background reference
        instance: Explained (aggregated) input vector
        prediction: Model output at the instance
    """
    feature_names: List[str]
    phi: np.ndarray
    base_value: float
    instance: np.ndarray
    prediction: float

    def efficiency_gap(self) -> float:
        """|sum(phi) + base_value - prediction|."""
        return abs(float(self.phi.sum()) + self.base_value - self.prediction)

    def to_dict(self) -> Dict:
        return {
            'feature_names': list(self.feature_names),
            'phi': self.phi.tolist(),
            'base_value': self.base_value,
            'instance': self.instance.tolist(),
            'prediction': self.prediction,
        }


@dataclass
class ShapSummary:
    """Ranked importance table.

    Attributes:
        feature_names: Feature order of the vectors below
        mean_abs: Mean |phi| per feature
        signed_mean: Mean phi per feature (impact direction)
        count: Attributions (or subject summaries) averaged
    """
    feature_names: List[str]
    mean_abs: np.ndarray
    signed_mean: np.ndarray
    count: int = 1
    subject_id: Optional[int] = None

    @property
    def ranking(self) -> List[int]:
        """Feature indices by decreasing mean |phi|, ties by index."""
        return sorted(range(len(self.feature_names)), key=lambda i: (-self.mean_abs[i], i))

    def rows(self) -> List[Dict]:
        return [{'feature': self.feature_names[i], 'mean_abs': float(self.mean_abs[i]),
                 'signed_mean': float(self.signed_mean[i])} for i in self.ranking]

    def top(self, n: int = 1) -> List[str]:
        return [self.feature_names[i] for i in self.ranking[:n]]


def aggregate_temporal(window: np.ndarray) -> np.ndarray:
    """Mean over the time axis: [w x F] -> [F] (or [N x w x F] -> [N x F])."""
    return np.asarray(window, dtype=np.float64).mean(axis=-2)


def broadcast(vector: np.ndarray, window: int) -> np.ndarray:
    """Constant-in-time window: [F] -> [w x F] (or [N x F] -> [N x w x F])."""
    vector = np.asarray(vector)
    return np.repeat(vector[..., np.newaxis, :], window, axis=-2)


def shapley_kernel_weight(n_features: int, size: int) -> float:
    """(F-1) / (C(F, s) s (F-s)); infinite for the empty and full coalitions."""
    if size in (0, n_features):
        return float('inf')
    return (n_features - 1) / (comb(n_features, size, exact=True) * size * (n_features - size))


def enumerate_coalitions(n_features: int) -> np.ndarray:
    """Every coalition except the empty and the full one, as 0/1 rows."""
    rows = [mask for mask in itertools.product((0, 1), repeat=n_features) if 0 < sum(mask) < n_features]
    return np.array(rows, dtype=np.float64).reshape(len(rows), n_features)


def sample_coalitions(n_features: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Coalitions drawn with probability proportional to the Shapley kernel.

    The size s is drawn with weight (F-1)/(s(F-s)), then members uniformly.
    """
    sizes = np.arange(1, n_features)
    size_weights = (n_features - 1) / (sizes * (n_features - sizes))
    drawn = rng.choice(sizes, size=n_samples, p=size_weights / size_weights.sum())
    masks = np.zeros((n_samples, n_features))
    for row, size in enumerate(drawn):
        masks[row, rng.choice(n_features, size=size, replace=False)] = 1.0
    return masks


def solve_constrained_wls(coalitions: np.ndarray, weights: np.ndarray, values: np.ndarray,
                          total: float) -> np.ndarray:
    """Weighted least squares for phi subject to sum(phi) = total.

    Args:
        coalitions: Binary masks [M x F]
        weights: Kernel weight per mask [M]
        values: v(z) - v(empty) per mask [M]
        total: v(full) - v(empty)

    Returns:
        phi [F]
    """
    n_features = coalitions.shape[1]
    weighted = coalitions * weights[:, np.newaxis]
    A = coalitions.T @ weighted
    b = weighted.T @ values
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > CONDITION_LIMIT:
        logger.warning("Kernel SHAP system is singular; solving with ridge %.0e", RIDGE)
        A = A + RIDGE * np.eye(n_features)
    ones = np.ones(n_features)
    A_inv_b = np.linalg.solve(A, b)
    A_inv_1 = np.linalg.solve(A, ones)
    correction = (ones @ A_inv_b - total) / (ones @ A_inv_1)
    return A_inv_b - correction * A_inv_1


def kernel_shap(model_fn: ModelFunction, background: np.ndarray, instances: np.ndarray,
                feature_names: Optional[Sequence[str]] = None, n_coalitions: Optional[int] = None,
                seed: int = 0) -> List[Attribution]:
    """Kernel SHAP with the background mean as the absent-feature reference.

    Full enumeration when F <= 12 (unless ``n_coalitions`` is given), otherwise
    ``n_coalitions`` (default 2048) kernel-sampled coalitions. Empty and full
    coalitions enter through the efficiency constraint.

    Args:
        model_fn: Maps [N x F] to [N] outputs; must be deterministic
        background: Reference rows [B x F]
        instances: Rows to explain [N x F]
        feature_names: Defaults to x0, x1, ...
        n_coalitions: Sampled coalition count
        seed: Coalition sampling seed

    Returns:
        One Attribution per instance
    """
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    instances = np.atleast_2d(np.asarray(instances, dtype=np.float64))
    n_features = background.shape[1]
    if n_features < 1 or instances.shape[1] != n_features:
        raise ContractError(f"kernel_shap: background has {n_features} features, "
                            f"instances have {instances.shape[1]}")
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(n_features)]
    if len(names) != n_features:
        raise ContractError("kernel_shap: feature_names length differs from the feature count")

    reference = background.mean(axis=0)
    base_value = float(np.asarray(model_fn(reference[np.newaxis, :]), dtype=np.float64).ravel()[0])

    if n_features == 1:
        coalitions, weights = np.zeros((0, 1)), np.zeros(0)
    elif n_coalitions is None and n_features <= FULL_ENUMERATION_LIMIT:
        coalitions = enumerate_coalitions(n_features)
        sizes = coalitions.sum(axis=1).astype(int)
        weights = np.array([shapley_kernel_weight(n_features, s) for s in sizes])
    else:
        rng = np.random.default_rng(seed)
        coalitions = sample_coalitions(n_features, n_coalitions or SAMPLED_COALITIONS, rng)
        weights = np.ones(coalitions.shape[0])

    attributions = []
    for instance in instances:
        prediction = float(np.asarray(model_fn(instance[np.newaxis, :]), dtype=np.float64).ravel()[0])
        total = prediction - base_value
        if n_features == 1:
            phi = np.array([total])
        else:
            masked = np.where(coalitions > 0, instance, reference)
            values = np.asarray(model_fn(masked), dtype=np.float64).ravel() - base_value
            phi = solve_constrained_wls(coalitions, weights, values, total)
        attributions.append(Attribution(feature_names=names, phi=phi, base_value=base_value,
                                        instance=instance.copy(), prediction=prediction))
    return attributions


def model_function(params: ModelParams, window: int, horizon_index: int = 0) -> ModelFunction:
    """Explained function: aggregated vectors -> constant windows -> one forecast entry."""
    dtype = next(iter(params.weights.values())).dtype

    def evaluate(vectors: np.ndarray) -> np.ndarray:
        return predict(params, broadcast(vectors, window).astype(dtype))[:, horizon_index]

    return evaluate


def explain_windows(params: ModelParams, background_windows: np.ndarray, instance_windows: np.ndarray,
                    feature_names: Sequence[str], n_background: int = DEFAULT_BACKGROUND,
                    n_instances: int = DEFAULT_INSTANCES, seed: int = 0,
                    n_coalitions: Optional[int] = None) -> List[Attribution]:
    """Kernel SHAP on model windows after temporal aggregation.

    Background and instances are drawn without replacement (seeded) when more
    windows are available than requested.
    """
    rng = np.random.default_rng(seed)

    def draw(windows: np.ndarray, count: int) -> np.ndarray:
        if len(windows) <= count:
            return windows
        return windows[np.sort(rng.choice(len(windows), size=count, replace=False))]

    background = aggregate_temporal(draw(background_windows, n_background))
    instances = aggregate_temporal(draw(instance_windows, n_instances))
    window = background_windows.shape[1]
    logger.info("Explaining %d windows against %d background rows", len(instances), len(background))
    return kernel_shap(model_function(params, window), background, instances, feature_names,
                       n_coalitions=n_coalitions, seed=seed)


def shap_summary(attributions: Sequence[Attribution], subject_id: Optional[int] = None) -> ShapSummary:
    """Mean |phi| and mean signed phi over attributions."""
    if not attributions:
        raise ContractError("shap_summary needs at least one attribution")
    phi = np.stack([a.phi for a in attributions])
    return ShapSummary(feature_names=list(attributions[0].feature_names), mean_abs=np.abs(phi).mean(axis=0),
                       signed_mean=phi.mean(axis=0), count=len(attributions), subject_id=subject_id)


def cohort_summary(summaries: Sequence[ShapSummary]) -> ShapSummary:
    """Average of subject-level summaries (each subject weighs equally).

    Summaries may cover different feature subsets; a feature a subject's model
    never saw contributes zero for that subject. Names keep first-seen order.
    """
    if not summaries:
        raise ContractError("cohort_summary needs at least one subject summary")
    names: List[str] = []
    for summary in summaries:
        names.extend(n for n in summary.feature_names if n not in names)
    position = {name: i for i, name in enumerate(names)}
    mean_abs = np.zeros((len(summaries), len(names)))
    signed = np.zeros((len(summaries), len(names)))
    for row, summary in enumerate(summaries):
        columns = [position[n] for n in summary.feature_names]
        mean_abs[row, columns] = summary.mean_abs
        signed[row, columns] = summary.signed_mean
    return ShapSummary(feature_names=names, mean_abs=mean_abs.mean(axis=0),
                       signed_mean=signed.mean(axis=0), count=len(summaries))
